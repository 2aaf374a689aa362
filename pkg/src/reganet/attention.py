"""Rega attention gate, multi-scale fusion head, and the small residual backbone."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .mask import RetinaMask, Variant, build_mask
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .regaconv import RegaKernelBank, init_bank, rega_conv
from .tensor import ShapeError, Tensor

STAGES = ("L1", "L2", "L3", "L4")


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class RGBlock(Module):
    """RegaConv followed by BatchNorm and ReLU; channel count is preserved."""

    def __init__(self, channels: int, mask: RetinaMask, seed: int, position: int = 0):
        self.bank = init_bank(channels, channels, mask, seed)
        self.bn = BatchNorm2d(channels)
        self.position = position

    def own_parameters(self):
        for name, leaf in self.bank.leaves().items():
            yield f"bank.{name}", leaf

    def after_step(self) -> None:
        self.bank.clamp_()

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(rega_conv(x, self.bank)))


class RegaAttentionModule(Module):
    def __init__(self, channels: int, rg_blocks: int = 2, mask: RetinaMask | None = None, seed: int = 0):
        if rg_blocks < 1:
            raise ValueError(f"rg_blocks must be >= 1, got {rg_blocks}")
        mask = mask if mask is not None else build_mask(7)
        self.channels = channels
        self.blocks = [RGBlock(channels, mask, _derive_seed(seed, k), k) for k in range(rg_blocks)]

    def stack(self, f: Tensor) -> Tensor:
        for block in self.blocks:
            f = block(f)
        return f

    def forward(self, f: Tensor) -> Tensor:
        return rega_attention(f, self)


def rega_attention(f: Tensor, module: RegaAttentionModule) -> Tensor:
    """Gate in (0, 1): sigmoid of the pooled RG-stack response, shaped like ``f``."""
    f = T.as_tensor(f)
    if f.ndim != 4 or f.shape[1] != module.channels:
        raise ShapeError(f"rega_attention: input {f.shape} does not have {module.channels} channels")
    _, _, h, w = f.shape
    return T.sigmoid(T.adaptive_avg_pool2d(module.stack(f), h, w))


def apply_attention(f: Tensor, gate: Tensor) -> Tensor:
    f, gate = T.as_tensor(f), T.as_tensor(gate)
    if f.shape != gate.shape:
        raise ShapeError(f"apply_attention: feature {f.shape} and gate {gate.shape} differ")
    return T.mul(f, gate)


class FusionHead(Module):
    """Pool early attention maps down to the deepest stage, concat, project 1x1."""

    def __init__(self, c1: int, c2: int, c4: int, rng: np.random.Generator | None = None,
                 weight: np.ndarray | None = None):
        fin = c1 + c2 + c4
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = rng.standard_normal((c4, fin, 1, 1)) * math.sqrt(1.0 / fin)
        self.proj = Conv2d(fin, c4, 1, rng, weight=weight)

    def forward(self, r1: Tensor, r2: Tensor, c4: Tensor) -> Tensor:
        return fuse_multiscale(r1, r2, c4, self)


def fuse_multiscale(r1: Tensor, r2: Tensor, c4: Tensor, head: FusionHead) -> Tensor:
    r1, r2, c4 = T.as_tensor(r1), T.as_tensor(r2), T.as_tensor(c4)
    n, _, h4, w4 = c4.shape
    for name, part in (("R_C1", r1), ("R_C2", r2)):
        if part.shape[0] != n:
            raise ShapeError(f"fuse_multiscale: {name} batch {part.shape[0]} != {n}")
        if part.shape[2] < h4 or part.shape[3] < w4:
            raise ShapeError(f"fuse_multiscale: {name} spatial {part.shape[2:]} smaller than C4 {(h4, w4)}")
    parts = [T.adaptive_avg_pool2d(r1, h4, w4), T.adaptive_avg_pool2d(r2, h4, w4), c4]
    return head.proj(T.concat_channels(parts))


class ResidualUnit(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=1, padding=1)
        self.bn2 = BatchNorm2d(cout)
        self.short = None
        if stride != 1 or cin != cout:
            self.short = Conv2d(cin, cout, 1, rng, stride=stride)
            self.short_bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.short is None else self.short_bn(self.short(x))
        return T.relu(h + skip)


@dataclass
class NetworkConfig:
    stage_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    attention_at: frozenset = field(default_factory=frozenset)
    fusion: bool = False
    rg_blocks: int = 2
    num_classes: int = 8
    input: tuple[int, int, int] = (1, 32, 32)
    mask_size: int = 7
    mask_r1: float | None = None
    mask_variant: str = "hard"

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.input = tuple(int(v) for v in self.input)
        self.attention_at = frozenset(str(s).upper() for s in self.attention_at)

    def validate(self) -> "NetworkConfig":
        if len(self.stage_widths) != 4 or min(self.stage_widths) < 1:
            raise ValueError(f"stage_widths needs 4 positive widths, got {self.stage_widths}")
        if self.blocks_per_stage < 1 or self.rg_blocks < 1:
            raise ValueError("blocks_per_stage and rg_blocks must be >= 1")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input) != 3 or min(self.input) < 1:
            raise ValueError(f"input must be (channels, H, W), got {self.input}")
        unknown = self.attention_at - set(STAGES)
        if unknown:
            raise ValueError(f"unknown attention placement {sorted(unknown)}; choose from {STAGES}")
        if self.attention_at and self.fusion:
            raise ValueError("attention_at and fusion are mutually exclusive")
        _, h, w = self.input
        if min(h, w) < 8:
            raise ValueError(f"input {h}x{w} too small for three stride-2 stages")
        Variant.parse(self.mask_variant)
        return self

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


class Model(Module):
    def __init__(self, cfg: NetworkConfig, seed: int = 0, gabor_seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        gabor_seed = seed if gabor_seed is None else gabor_seed
        mask = build_mask(cfg.mask_size, cfg.mask_r1, cfg.mask_variant)
        rng = np.random.default_rng([seed, 0])
        w = cfg.stage_widths
        self.stem = Conv2d(cfg.input[0], w[0], 3, rng, padding=1)
        self.stem_bn = BatchNorm2d(w[0])
        self.stages = []
        cin = w[0]
        for s, cout in enumerate(w):
            units = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if s > 0 and b == 0 else 1
                units.append(ResidualUnit(cin, cout, stride, rng))
                cin = cout
            self.stages.append(_Stage(units))

        taps = sorted(cfg.attention_at) if not cfg.fusion else ["L1", "L2"]
        self.attention = {}
        for tag in taps:
            s = STAGES.index(tag)
            self.attention[tag] = RegaAttentionModule(w[s], cfg.rg_blocks, mask, _derive_seed(gabor_seed, s))
        self.fusion_head = FusionHead(w[0], w[1], w[3], np.random.default_rng([seed, 2])) if cfg.fusion else None
        self.fc = Linear(w[3], cfg.num_classes, np.random.default_rng([seed, 1]))

    def features(self, x: Tensor) -> list[Tensor]:
        """Stage outputs C1..C4 (after any single-structure attention)."""
        h = T.relu(self.stem_bn(self.stem(x)))
        outs = []
        for tag, stage in zip(STAGES, self.stages):
            h = stage(h)
            if not self.cfg.fusion and tag in self.attention:
                h = apply_attention(h, self.attention[tag](h))
            outs.append(h)
        return outs

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.cfg.input:
            raise ShapeError(f"model expects N x {self.cfg.input}, got {x.shape}")
        c1, c2, _, c4 = self.features(x)
        h = c4
        if self.cfg.fusion:
            r1 = apply_attention(c1, self.attention["L1"](c1))
            r2 = apply_attention(c2, self.attention["L2"](c2))
            h = self.fusion_head(r1, r2, c4)
        n, c = h.shape[:2]
        pooled = T.adaptive_avg_pool2d(h, 1, 1).reshape(n, c)
        return self.fc(pooled)

    def kernel_banks(self) -> dict[str, RegaKernelBank]:
        return {f"{tag}.{k}": block.bank
                for tag, mod in self.attention.items()
                for k, block in enumerate(mod.blocks)}


class _Stage(Module):
    def __init__(self, units):
        self.units = units

    def forward(self, x: Tensor) -> Tensor:
        for u in self.units:
            x = u(x)
        return x


def build_network(cfg: NetworkConfig, seed: int = 0, gabor_seed: int | None = None) -> Model:
    return Model(cfg, seed, gabor_seed)
