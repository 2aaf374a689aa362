"""Central-difference gradient checks for the Gabor, kernel, conv and network paths."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import NetworkConfig, build_network
from .gabor import GaborParams, gabor_real
from .mask import build_mask
from .regaconv import build_kernel, init_bank
from .tensor import Tensor

TARGETS = ("gabor", "kernel", "conv", "network")


@dataclass
class GroupResult:
    name: str
    max_rel_err: float
    probes: int
    tol: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_rel_err) and self.max_rel_err <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name:<22} max_rel_err={self.max_rel_err:.3e}  probes={self.probes}  tol={self.tol:g}{extra}"


@dataclass
class Report:
    target: str
    groups: list[GroupResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.groups) and all(g.passed for g in self.groups)

    def max_rel_err(self) -> float:
        return max(g.max_rel_err for g in self.groups)

    def text(self) -> str:
        head = f"gradcheck {self.target}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + ["  " + g.line() for g in self.groups])


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def central_difference(loss_fn: Callable[[], Tensor], leaf: Tensor, idx, eps: float) -> float:
    orig = leaf.data[idx]
    leaf.data[idx] = orig + eps
    up = loss_fn().item()
    leaf.data[idx] = orig - eps
    down = loss_fn().item()
    leaf.data[idx] = orig
    return (up - down) / (2 * eps)


def check_probes(loss_fn: Callable[[], Tensor], probes: dict[str, list[tuple[Tensor, tuple]]],
                 eps: float, tol: float) -> list[GroupResult]:
    """Compare analytic and numeric derivatives for each (leaf, index) probe."""
    leaves = {id(leaf): leaf for plist in probes.values() for leaf, _ in plist}
    for leaf in leaves.values():
        leaf.grad = None
    loss_fn().backward()
    analytic = {k: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data))
                for k, leaf in leaves.items()}
    results = []
    for group, plist in probes.items():
        worst = 0.0
        for leaf, idx in plist:
            numeric = central_difference(loss_fn, leaf, idx, eps)
            if not math.isfinite(numeric):
                worst = math.inf
                continue
            worst = max(worst, relative_error(float(analytic[id(leaf)][idx]), numeric))
        results.append(GroupResult(group, worst, len(plist), tol))
    for leaf in leaves.values():
        leaf.grad = None
    return results


def _pick(rng: np.random.Generator, leaf: Tensor, count: int) -> list[tuple[Tensor, tuple]]:
    flat = rng.choice(leaf.data.size, size=min(count, leaf.data.size), replace=False)
    return [(leaf, np.unravel_index(int(i), leaf.shape)) for i in sorted(flat)]


def random_gabor_params(rng: np.random.Generator) -> GaborParams:
    return GaborParams.create(omega=rng.uniform(0.2, 2.0), phi=rng.uniform(0, math.pi),
                              sigma=rng.uniform(0.8, 5.0), theta=rng.uniform(0, 2 * math.pi))


def check_gabor(seed: int = 0, draws: int = 50, eps: float = 1e-5, tol: float = 1e-4) -> Report:
    rng = np.random.default_rng(seed)
    names = ("omega_raw", "phi", "sigma_raw", "theta")
    worst = dict.fromkeys(names, 0.0)
    for _ in range(draws):
        p = random_gabor_params(rng)
        x, y = rng.uniform(-3, 3, size=2)
        leaves = p.leaves()
        probes = {name: [(leaves[name], ())] for name in names}
        for g in check_probes(lambda: gabor_real(x, y, p), probes, eps, tol):
            worst[g.name] = max(worst[g.name], g.max_rel_err)
    return Report("gabor", [GroupResult(f"gabor.{n}", worst[n], draws, tol) for n in names])


def check_kernel(seed: int = 0, cin: int = 2, cout: int = 3, per_group: int = 6,
                 eps: float = 1e-5, tol: float = 1e-4) -> Report:
    rng = np.random.default_rng(seed)
    bank = init_bank(cin, cout, build_mask(7), seed)
    weights = rng.standard_normal((cout, cin, 7, 7))

    def loss():
        return T.tsum(T.mul(build_kernel(bank), weights))

    leaves = bank.leaves()
    probes = {f"kernel.{name}": _pick(rng, leaf, per_group) for name, leaf in leaves.items()}
    groups = check_probes(loss, probes, eps, tol)
    # masked cells are constants: perturbing every parameter leaves them at zero
    zero = bank.mask.base.cells == 0
    for leaf in leaves.values():
        leaf.data += rng.normal(0, 0.3, leaf.shape)
    bank.clamp_()
    k = build_kernel(bank).data
    leak = float(np.abs(k[:, :, zero]).max()) if zero.any() else 0.0
    groups.append(GroupResult("kernel.masked_cells", leak, int(zero.sum()) * cin * cout, 0.0,
                              note="masked taps must stay exactly 0"))
    return Report("kernel", groups)


def check_conv(seed: int = 0, per_group: int = 10, eps: float = 1e-5, tol: float = 1e-4) -> Report:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 1, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 1, 3, 3)), requires_grad=True)

    def loss():
        return T.tsum(T.sigmoid(T.conv2d(x, w, 1, 1)))

    probes = {"conv.input": _pick(rng, x, per_group), "conv.kernel": _pick(rng, w, per_group)}
    return Report("conv", check_probes(loss, probes, eps, tol))


def micro_network_config() -> NetworkConfig:
    return NetworkConfig(stage_widths=(8, 8, 8, 8), blocks_per_stage=1, fusion=True,
                         rg_blocks=2, num_classes=4, input=(3, 16, 16))


def check_network(seed: int = 0, gabor_probes: int = 20, per_group: int = 8,
                  eps: float = 1e-5, tol: float = 1e-3) -> Report:
    """Cross-entropy of the fusion-mode micro-network against sampled leaves."""
    rng = np.random.default_rng(seed)
    model = build_network(micro_network_config(), seed=seed)
    model.train()
    x = rng.random((1, 3, 16, 16))
    label = np.array([int(rng.integers(4))])

    def loss():
        return T.cross_entropy(model(Tensor(x)), label)

    params = model.parameters()
    gabor = [(name, leaf) for name, leaf in params.items() if ".bank." in name]
    pool = [(leaf, np.unravel_index(int(i), leaf.shape))
            for _, leaf in gabor for i in range(leaf.data.size)]
    chosen = rng.choice(len(pool), size=gabor_probes, replace=False)
    probes: dict[str, list] = {"gabor.omega_raw": [], "gabor.phi": [], "gabor.sigma_raw": [], "gabor.theta": []}
    for i in sorted(chosen):
        leaf, idx = pool[i]
        probes[f"gabor.{leaf.name}"].append((leaf, idx))
    probes = {k: v for k, v in probes.items() if v}

    def collect(pred):
        out = []
        for name, leaf in params.items():
            if pred(name):
                out += _pick(rng, leaf, 2)
        sel = rng.permutation(len(out))[:per_group]
        return [out[i] for i in sorted(sel)]

    probes["conv.weights"] = collect(lambda n: n.endswith("weight") and ("conv" in n or "short" in n or n.startswith("stem")))
    probes["bn.affine"] = collect(lambda n: n.endswith(".gamma") or n.endswith(".beta"))
    probes["fusion.conv"] = _pick(rng, params["fusion_head.proj.weight"], per_group)
    return Report("network", check_probes(loss, probes, eps, tol))


def run(target: str, seed: int = 0, eps: float = 1e-5, tol: float | None = None) -> Report:
    if target == "gabor":
        return check_gabor(seed, eps=eps, tol=tol or 1e-4)
    if target == "kernel":
        return check_kernel(seed, eps=eps, tol=tol or 1e-4)
    if target == "conv":
        return check_conv(seed, eps=eps, tol=tol or 1e-4)
    if target == "network":
        return check_network(seed, eps=eps, tol=tol or 1e-3)
    raise ValueError(f"unknown gradcheck target {target!r}; choose from {', '.join(TARGETS)}")
