import itertools

import numpy as np
import pytest

from reganet import tensor as T
from reganet.attention import (FusionHead, NetworkConfig, RegaAttentionModule, apply_attention,
                               build_network, fuse_multiscale, rega_attention)
from reganet.gradcheck import check_network
from reganet.regaconv import rega_conv
from reganet.tensor import ShapeError, Tensor


def small_cfg(**kw):
    base = dict(stage_widths=(8, 8, 16, 16), blocks_per_stage=1, num_classes=4, input=(3, 16, 16))
    base.update(kw)
    return NetworkConfig(**base)


def test_gate_shape_and_range(rng):
    mod = RegaAttentionModule(16, rg_blocks=2, seed=1)
    f = Tensor(rng.standard_normal((2, 16, 32, 32)))
    gate = rega_attention(f, mod)
    assert gate.shape == f.shape
    assert np.all((gate.data > 0) & (gate.data < 1))


def test_zero_final_gamma_gives_half_gate(rng):
    mod = RegaAttentionModule(4, rg_blocks=2, seed=0)
    mod.blocks[-1].bn.gamma.data[...] = 0.0
    mod.blocks[-1].bn.beta.data[...] = 0.0
    f = Tensor(rng.standard_normal((2, 4, 6, 6)))
    gate = rega_attention(f, mod)
    np.testing.assert_array_equal(gate.data, 0.5)
    np.testing.assert_array_equal(apply_attention(f, gate).data, f.data / 2)


def test_gate_matches_step_by_step_composition(rng):
    mod = RegaAttentionModule(3, rg_blocks=2, seed=4)
    x = rng.standard_normal((2, 3, 7, 7))
    h = Tensor(x)
    for blk in mod.blocks:
        conv = rega_conv(h, blk.bank)
        bn = T.batch_norm2d(conv, blk.bn.gamma, blk.bn.beta, np.zeros(3), np.ones(3), True)
        h = T.relu(bn)
    expect = T.sigmoid(T.adaptive_avg_pool2d(h, 7, 7)).data
    np.testing.assert_allclose(rega_attention(Tensor(x), mod).data, expect, rtol=0, atol=1e-12)


def test_gate_channel_mismatch():
    with pytest.raises(ShapeError):
        rega_attention(Tensor(np.zeros((1, 3, 8, 8))), RegaAttentionModule(4))


def test_apply_attention_attenuates(rng):
    f = rng.standard_normal((3, 4, 5, 5))
    f[0, 0, 0, :] = 0.0
    gate = rng.uniform(1e-6, 1 - 1e-6, f.shape)
    out = apply_attention(Tensor(f), Tensor(gate)).data
    nz = f != 0
    assert np.all(np.abs(out[nz]) < np.abs(f[nz]))
    assert np.all(out[~nz] == 0)
    np.testing.assert_array_equal(apply_attention(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.full((1, 2, 3, 3), 0.3))).data, 0)
    with pytest.raises(ShapeError):
        apply_attention(Tensor(f), Tensor(gate[:, :2]))


def test_constant_gate_preserves_argmax(rng):
    f = rng.standard_normal((2, 3, 6, 6))
    out = apply_attention(Tensor(f), Tensor(np.full(f.shape, 0.37))).data
    flat = lambda a: np.abs(a).reshape(2, 3, -1).argmax(-1)  # noqa: E731
    np.testing.assert_array_equal(flat(out), flat(f))


def test_fusion_shape():
    head = FusionHead(16, 32, 128, np.random.default_rng(0))
    out = fuse_multiscale(Tensor(np.ones((1, 16, 32, 32))), Tensor(np.ones((1, 32, 16, 16))),
                          Tensor(np.ones((1, 128, 4, 4))), head)
    assert out.shape == (1, 128, 4, 4)


def test_fusion_selecting_c4_is_identity(rng):
    w = np.zeros((6, 2 + 3 + 6, 1, 1))
    w[np.arange(6), 5 + np.arange(6), 0, 0] = 1.0
    head = FusionHead(2, 3, 6, weight=w)
    c4 = rng.standard_normal((2, 6, 4, 4))
    out = fuse_multiscale(Tensor(rng.standard_normal((2, 2, 16, 16))),
                          Tensor(rng.standard_normal((2, 3, 8, 8))), Tensor(c4), head)
    np.testing.assert_array_equal(out.data, c4)


def test_fusion_matches_manual_composition(rng):
    r1, r2, c4 = rng.standard_normal((1, 2, 12, 12)), rng.standard_normal((1, 3, 6, 6)), rng.standard_normal((1, 4, 3, 3))
    head = FusionHead(2, 3, 4, np.random.default_rng(3))
    p1 = r1.reshape(1, 2, 3, 4, 3, 4).mean(axis=(3, 5))
    p2 = r2.reshape(1, 3, 3, 2, 3, 2).mean(axis=(3, 5))
    cat = np.concatenate([p1, p2, c4], axis=1)
    w = head.proj.weight.data[:, :, 0, 0]
    expect = np.einsum("oc,nchw->nohw", w, cat)
    got = fuse_multiscale(Tensor(r1), Tensor(r2), Tensor(c4), head).data
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)


def test_fusion_rejects_upsampling(rng):
    head = FusionHead(1, 1, 1, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        fuse_multiscale(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 4, 4))), head)


def test_baseline_forward_shape_and_finite(rng):
    model = build_network(NetworkConfig(input=(3, 32, 32), num_classes=10), seed=0)
    logits = model(Tensor(rng.random((1, 3, 32, 32))))
    assert logits.shape == (1, 10)
    assert np.all(np.isfinite(logits.data))


def test_parameter_count_audit():
    cfg = NetworkConfig()
    base = build_network(cfg, seed=0).num_parameters()
    with_l4 = build_network(cfg.with_(attention_at={"L4"}), seed=0).num_parameters()
    c4 = cfg.stage_widths[3]
    assert with_l4 - base == cfg.rg_blocks * (4 * c4 * c4 + 2 * c4)


def test_fusion_parameter_count():
    cfg = small_cfg()
    base = build_network(cfg).num_parameters()
    fused = build_network(cfg.with_(fusion=True)).num_parameters()
    c1, c2, _, c4 = cfg.stage_widths
    rg = cfg.rg_blocks
    assert fused - base == rg * (4 * c1 * c1 + 2 * c1) + rg * (4 * c2 * c2 + 2 * c2) + (c1 + c2 + c4) * c4


def test_baseline_ignores_gabor_seed(rng):
    x = Tensor(rng.random((2, 3, 16, 16)))
    a = build_network(small_cfg(), seed=3, gabor_seed=1)(x).data
    b = build_network(small_cfg(), seed=3, gabor_seed=999)(x).data
    assert a.tobytes() == b.tobytes()
    c = build_network(small_cfg(attention_at={"L4"}), seed=3, gabor_seed=1)(x).data
    d = build_network(small_cfg(attention_at={"L4"}), seed=3, gabor_seed=999)(x).data
    assert c.tobytes() != d.tobytes()


def test_attention_and_baseline_share_backbone_init():
    base = build_network(small_cfg(), seed=5).parameters()
    att = build_network(small_cfg(attention_at={"L2"}), seed=5).parameters()
    for name, p in base.items():
        assert p.data.tobytes() == att[name].data.tobytes()


@pytest.mark.parametrize("widths,tags,fusion", [
    (w, t, f) for w, t, f in itertools.product([8, 16], [(), ("L1",), ("L2",), ("L3",), ("L4",)], [False, True])
    if not (t and f)
])
def test_shape_closure_grid(rng, widths, tags, fusion):
    cfg = NetworkConfig(stage_widths=(widths,) * 4, blocks_per_stage=1, attention_at=set(tags),
                        fusion=fusion, rg_blocks=1, num_classes=3, input=(1, 16, 16))
    model = build_network(cfg, seed=1)
    loss = T.cross_entropy(model(Tensor(rng.random((2, 1, 16, 16)))), np.array([0, 2]))
    loss.backward()
    for name, p in model.parameters().items():
        assert p.grad is not None and p.grad.shape == p.shape, name


@pytest.mark.parametrize("kw", [
    dict(attention_at={"L4"}, fusion=True),
    dict(attention_at={"L5"}),
    dict(stage_widths=(8, 8, 8)),
    dict(num_classes=1),
    dict(rg_blocks=0),
    dict(input=(1, 4, 4)),
    dict(mask_variant="round"),
])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        build_network(small_cfg(**kw))


def test_end_to_end_gradcheck():
    report = check_network(seed=0)
    assert report.passed, report.text()
    assert sum(g.probes for g in report.groups if g.name.startswith("gabor")) == 20
