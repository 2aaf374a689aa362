import math

import numpy as np
import pytest

from reganet import tensor as T
from reganet.attention import NetworkConfig, build_network
from reganet.config import ConfigError, TrainConfig
from reganet.data import gen_synthetic
from reganet.tensor import Tensor
from reganet.train import (SGD, MissingGradError, evaluate, lr_at, sgd_step, topk_accuracy, train)


def tiny_net(**kw):
    base = dict(stage_widths=(4, 8, 8, 8), blocks_per_stage=1, rg_blocks=1, num_classes=8, input=(1, 16, 16))
    base.update(kw)
    return NetworkConfig(**base)


def tiny_train_cfg(**kw):
    base = dict(epochs=2, batch_size=16, train_per_class=8, val_per_class=4, network=tiny_net())
    base.update(kw)
    return TrainConfig(**base)


def test_vanilla_step():
    w = Tensor(1.0, requires_grad=True)
    w.grad = np.asarray(1.0)
    sgd_step({"w": w}, TrainConfig(lr=0.1, momentum=0.0, weight_decay=0.0), epoch=0)
    assert w.item() == pytest.approx(0.9, abs=1e-15)
    assert w.grad is None


def test_momentum_recurrence():
    w = Tensor(0.0, requires_grad=True)
    opt = SGD({"w": w}, TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    seen = []
    for _ in range(2):
        w.grad = np.asarray(1.0)
        opt.step(0)
        seen.append(w.item())
    assert seen == pytest.approx([-0.1, -0.29], abs=1e-15)


def test_weight_decay_term():
    w = Tensor(2.0, requires_grad=True)
    w.grad = np.asarray(0.0)
    sgd_step({"w": w}, TrainConfig(lr=0.5, momentum=0.0, weight_decay=0.1), epoch=0)
    assert w.item() == pytest.approx(2.0 - 0.5 * 0.2)


def test_step_decay_schedule():
    cfg = TrainConfig(lr=0.01, lr_step=30)
    assert lr_at(cfg, 0) == 0.01 and lr_at(cfg, 29) == 0.01
    assert lr_at(cfg, 30) == 0.01 / 10
    for e in range(0, 100, 7):
        assert lr_at(cfg, e) == cfg.lr / 10 ** math.floor(e / cfg.lr_step)


def test_missing_grads_listed():
    a, b = Tensor(1.0, requires_grad=True), Tensor(1.0, requires_grad=True)
    a.grad = np.asarray(1.0)
    with pytest.raises(MissingGradError, match="b"):
        sgd_step({"a": a, "b": b}, TrainConfig(), 0)


def test_quadratic_bowl_converges():
    target = np.array([1.5, -2.0, 0.25])
    w = Tensor(np.zeros(3), requires_grad=True)
    opt = SGD({"w": w}, TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    for _ in range(500):
        T.tsum(T.square(T.sub(w, target))).backward()
        opt.step(0)
    assert np.abs(w.data - target).max() < 1e-6


def test_clamp_runs_after_step():
    model = build_network(tiny_net(attention_at={"L4"}), seed=0)
    params = model.parameters()
    for name, p in params.items():
        p.grad = np.zeros_like(p.data)
        if name.endswith("sigma_raw"):
            p.grad[...] = -1e6
    sgd_step(params, TrainConfig(lr=1.0, momentum=0.0, weight_decay=0.0), 0, after_step=model.after_step)
    bank = next(iter(model.kernel_banks().values()))
    assert bank.params.sigma.max() <= 1e3 + 1e-9


def test_topk_one_hot_is_perfect():
    labels = np.arange(20) % 7
    logits = np.eye(7)[labels]
    assert topk_accuracy(logits, labels, 1) == 100.0
    assert topk_accuracy(logits, labels, 5) == 100.0


def test_topk_random_logits_binomial_band():
    r = np.random.default_rng(0)
    labels = np.arange(10000) % 10
    top1 = topk_accuracy(r.standard_normal((10000, 10)), labels, 1)
    # Binomial(10000, 0.1): sd = 0.3 points, band is over 6 sd wide
    assert 8.0 <= top1 <= 12.0
    assert topk_accuracy(r.standard_normal((10000, 10)), labels, 5) >= top1


def test_topk_ties_prefer_lower_index_and_cap():
    logits = np.zeros((2, 3))
    assert topk_accuracy(logits, np.array([0, 0]), 1) == 100.0
    assert topk_accuracy(logits, np.array([1, 2]), 1) == 0.0
    assert topk_accuracy(logits, np.array([1, 2]), 5) == 100.0


def test_evaluate_shape_mismatch():
    model = build_network(tiny_net(), seed=0)
    ds = gen_synthetic(0, 2, size=32)
    with pytest.raises(T.ShapeError):
        evaluate(model, ds)


def test_train_smoke_loss_decreases():
    decreased = 0
    for seed in range(5):
        res = train(tiny_train_cfg(seed=seed), save=False)
        l1, l2 = res.metrics.rows[0].loss, res.metrics.rows[1].loss
        assert math.isfinite(l1) and math.isfinite(l2)
        decreased += l2 < l1
    assert decreased >= 4
    for row in res.metrics.rows:
        assert row.top1 <= row.top5


def test_train_determinism():
    cfg = tiny_train_cfg(epochs=1, max_steps=10, wall_clock=False, network=tiny_net(attention_at={"L4"}))
    a = train(cfg, save=False).metrics
    b = train(cfg, save=False).metrics
    assert a.to_csv() == b.to_csv()
    assert len(a.step_losses) == 4  # 64 samples / 16 per batch
    assert np.array(a.step_losses).tobytes() == np.array(b.step_losses).tobytes()


def test_train_writes_outputs(tmp_path):
    res = train(tiny_train_cfg(epochs=1), out_dir=tmp_path)
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "epoch,loss,top1,top5,seconds"
    assert (tmp_path / "best.rgkp").exists() and (tmp_path / "best.rgkp.cfg").exists()
    assert (tmp_path / "config.txt").exists()
    assert res.checkpoint == tmp_path / "best.rgkp"


def test_dataset_config_mismatch_fails_before_training():
    cfg = tiny_train_cfg(network=tiny_net(num_classes=4))
    ds = gen_synthetic(0, 2, classes=8, size=16)
    with pytest.raises(ConfigError, match="classes"):
        train(cfg, datasets=(ds, ds), save=False)
    wrong_size = gen_synthetic(0, 2, classes=4, size=32)
    with pytest.raises(ConfigError, match="images"):
        train(cfg, datasets=(wrong_size, wrong_size), save=False)


def test_invalid_train_config():
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1).validate()
    with pytest.raises(ConfigError):
        TrainConfig(data_source="imagenet").validate()
