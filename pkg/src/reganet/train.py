"""SGD with momentum and step decay, the training loop, and top-k evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .attention import Model, build_network
from .config import ConfigError, TrainConfig, train_config_to_mapping, write_config
from .data import DatasetHandle, gen_synthetic, load_idx_dataset
from .tensor import Tensor

log = logging.getLogger(__name__)


class MissingGradError(RuntimeError):
    pass


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr / 10 ** (epoch // cfg.lr_step)


class SGD:
    """Classic momentum: v <- mu v + (g + wd w); w <- w - lr(epoch) v."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig, after_step=None):
        self.params = params
        self.cfg = cfg
        self.after_step = after_step
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, epoch: int) -> None:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGradError(f"no gradient for: {', '.join(missing)}")
        lr = lr_at(self.cfg, epoch)
        mu, wd = self.cfg.momentum, self.cfg.weight_decay
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= mu
            v += p.grad + wd * p.data
            p.data -= lr * v
            p.grad = None
        if self.after_step is not None:
            self.after_step()


def sgd_step(params: dict[str, Tensor], cfg: TrainConfig, epoch: int,
             velocity: dict[str, np.ndarray] | None = None, after_step=None) -> dict[str, np.ndarray]:
    """Functional form of one SGD update; returns the (updated) velocity state."""
    opt = SGD(params, cfg, after_step)
    if velocity is not None:
        opt.velocity = velocity
    opt.step(epoch)
    return opt.velocity


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Percentage of rows whose label is among the k largest logits.

    Ties are broken toward the lower class index; k is capped at the class count.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = min(k, logits.shape[1])
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hit = (order == labels[:, None]).any(axis=1)
    return float(100.0 * hit.mean())


def predict(model: Model, images: np.ndarray, batch_size: int = 100) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        chunks = [model(Tensor(images[i:i + batch_size])).data
                  for i in range(0, len(images), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(chunks)


def evaluate(model: Model, dataset: DatasetHandle) -> tuple[float, float]:
    if dataset.image_shape != model.cfg.input:
        raise T.ShapeError(f"dataset images {dataset.image_shape} do not match network input {model.cfg.input}")
    if dataset.num_classes > model.cfg.num_classes:
        raise T.ShapeError(f"dataset has {dataset.num_classes} classes, network only {model.cfg.num_classes}")
    logits = predict(model, dataset.images)
    return topk_accuracy(logits, dataset.labels, 1), topk_accuracy(logits, dataset.labels, 5)


@dataclass
class MetricsRow:
    epoch: int
    loss: float
    top1: float
    top5: float
    seconds: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    HEADER = "epoch,loss,top1,top5,seconds"

    def to_csv(self) -> str:
        lines = [self.HEADER]
        lines += [f"{r.epoch},{r.loss:.10f},{r.top1:.4f},{r.top5:.4f},{r.seconds:.3f}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class TrainResult:
    metrics: MetricsLog
    model: Model
    best_top1: float
    checkpoint: Path | None


def load_datasets(cfg: TrainConfig) -> tuple[DatasetHandle, DatasetHandle]:
    classes = cfg.network.num_classes
    if cfg.data_source == "synthetic":
        size = cfg.network.input[1]
        common = dict(classes=classes, size=size, period=cfg.data_period, contrast=cfg.data_contrast)
        train = gen_synthetic(cfg.data_seed, cfg.train_per_class, split="train", **common)
        val = gen_synthetic(cfg.data_seed + 1_000_003, cfg.val_per_class, split="val", **common)
        return train, val
    train = load_idx_dataset(cfg.train_images, cfg.train_labels, classes, "train")
    val = load_idx_dataset(cfg.val_images, cfg.val_labels, classes, "val")
    return train, val


def check_compatible(cfg: TrainConfig, *datasets: DatasetHandle) -> None:
    for ds in datasets:
        if ds.image_shape != cfg.network.input:
            raise ConfigError(f"{ds.split} images are {ds.image_shape}, net.input is {cfg.network.input}")
        if ds.num_classes != cfg.network.num_classes:
            raise ConfigError(f"{ds.split} set has {ds.num_classes} classes, net.num_classes is {cfg.network.num_classes}")


def train(cfg: TrainConfig, datasets: tuple[DatasetHandle, DatasetHandle] | None = None,
          out_dir=None, save: bool = True, model: Model | None = None) -> TrainResult:
    """Train with the configured SGD schedule, evaluating on the val split each epoch.

    Writes ``metrics.csv``, ``config.txt`` and the best-top-1 ``best.rgkp`` to
    ``out_dir`` when ``save`` is set.
    """
    cfg.validate()
    train_set, val_set = datasets if datasets is not None else load_datasets(cfg)
    check_compatible(cfg, train_set, val_set)
    model = model if model is not None else build_network(cfg.network, seed=cfg.seed)
    params = model.parameters()
    opt = SGD(params, cfg, after_step=model.after_step)
    rng = np.random.default_rng([cfg.seed, 3])
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    ckpt_path = out / "best.rgkp" if save else None
    if save:
        out.mkdir(parents=True, exist_ok=True)
        write_config(out / "config.txt", train_config_to_mapping(cfg))

    metrics = MetricsLog()
    best = -1.0
    step = 0
    n = len(train_set)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = T.cross_entropy(model(Tensor(train_set.images[idx])), train_set.labels[idx])
            loss.backward()
            opt.step(epoch)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"loss became non-finite at step {step}")
            metrics.step_losses.append(value)
            total += value * len(idx)
            count += len(idx)
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                break
        top1, top5 = evaluate(model, val_set)
        seconds = time.perf_counter() - t0 if cfg.wall_clock else 0.0
        metrics.rows.append(MetricsRow(epoch, total / count, top1, top5, seconds))
        log.info("epoch %d loss %.4f top1 %.2f top5 %.2f (%.1fs)", epoch, total / count, top1, top5, seconds)
        if top1 > best:
            best = top1
            if save:
                checkpoint.save(model, ckpt_path)
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if save:
        metrics.write(out / "metrics.csv")
    return TrainResult(metrics, model, best, ckpt_path)
