"""Command-line entry point: ``reganet <subcommand> [options] [--key=value ...]``.

Exit status is 0 on success, 1 on validation errors and 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint, gradcheck
from .config import ConfigError, read_config, train_config_from_mapping
from .data import gen_synthetic, to_idx_arrays, write_idx, load_idx_dataset
from .export import export_kernels
from .mask import build_mask
from .tensor import ShapeError
from .train import evaluate, train

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--train.lr=0.01`` / ``--train.lr 0.01`` into config entries."""
    out: dict[str, str] = {}
    it = iter(extra)
    for arg in it:
        if not arg.startswith("--") or "." not in arg.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"missing value for --{key}")
        out[key] = value
    return out


def _load_mapping(args) -> dict[str, str]:
    mapping = read_config(args.config) if args.config else {}
    mapping.update(parse_overrides(args.overrides))
    return mapping


def cmd_train(args) -> int:
    mapping = _load_mapping(args)
    if args.out:
        mapping["train.out_dir"] = args.out
    cfg = train_config_from_mapping(mapping)
    result = train(cfg)
    print(result.metrics.to_csv(), end="")
    print(f"best top1 {result.best_top1:.2f}  checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    mapping = _load_mapping(args)
    cfg = train_config_from_mapping(mapping) if mapping else None
    model = checkpoint.load(args.checkpoint)
    if args.images:
        ds = load_idx_dataset(args.images, args.labels, model.cfg.num_classes, "eval")
    else:
        from .train import load_datasets
        if cfg is None:
            from .config import TrainConfig
            cfg = TrainConfig(network=model.cfg)
        else:
            cfg.network = model.cfg
        ds = load_datasets(cfg)[1]
    top1, top5 = evaluate(model, ds)
    print(f"top1 {top1:.4f}\ntop5 {top5:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    targets = gradcheck.TARGETS if args.target == "all" else (args.target,)
    ok = True
    for t in targets:
        report = gradcheck.run(t, seed=args.seed, eps=args.eps, tol=args.tol)
        print(report.text())
        ok &= report.passed
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_mask_show(args) -> int:
    mask = build_mask(args.size, args.r1, args.variant)
    print(f"size={mask.size} r1={mask.r1:g} r2={mask.r2:g} variant={mask.variant.value} ones={mask.ones()}")
    print("mask:")
    print(mask.ascii())
    print("classes (F=fovea T=inner O=outer .=inactive):")
    print(mask.ascii_classes())
    return EXIT_OK


def cmd_export_kernels(args) -> int:
    model = checkpoint.load(args.checkpoint)
    paths = export_kernels(model, args.out)
    print(f"wrote {len(paths)} kernel images to {args.out}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, n, seed in (("train", args.train_per_class, args.seed),
                           ("val", args.val_per_class, args.seed + 1_000_003)):
        ds = gen_synthetic(seed, n, classes=args.classes, size=args.size,
                           period=args.period, contrast=args.contrast, split=split)
        images, labels = to_idx_arrays(ds)
        write_idx(out / f"{split}-images.idx3-ubyte", images)
        write_idx(out / f"{split}-labels.idx1-ubyte", labels)
        print(f"{split}: {len(labels)} samples -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reganet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a network and write metrics + best checkpoint")
    s.add_argument("--config", help="key=value config file")
    s.add_argument("--out", help="output directory (overrides train.out_dir)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="top-1/top-5 of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="config selecting the synthetic validation set")
    s.add_argument("--images", help="IDX image file (instead of synthetic val)")
    s.add_argument("--labels", help="IDX label file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--target", default="all", choices=gradcheck.TARGETS + ("all",))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("mask-show", help="print a retina mask and its point classes")
    s.add_argument("--size", type=int, default=7)
    s.add_argument("--r1", type=float, default=None)
    s.add_argument("--variant", default="hard", choices=("hard", "soft"))
    s.set_defaults(func=cmd_mask_show)

    s = sub.add_parser("export-kernels", help="write kernel slices as PGM images")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_kernels)

    s = sub.add_parser("gen-data", help="write the synthetic grating dataset as IDX files")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-per-class", type=int, default=100)
    s.add_argument("--val-per-class", type=int, default=25)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--period", type=float, default=6.0)
    s.add_argument("--contrast", type=float, default=1.0)
    s.set_defaults(func=cmd_gen_data)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    args.overrides = extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if extra and args.command not in ("train", "eval"):
        print(f"reganet: unrecognized arguments {' '.join(extra)}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, ShapeError, ValueError, FileNotFoundError) as exc:
        print(f"reganet: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"reganet: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
