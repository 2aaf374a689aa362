"""8-bit PGM (P5) export of Rega kernel slices."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .regaconv import build_kernel


def normalize_slice(k: np.ndarray) -> np.ndarray:
    """Min-max map to 0..255; a constant slice maps to mid-gray 128."""
    lo, hi = float(k.min()), float(k.max())
    if hi == lo:
        return np.full(k.shape, 128, dtype=np.uint8)
    return np.round((k - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def export_kernels(model, out_dir) -> list[Path]:
    """Write ``kernel_<layer>_<o>_<i>.pgm`` for every slice of every RG bank."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    written = []
    for layer, bank in model.kernel_banks().items():
        k = build_kernel(bank).data
        for o in range(k.shape[0]):
            for i in range(k.shape[1]):
                path = out / f"kernel_{layer}_{o}_{i}.pgm"
                write_pgm(path, normalize_slice(k[o, i]))
                written.append(path)
    return written
