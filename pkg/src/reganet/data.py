"""Datasets: synthetic oriented gratings and IDX-file ingestion."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# IDX type byte -> big-endian numpy dtype
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.str[1:]: code for code, dt in _IDX_TYPES.items()}


class IdxFormatError(ValueError):
    pass


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0:
        raise IdxFormatError("not an IDX file (bad magic prefix)")
    code, ndim = buf[2], buf[3]
    if code not in _IDX_TYPES:
        raise IdxFormatError(f"unknown IDX element type 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxFormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    dtype = _IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - header != expected:
        raise IdxFormatError(f"IDX payload is {len(buf) - header} bytes, dims {dims} need {expected}")
    return np.frombuffer(buf, dtype=dtype, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    key = array.dtype.str[1:]
    if key not in _IDX_CODES:
        raise IdxFormatError(f"dtype {array.dtype} has no IDX encoding")
    code = _IDX_CODES[key]
    head = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + array.astype(_IDX_TYPES[code], copy=False).tobytes()


def read_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


def write_idx(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_idx(array))


@dataclass
class DatasetHandle:
    images: np.ndarray          # N x C x H x W float64 in [0, 1]
    labels: np.ndarray          # N int64
    num_classes: int
    source: str = "synthetic"
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


def grating_orientation(k: int, classes: int = 8) -> float:
    """Orientation of class ``k``; pi/8 steps when there are 8 classes."""
    return math.pi * k / classes


def gen_synthetic(seed: int, n_per_class: int, classes: int = 8, size: int = 32,
                  period: float = 6.0, contrast: float = 1.0, noise: float = 0.1,
                  split: str = "train") -> DatasetHandle:
    """Noisy sinusoidal gratings, one orientation per class.

    Sample ``i`` has label ``i % classes``. Each sample draws a random phase,
    a +-10% frequency jitter around ``2 pi / period`` and additive Gaussian
    noise; pixels are clipped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    n = n_per_class * classes
    labels = np.arange(n) % classes
    yy, xx = np.indices((size, size), dtype=float)
    images = np.empty((n, 1, size, size))
    base = 2 * math.pi / period
    for idx in range(n):
        theta = grating_orientation(int(labels[idx]), classes)
        omega = base * rng.uniform(0.9, 1.1)
        phase = rng.uniform(0, 2 * math.pi)
        wave = np.cos(omega * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        img = 0.5 + 0.5 * contrast * wave + rng.normal(0.0, noise, (size, size))
        images[idx, 0] = np.clip(img, 0.0, 1.0)
    return DatasetHandle(images, labels.astype(np.int64), classes, "synthetic", split)


def to_idx_arrays(ds: DatasetHandle) -> tuple[np.ndarray, np.ndarray]:
    """Quantize to u8 images (N x H x W for one channel) and u8 labels."""
    pixels = np.round(ds.images * 255).astype(np.uint8)
    if pixels.shape[1] == 1:
        pixels = pixels[:, 0]
    return pixels, ds.labels.astype(np.uint8)


def load_idx_dataset(images_path, labels_path, num_classes: int | None = None,
                     split: str = "train") -> DatasetHandle:
    raw = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if raw.ndim == 3:
        raw = raw[:, None]
    if raw.ndim != 4 or labels.ndim != 1:
        raise IdxFormatError(f"expected N x H x W images and N labels, got {raw.shape} / {labels.shape}")
    images = raw.astype(np.float64)
    if raw.dtype.kind == "u" and raw.dtype.itemsize == 1:
        images /= 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return DatasetHandle(images, labels, num_classes, "idx", split)
