"""Binary retina masks for square kernels.

Cells are classed by their distance ``r`` from the kernel center: the center
itself is the fovea point, ``0 < r <= r1`` the inner ring, ``r1 < r <= r2``
the outer ring, and anything beyond ``r2 = size / 2`` is inactive.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class PointClass(enum.Enum):
    FP = "FP"
    TAP = "TAP"
    OAP = "OAP"
    INACTIVE = "INACTIVE"


class Variant(enum.Enum):
    HARD = "hard"
    SOFT = "soft"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mask variant {value!r}; use 'hard' or 'soft'") from None


_GLYPH = {PointClass.FP: "F", PointClass.TAP: "T", PointClass.OAP: "O", PointClass.INACTIVE: "."}


def _classify_r(r: float, r1: float, r2: float) -> PointClass:
    if r == 0:
        return PointClass.FP
    if r <= r1:
        return PointClass.TAP
    if r <= r2:
        return PointClass.OAP
    return PointClass.INACTIVE


def distance_grid(size: int) -> np.ndarray:
    c = (size - 1) / 2
    i, j = np.indices((size, size))
    return np.sqrt((i - c) ** 2 + (j - c) ** 2)


@dataclass(frozen=True)
class RetinaMask:
    size: int
    r1: float
    r2: float
    variant: Variant
    cells: np.ndarray = field(repr=False)
    classes: tuple = field(repr=False)

    def __post_init__(self):
        self.cells.setflags(write=False)

    def class_at(self, i: int, j: int) -> PointClass:
        return classify_point(self, i, j)

    def ones(self) -> int:
        return int(self.cells.sum())

    def ascii(self) -> str:
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.cells)

    def ascii_classes(self) -> str:
        return "\n".join(" ".join(_GLYPH[c] for c in row) for row in self.classes)


def build_mask(size: int = 7, r1: float | None = None, variant="hard") -> RetinaMask:
    """Build the retina mask; ``r1`` defaults to half the outer radius."""
    if size < 3 or size % 2 == 0:
        raise ValueError(f"mask size must be odd and >= 3, got {size}")
    r2 = size / 2
    if r1 is None:
        r1 = r2 / 2
    if not 0 < r1 < r2:
        raise ValueError(f"r1 must lie in (0, {r2}), got {r1}")
    variant = Variant.parse(variant)
    r = distance_grid(size)
    classes = tuple(tuple(_classify_r(float(v), r1, r2) for v in row) for row in r)
    if variant is Variant.HARD:
        cells = (r <= r2).astype(np.float64)
    else:
        cells = np.ones((size, size))
    return RetinaMask(size=size, r1=float(r1), r2=r2, variant=variant, cells=cells, classes=classes)


def classify_point(mask: RetinaMask, i: int, j: int) -> PointClass:
    if not (0 <= i < mask.size and 0 <= j < mask.size):
        raise IndexError(f"cell ({i}, {j}) outside a {mask.size}x{mask.size} mask")
    return mask.classes[i][j]


@dataclass(frozen=True)
class ChannelMask:
    """The base mask copied across every (in, out) channel pair; never trained."""

    base: RetinaMask
    cin: int
    cout: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def realize_channels(mask: RetinaMask, cin: int, cout: int) -> ChannelMask:
    if cin < 1 or cout < 1:
        raise ValueError(f"channel counts must be >= 1, got cin={cin}, cout={cout}")
    data = np.broadcast_to(mask.cells, (cin, cout, mask.size, mask.size)).copy()
    return ChannelMask(base=mask, cin=cin, cout=cout, data=data)

