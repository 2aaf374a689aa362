"""Real-part Gabor function and the frequency/orientation init lattice."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

SIGMA_MIN, SIGMA_MAX = 1e-3, 1e3
RAW_MIN, RAW_MAX = math.log(SIGMA_MIN), math.log(SIGMA_MAX)

N_FREQUENCIES = 5
N_ORIENTATIONS = 8


@dataclass
class GaborParams:
    """Trainable Gabor parameters.

    ``omega`` and ``sigma`` are stored through their logs so that gradient
    steps cannot make them non-positive. Each field is a Tensor leaf; the
    leaves may be scalars or share any common shape (a bank stores one
    ``(cout, cin)`` array per field).
    """

    omega_raw: Tensor
    phi: Tensor
    sigma_raw: Tensor
    theta: Tensor

    @classmethod
    def create(cls, omega, phi, sigma, theta, requires_grad: bool = True) -> "GaborParams":
        omega = np.asarray(omega, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if np.any(omega <= 0) or np.any(sigma <= 0):
            raise ValueError("omega and sigma must be positive")
        return cls(
            omega_raw=Tensor(np.log(omega), requires_grad=requires_grad, name="omega_raw"),
            phi=Tensor(phi, requires_grad=requires_grad, name="phi"),
            sigma_raw=Tensor(np.log(sigma), requires_grad=requires_grad, name="sigma_raw"),
            theta=Tensor(theta, requires_grad=requires_grad, name="theta"),
        )

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.omega_raw.data)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.sigma_raw.data)

    def leaves(self) -> dict[str, Tensor]:
        return {"omega_raw": self.omega_raw, "phi": self.phi,
                "sigma_raw": self.sigma_raw, "theta": self.theta}

    def clamp_(self) -> None:
        """Keep sigma and omega inside (1e-3, 1e3) after an update."""
        np.clip(self.sigma_raw.data, RAW_MIN, RAW_MAX, out=self.sigma_raw.data)
        np.clip(self.omega_raw.data, RAW_MIN, RAW_MAX, out=self.omega_raw.data)


def _expand(t: Tensor, extra: int) -> Tensor:
    return t.reshape(t.shape + (1,) * extra) if extra else t


def gabor_field(x, y, p: GaborParams) -> Tensor:
    """Evaluate the real Gabor response on coordinate arrays ``x`` and ``y``.

    ``x`` and ``y`` are plain arrays of equal shape; the parameter leaves get
    that many trailing axes so the result has shape ``param_shape + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.ndim
    omega = _expand(T.exp(p.omega_raw), k)
    phi = _expand(p.phi, k)
    theta = _expand(p.theta, k)
    # 1/(2 sigma^2) = 0.5 * exp(-2 sigma_raw)
    inv_two_var = _expand(T.exp(p.sigma_raw * -2.0), k) * 0.5
    c, s = T.cos(theta), T.sin(theta)
    xr = c * x + s * y
    yr = c * y - s * x
    envelope = T.exp(-(T.square(xr) + T.square(yr)) * inv_two_var)
    return envelope * T.cos(omega * xr + phi)


def gabor_real(x: float, y: float, p: GaborParams) -> Tensor:
    return gabor_field(np.float64(x), np.float64(y), p)


def gabor_value(x, y, omega, phi, sigma, theta):
    """Plain-float reference evaluation, no graph."""
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    return math.exp(-(xr * xr + yr * yr) / (2 * sigma * sigma)) * math.cos(omega * xr + phi)


def patch_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets from the kernel center: x along columns, y along rows."""
    if size < 3 or size % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 3, got {size}")
    c = (size - 1) // 2
    offsets = np.arange(size, dtype=float) - c
    y, x = np.meshgrid(offsets, offsets, indexing="ij")
    return x, y


def sample_patch(p: GaborParams, size: int = 7) -> Tensor:
    x, y = patch_grid(size)
    return gabor_field(x, y, p)


@dataclass(frozen=True)
class LatticeEntry:
    n: int
    m: int
    omega: float
    theta: float


def lattice_omega(n: int) -> float:
    return (math.pi / 2) * math.sqrt(2) ** (-(n - 1))


def lattice_theta(m: int) -> float:
    return (math.pi / 8) * (m - 1)


def init_lattice() -> list[LatticeEntry]:
    """The 5 x 8 (frequency, orientation) grid, ordered by (n-1)*8 + (m-1)."""
    return [LatticeEntry(n, m, lattice_omega(n), lattice_theta(m))
            for n in range(1, N_FREQUENCIES + 1)
            for m in range(1, N_ORIENTATIONS + 1)]
