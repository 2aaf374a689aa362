"""Retina-masked trainable Gabor kernels and the convolution that uses them."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .gabor import GaborParams, init_lattice, sample_patch
from .mask import ChannelMask, RetinaMask, build_mask, realize_channels
from .tensor import Tensor


class RegaKernelBank:
    """One Gabor quadruple per (input, output) channel pair, gated by a mask.

    Parameter leaves are stored with shape ``(cout, cin)`` so that the built
    kernel comes out directly in OIHW layout.
    """

    def __init__(self, params: GaborParams, mask: ChannelMask):
        self.params = params
        self.mask = mask
        self.cout, self.cin = params.phi.shape
        self.size = mask.base.size
        # M' is stored (cin, cout, k, k); the kernel is OIHW
        self._gate = Tensor(mask.data.transpose(1, 0, 2, 3))

    def leaves(self) -> dict[str, Tensor]:
        return self.params.leaves()

    def param_at(self, i: int, o: int) -> dict[str, float]:
        """Numeric (omega, phi, sigma, theta) of the filter from input i to output o."""
        p = self.params
        return {"omega": float(p.omega[o, i]), "phi": float(p.phi.data[o, i]),
                "sigma": float(p.sigma[o, i]), "theta": float(p.theta.data[o, i])}

    def build_kernel(self) -> Tensor:
        return build_kernel(self)

    def clamp_(self) -> None:
        self.params.clamp_()

    def __repr__(self) -> str:
        return f"RegaKernelBank(cin={self.cin}, cout={self.cout}, size={self.size}, variant={self.mask.base.variant.value})"


def init_bank(cin: int, cout: int, mask: RetinaMask | None = None, seed: int = 0) -> RegaKernelBank:
    """Seed (omega, theta) from the lattice cyclically and phi from U(0, pi).

    Filter (i, o) takes lattice entry ``(o * cin + i) mod 40``; sigma starts
    at ``pi / omega``.
    """
    if cin < 1 or cout < 1:
        raise ValueError(f"channel counts must be >= 1, got cin={cin}, cout={cout}")
    mask = mask if mask is not None else build_mask(7)
    lattice = init_lattice()
    o_idx, i_idx = np.indices((cout, cin))
    slot = (o_idx * cin + i_idx) % len(lattice)
    omega = np.array([e.omega for e in lattice])[slot]
    theta = np.array([e.theta for e in lattice])[slot]
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, math.pi, size=(cout, cin))
    params = GaborParams.create(omega, phi, math.pi / omega, theta)
    return RegaKernelBank(params, realize_channels(mask, cin, cout))


def build_kernel(bank: RegaKernelBank) -> Tensor:
    return T.mul(sample_patch(bank.params, bank.size), bank._gate)


def rega_conv(f: Tensor, bank: RegaKernelBank) -> Tensor:
    f = T.as_tensor(f)
    if f.ndim != 4 or f.shape[1] != bank.cin:
        raise T.ShapeError(f"rega_conv: input {f.shape} does not have {bank.cin} channels")
    return T.conv2d(f, build_kernel(bank), stride=1, padding=bank.size // 2)
