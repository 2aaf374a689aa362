"""Retina-masked trainable Gabor convolution and Rega attention on numpy."""
from .attention import (FusionHead, Model, NetworkConfig, RegaAttentionModule, RGBlock,
                        apply_attention, build_network, fuse_multiscale, rega_attention)
from .gabor import GaborParams, gabor_real, init_lattice, sample_patch
from .mask import PointClass, RetinaMask, Variant, build_mask, classify_point, realize_channels
from .regaconv import RegaKernelBank, build_kernel, init_bank, rega_conv
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "FusionHead", "GaborParams", "Model", "NetworkConfig", "PointClass", "RGBlock",
    "RegaAttentionModule", "RegaKernelBank", "RetinaMask", "Tensor", "Variant",
    "apply_attention", "backward", "build_kernel", "build_mask", "build_network",
    "classify_point", "fuse_multiscale", "gabor_real", "init_bank", "init_lattice",
    "realize_channels", "rega_attention", "rega_conv", "sample_patch",
]
