"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to one gradient per parent. ``backward`` walks the graph in
reverse topological order and accumulates into the ``grad`` slot of leaves
that were created with ``requires_grad=True``.
"""
from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64
DEBUG = os.environ.get("REGANET_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "name")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self._parents else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, grad_fn: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), "cos", lambda g: (-g * np.sin(a.data),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), "sin", lambda g: (g * np.cos(a.data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), "square", lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # keep the open interval (0, 1) even where float64 saturates
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


_BINARY = {"mul": mul, "add": add}
_UNARY = {"relu": relu, "sigmoid": sigmoid}


def elementwise(op_tag: str, a, b=None) -> Tensor:
    """Dispatch one of ``mul``, ``add``, ``relu``, ``sigmoid`` by name."""
    if op_tag in _BINARY:
        if b is None:
            raise ValueError(f"{op_tag} needs two operands")
        return _BINARY[op_tag](a, b)
    if op_tag in _UNARY:
        return _UNARY[op_tag](a)
    raise ValueError(f"unknown elementwise op {op_tag!r}")


# ----------------------------------------------------------------------------
# shape and reductions
# ----------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def tsum(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.data.sum()), (a,), "sum",
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), "mean",
                 lambda g: (np.full(a.shape, float(g) / n),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), "matmul",
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose2d(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), "transpose", lambda g: (g.T,))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    ref = parts[0].shape
    for k, p in enumerate(parts):
        if p.ndim != 4:
            raise ShapeError(f"concat_channels: part {k} is not NCHW, shape {p.shape}")
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(
                f"concat_channels: part {k} has shape {p.shape}, expected N,H,W of {ref}")
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, "concat", grad_fn)


# ----------------------------------------------------------------------------
# convolution and pooling
# ----------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate an NCHW input with an OIHW kernel, zero padded."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    if c != i:
        raise ShapeError(f"conv2d: input {x.shape} has {c} channels but kernel {w.shape} expects {i}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if h + 2 * padding < kh or wd + 2 * padding < kw or ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} with padding {padding} is smaller than kernel {w.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros(xp.shape)
            for dy in range(kh):
                ys = slice(dy, dy + stride * (ho - 1) + 1, stride)
                for dx in range(kw):
                    xs = slice(dx, dx + stride * (wo - 1) + 1, stride)
                    dxp[:, :, ys, xs] += dcols[:, :, dy, dx]
            gx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, w), "conv2d", grad_fn)


def _bins(size: int, out: int) -> list[tuple[int, int]]:
    return [((k * size) // out, ((k + 1) * size) // out) for k in range(out)]


def adaptive_avg_pool2d(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"pool target must be positive, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool2d cannot upsample {h}x{w} to {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return _make(x.data.copy(), (x,), "avgpool", lambda g: (g,))
    rows, cols = _bins(h, out_h), _bins(w, out_w)
    out = np.empty((n, c, out_h, out_w))
    for a, (r0, r1) in enumerate(rows):
        for b, (c0, c1) in enumerate(cols):
            out[:, :, a, b] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def grad_fn(g):
        gx = np.zeros(x.shape)
        for a, (r0, r1) in enumerate(rows):
            for b, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += g[:, :, a, b][:, :, None, None] / area
        return (gx,)

    return _make(out, (x,), "avgpool", grad_fn)


# ----------------------------------------------------------------------------
# normalization and loss
# ----------------------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_norm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (running variance uses the unbiased
    estimate). In eval mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma {gamma.shape}/beta {beta.shape} do not match {c} channels")
    m = n * h * w
    if training:
        if m < 2:
            raise ValueError("batch_norm2d in training mode needs N*H*W >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mean, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def grad_fn(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = (inv_std[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), "batchnorm", grad_fn)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``N x K`` logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (float(g) / n),)

    return _make(np.asarray(loss), (logits,), "cross_entropy", grad_fn)


# ----------------------------------------------------------------------------
# backward
# ----------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that carry gradient, parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
