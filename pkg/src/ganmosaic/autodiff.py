"""Minimal reverse-mode automatic differentiation over rank-4 tensors.

Only the primitives the generator and losses need are provided: transposed
convolution, strided convolution, average pooling, fixed-statistics batch
normalization, a few elementwise nonlinearities, channel plumbing and the
mean-of-squares reduction. Values are stored in 32-bit floats by default;
accumulations run in 64-bit with a fixed (row-major) reduction order so
repeated runs and chunked rendering are bit-reproducible.

A tensor created from grad-requiring inputs records a backward closure and a
monotonically increasing creation index; ``backward`` replays closures in
strict reverse creation order.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

_CREATION_COUNTER = itertools.count()

# Toggle for the (cheap but not free) NaN/Inf check after every primitive.
CHECK_FINITE = True


def _check_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense numeric array with optional gradient tape support.

    Rank-4 (batch, channels, height, width) for images/activations; rank-0
    for scalar losses. ``grad`` is populated by ``backward`` in float64 and
    exposed in the tensor's own dtype via :func:`gradients`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data)
        if arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._op = "leaf"
        self._id = next(_CREATION_COUNTER)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Scalar convenience arithmetic (used to combine loss terms).
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: float) -> "Tensor":
        return scale(self, float(other))

    __rmul__ = __mul__


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], None] | None) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(p for p in parents if p.requires_grad) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._op = op
    out._id = next(_CREATION_COUNTER)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += g


def _as4(t: Tensor, op: str) -> np.ndarray:
    if t.data.ndim != 4:
        raise DimensionError(f"'{op}' expects a rank-4 tensor, got shape {t.data.shape}")
    return t.data


def _acc_dtype(*tensors: Tensor):
    # 64-bit accumulation even for 32-bit storage; float64 graphs stay float64.
    return np.float64


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss, filling ``grad`` on reachable tensors."""
    if loss.data.ndim != 0:
        raise ValidationError(f"backward root must be scalar, got shape {loss.data.shape}")
    # Collect the reachable subgraph, then replay in reverse creation order.
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._id, reverse=True)
    loss.grad = np.ones((), dtype=np.float64)
    for t in nodes:
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def gradients(loss: Tensor, leaves: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Run backward and return gradients keyed by leaf tensor.

    Leaves with no path to the loss get zero gradients of their own shape.
    """
    backward(loss)
    out: dict[Tensor, np.ndarray] = {}
    for leaf in leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros(leaf.data.shape, dtype=np.float64)
        out[leaf] = g.astype(leaf.data.dtype)
    return out


# ---------------------------------------------------------------------------
# numpy kernels (shared with no-grad code paths such as BN calibration)
# ---------------------------------------------------------------------------

def conv_transpose2d_shape(h: int, w: int, kh: int, kw: int, stride: int,
                           padding: int, output_padding: int) -> tuple[int, int]:
    return ((h - 1) * stride - 2 * padding + kh + output_padding,
            (w - 1) * stride - 2 * padding + kw + output_padding)


def conv_transpose2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                             stride: int, padding: int, output_padding: int,
                             acc=np.float64) -> np.ndarray:
    bsz, ic, h, wd = x.shape
    _, oc, kh, kw = w.shape
    out_h, out_w = conv_transpose2d_shape(h, wd, kh, kw, stride, padding, output_padding)
    full = np.zeros((bsz, oc, (h - 1) * stride + kh + output_padding,
                     (wd - 1) * stride + kw + output_padding), dtype=acc)
    x64 = x.astype(acc, copy=False)
    w64 = w.astype(acc, copy=False)
    for i in range(kh):
        for j in range(kw):
            # contribution of kernel tap (i, j) at strided offsets
            full[:, :, i:i + h * stride:stride, j:j + wd * stride:stride] += np.einsum(
                "bchw,co->bohw", x64, w64[:, :, i, j], optimize=True)
    out = full[:, :, padding:padding + out_h, padding:padding + out_w]
    if b is not None:
        out = out + b.astype(acc).reshape(1, oc, 1, 1)
    return out


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   stride: int, padding: int, acc=np.float64) -> np.ndarray:
    bsz, ic, h, wd = x.shape
    oc, _, kh, kw = w.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x.astype(acc, copy=False),
                ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    w64 = w.astype(acc, copy=False)
    out = np.zeros((bsz, oc, out_h, out_w), dtype=acc)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride]
            out += np.einsum("bchw,oc->bohw", xs, w64[:, :, i, j], optimize=True)
    if b is not None:
        out = out + b.astype(acc).reshape(1, oc, 1, 1)
    return out


def avg_pool2d_forward(x: np.ndarray, k: int, acc=np.float64) -> np.ndarray:
    bsz, c, h, w = x.shape
    out = x.astype(acc, copy=False).reshape(bsz, c, h // k, k, w // k, k).mean(axis=(3, 5))
    return out


def batch_norm_fixed_forward(x: np.ndarray, mean: np.ndarray, var: np.ndarray,
                             gamma: np.ndarray, beta: np.ndarray, eps: float,
                             acc=np.float64) -> np.ndarray:
    scale_v = (gamma.astype(acc) / np.sqrt(var.astype(acc) + eps)).reshape(1, -1, 1, 1)
    shift_v = (beta.astype(acc) - mean.astype(acc) * scale_v.ravel()).reshape(1, -1, 1, 1)
    return x.astype(acc, copy=False) * scale_v + shift_v


# ---------------------------------------------------------------------------
# taped primitives
# ---------------------------------------------------------------------------

def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None,
                     stride: int, padding: int, output_padding: int) -> Tensor:
    xd = _as4(x, "conv_transpose2d")
    wd = weight.data
    if wd.ndim != 4:
        raise DimensionError(f"conv_transpose2d weight must be rank-4 (in,out,kh,kw), got {wd.shape}")
    if xd.shape[1] != wd.shape[0]:
        raise DimensionError(
            f"conv_transpose2d channel mismatch: input {xd.shape} vs weight {wd.shape}")
    bsz, ic, h, w = xd.shape
    _, oc, kh, kw = wd.shape
    bd = None if bias is None else bias.data
    if bd is not None and bd.shape != (oc,):
        raise DimensionError(f"conv_transpose2d bias shape {bd.shape} != ({oc},)")
    out64 = conv_transpose2d_forward(xd, wd, bd, stride, padding, output_padding)
    out = out64.astype(xd.dtype)
    out_h, out_w = out.shape[2], out.shape[3]

    parents = [p for p in (x, weight, bias) if p is not None]

    def back(g: np.ndarray) -> None:
        full_h = (h - 1) * stride + kh + output_padding
        full_w = (w - 1) * stride + kw + output_padding
        gfull = np.zeros((bsz, oc, full_h, full_w), dtype=np.float64)
        gfull[:, :, padding:padding + out_h, padding:padding + out_w] = g
        w64 = wd.astype(np.float64)
        if x.requires_grad:
            gx = np.zeros((bsz, ic, h, w), dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    gs = gfull[:, :, i:i + h * stride:stride, j:j + w * stride:stride]
                    gx += np.einsum("bohw,co->bchw", gs, w64[:, :, i, j], optimize=True)
            _accum(x, gx)
        if weight.requires_grad:
            x64 = xd.astype(np.float64)
            gw = np.zeros(wd.shape, dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    gs = gfull[:, :, i:i + h * stride:stride, j:j + w * stride:stride]
                    gw[:, :, i, j] = np.einsum("bchw,bohw->co", x64, gs, optimize=True)
            _accum(weight, gw)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    return _result(out, parents, "conv_transpose2d", back)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, padding: int) -> Tensor:
    xd = _as4(x, "conv2d")
    wd = weight.data
    if wd.ndim != 4:
        raise DimensionError(f"conv2d weight must be rank-4 (out,in,kh,kw), got {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {xd.shape} vs weight {wd.shape}")
    bsz, ic, h, w = xd.shape
    oc, _, kh, kw = wd.shape
    bd = None if bias is None else bias.data
    out64 = conv2d_forward(xd, wd, bd, stride, padding)
    out = out64.astype(xd.dtype)
    out_h, out_w = out.shape[2], out.shape[3]

    parents = [p for p in (x, weight, bias) if p is not None]

    def back(g: np.ndarray) -> None:
        w64 = wd.astype(np.float64)
        hp, wp = h + 2 * padding, w + 2 * padding
        if x.requires_grad:
            gxp = np.zeros((bsz, ic, hp, wp), dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride] += \
                        np.einsum("bohw,oc->bchw", g, w64[:, :, i, j], optimize=True)
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
            _accum(x, gx)
        if weight.requires_grad:
            xp = np.pad(xd.astype(np.float64),
                        ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            gw = np.zeros(wd.shape, dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    xs = xp[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride]
                    gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, xs, optimize=True)
            _accum(weight, gw)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    return _result(out, parents, "conv2d", back)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    xd = _as4(x, "avg_pool2d")
    bsz, c, h, w = xd.shape
    if h % k != 0 or w % k != 0:
        raise DimensionError(f"avg_pool2d: spatial dims {h}x{w} not divisible by k={k}")
    out = avg_pool2d_forward(xd, k).astype(xd.dtype)

    def back(g: np.ndarray) -> None:
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        _accum(x, gx)

    return _result(out, [x], "avg_pool2d", back)


def batch_norm_fixed(x: Tensor, mean: np.ndarray, var: np.ndarray,
                     gamma: np.ndarray, beta: np.ndarray, eps: float) -> Tensor:
    xd = _as4(x, "batch_norm_fixed")
    c = xd.shape[1]
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if np.asarray(v).shape != (c,):
            raise DimensionError(f"batch_norm_fixed {name} shape {np.asarray(v).shape} != ({c},)")
    if np.any(var < 0):
        raise ValidationError("batch_norm_fixed: negative variance")
    out = batch_norm_fixed_forward(xd, mean, var, gamma, beta, eps).astype(xd.dtype)
    scale_v = (gamma.astype(np.float64) / np.sqrt(var.astype(np.float64) + eps)).reshape(1, c, 1, 1)

    def back(g: np.ndarray) -> None:
        _accum(x, g * scale_v)

    return _result(out, [x], "batch_norm_fixed", back)


_ELEMENTWISE = {"relu", "tanh", "sin"}


def elementwise(x: Tensor, f: str) -> Tensor:
    if f not in _ELEMENTWISE:
        raise ValidationError(f"unknown elementwise function '{f}'")
    xd = x.data
    if f == "relu":
        out = np.maximum(xd, 0)
        deriv = (xd > 0).astype(np.float64)  # relu' at exactly 0 is 0
    elif f == "tanh":
        out = np.tanh(xd)
        deriv = 1.0 - out.astype(np.float64) ** 2
    else:
        out = np.sin(xd)
        deriv = np.cos(xd.astype(np.float64))

    def back(g: np.ndarray) -> None:
        _accum(x, g * deriv)

    return _result(out.astype(xd.dtype), [x], f, back)


def relu(x: Tensor) -> Tensor:
    return elementwise(x, "relu")


def tanh(x: Tensor) -> Tensor:
    return elementwise(x, "tanh")


def sin(x: Tensor) -> Tensor:
    return elementwise(x, "sin")


def mean_sq(x: Tensor) -> Tensor:
    xd = x.data
    n = xd.size
    if n == 0:
        raise ValidationError("mean_sq of an empty tensor")
    x64 = xd.astype(np.float64)
    out = np.asarray((x64 * x64).sum() / n)

    def back(g: np.ndarray) -> None:
        _accum(x, g * (2.0 / n) * x64)

    return _result(out.astype(xd.dtype), [x], "mean_sq", back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = (a.data.astype(np.float64) + b.data.astype(np.float64)).astype(a.data.dtype)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _result(out, [a, b], "add", back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = (a.data.astype(np.float64) - b.data.astype(np.float64)).astype(a.data.dtype)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _result(out, [a, b], "sub", back)


def scale(x: Tensor, c: float) -> Tensor:
    out = (x.data.astype(np.float64) * c).astype(x.data.dtype)

    def back(g: np.ndarray) -> None:
        _accum(x, g * c)

    return _result(out, [x], "scale", back)


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array broadcastable to x (no reduction)."""
    c = np.asarray(c, dtype=np.float64)
    out64 = x.data.astype(np.float64) * c
    if out64.shape != x.data.shape:
        raise DimensionError(f"mul_const must not change shape: {x.data.shape} -> {out64.shape}")

    def back(g: np.ndarray) -> None:
        _accum(x, g * c)

    return _result(out64.astype(x.data.dtype), [x], "mul_const", back)


def add_channel_bias(x: Tensor, bias: np.ndarray) -> Tensor:
    xd = _as4(x, "add_channel_bias")
    b = np.asarray(bias, dtype=np.float64)
    if b.shape != (xd.shape[1],):
        raise DimensionError(f"add_channel_bias: bias shape {b.shape} != ({xd.shape[1]},)")
    out = (xd.astype(np.float64) + b.reshape(1, -1, 1, 1)).astype(xd.dtype)

    def back(g: np.ndarray) -> None:
        _accum(x, g)

    return _result(out, [x], "add_channel_bias", back)


def channel_mean(x: Tensor) -> Tensor:
    """Mean over the channel axis, kept as a single channel."""
    xd = _as4(x, "channel_mean")
    c = xd.shape[1]
    out = xd.astype(np.float64).mean(axis=1, keepdims=True).astype(xd.dtype)

    def back(g: np.ndarray) -> None:
        _accum(x, np.repeat(g, c, axis=1) / c)

    return _result(out, [x], "channel_mean", back)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = [p for p in parts if p.data.shape[1] > 0]
    if not parts:
        raise ValidationError("concat_channels of no non-empty tensors")
    base = parts[0].data.shape
    for p in parts:
        d = _as4(p, "concat_channels")
        if d.shape[0] != base[0] or d.shape[2:] != base[2:]:
            raise DimensionError(f"concat_channels mismatch: {d.shape} vs {base}")
    out = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def back(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, g[:, lo:hi])

    return _result(out, parts, "concat_channels", back)


def slice_channels(x: Tensor, lo: int, hi: int, step: int = 1) -> Tensor:
    xd = _as4(x, "slice_channels")
    out = xd[:, lo:hi:step].copy()
    sl = slice(lo, hi, step)

    def back(g: np.ndarray) -> None:
        gx = np.zeros(xd.shape, dtype=np.float64)
        gx[:, sl] = g
        _accum(x, gx)

    return _result(out, [x], "slice_channels", back)


def custom_scalar(x: Tensor, value: float, grad_wrt_x: np.ndarray, op: str) -> Tensor:
    """Wrap an externally computed scalar with a precomputed gradient.

    Used for fused operations (e.g. the KDE texture regularizer) whose
    vectorized forward/backward live outside the primitive set.
    """
    if np.asarray(grad_wrt_x).shape != x.data.shape:
        raise DimensionError(f"custom_scalar gradient shape {np.asarray(grad_wrt_x).shape} "
                             f"!= input shape {x.data.shape}")
    out = np.asarray(value, dtype=x.data.dtype)
    g64 = np.asarray(grad_wrt_x, dtype=np.float64)

    def back(g: np.ndarray) -> None:
        _accum(x, g * g64)

    return _result(out, [x], op, back)
