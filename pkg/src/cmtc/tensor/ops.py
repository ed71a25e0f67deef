"""Differentiable operations on :class:`Tensor`.

Broadcasting in ``add``/``sub``/``mul``/``div`` follows numpy rules; the
gradient of a broadcast operand is summed back over the expanded axes.
"""
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, make_result

LEAKY_SLOPE = 0.1
_CONV_CHUNK = 1 << 18   # elements per im2col buffer


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _operand(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise binary -------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _operand(b, a)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _operand(b, a)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _operand(b, a)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _operand(b, a)
    _broadcast_shape(a, b, "div")

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return make_result(a.data / b.data, (a, b), bw, "div")


def elementwise(a: Tensor, b, op: str) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def rsub(a: Tensor, b) -> Tensor:
    return sub(_operand(b, a), a)


def rdiv(a: Tensor, b) -> Tensor:
    return div(_operand(b, a), a)


# -- elementwise unary --------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def power(a: Tensor, exponent: float) -> Tensor:
    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_result(a.data ** exponent, (a,), bw, "pow")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def leaky_relu(a: Tensor, slope: Optional[float] = None) -> Tensor:
    slope = LEAKY_SLOPE if slope is None else slope
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = a.data
    # with 0 < slope < 1 the activation is max(x, slope * x)
    out = x * x.dtype.type(slope)
    np.maximum(x, out, out=out)

    def bw(g):
        gx = g * g.dtype.type(slope)
        np.copyto(gx, g, where=x > 0)
        return (gx,)

    return make_result(out, (a,), bw, "leaky_relu")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def activation(a: Tensor, kind: str, slope: Optional[float] = None) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "relu":
        return relu(a)
    raise ValueError(f"unknown activation {kind!r}")


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axes, keepdims), 1.0 / n)


def max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; tied maxima share the gradient equally."""
    axes = _norm_axes(axis, a.ndim)
    out_k = a.data.max(axis=axes, keepdims=True)
    out = out_k if keepdims else np.squeeze(out_k, axis=axes)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        mask = (a.data == out_k).astype(a.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (mask * g,)

    return make_result(np.asarray(out), (a,), bw, "max")


def min(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return neg(max(neg(a), axis, keepdims))


# -- shape manipulation -------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise ShapeError(f"concat along axis {axis}: {t.shape} does not match {ref.shape}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), bw, "log_softmax")


# -- spatial ------------------------------------------------------------------

def _edge_pad_adjoint(g: np.ndarray, p: int) -> np.ndarray:
    """Fold the gradient of an edge-padded array back onto the unpadded one."""
    g = g.copy()
    for axis in (3, 2):
        lo = np.take(g, range(p), axis=axis).sum(axis=axis, keepdims=True)
        hi = np.take(g, range(g.shape[axis] - p, g.shape[axis]), axis=axis).sum(axis=axis, keepdims=True)
        g = np.take(g, range(p, g.shape[axis] - p), axis=axis)
        first = [slice(None)] * 4
        first[axis] = slice(0, 1)
        last = [slice(None)] * 4
        last[axis] = slice(-1, None)
        g[tuple(first)] += lo
        g[tuple(last)] += hi
    return g


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0,
           padding_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation, NCHW input and OIKhKw weight, via im2col.

    ``padding_mode`` is ``"zeros"`` or ``"replicate"`` (edge values repeated).
    """
    if padding_mode not in ("zeros", "replicate"):
        raise ValueError(f"unknown padding_mode {padding_mode!r}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {ci} ({weight.shape})")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    wmat = weight.data.reshape(o, -1)
    if kh == kw == 1 and stride == 1 and padding == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
        out = cols @ wmat.T
        if bias is not None:
            out += bias.data
        out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

        def bw(g):
            gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
            gx = (gm @ wmat).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            return gx, (gm.T @ cols).reshape(weight.shape), gm.sum(axis=0) if bias is not None else None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    mode="edge" if padding_mode == "replicate" else "constant")
        # per-sample columns (c*kh*kw x ho*wo), built in batch chunks that stay cache-sized
        step = _CONV_CHUNK // (ho * wo * c * kh * kw) or 1

        def columns(lo):
            win = sliding_window_view(xp[lo:lo + step], (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
            return win.transpose(0, 1, 4, 5, 2, 3).reshape(-1, c * kh * kw, ho * wo)

        out = np.empty((n, o, ho * wo), dtype=np.result_type(x.dtype, weight.dtype))
        for lo in range(0, n, step):
            np.matmul(wmat, columns(lo), out=out[lo:lo + step])
        out = out.reshape(n, o, ho, wo)
        if bias is not None:
            out += bias.data[:, None, None]

        def bw(g):
            gw = np.zeros_like(wmat)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for lo in range(0, n, step):
                gm = g[lo:lo + step].reshape(-1, o, ho * wo)
                gw += (gm @ columns(lo).transpose(0, 2, 1)).sum(axis=0)
                dcols = (wmat.T @ gm).reshape(-1, c, kh, kw, ho, wo)
                gpart = gxp[lo:lo + step]
                for i in range(kh):
                    for j in range(kw):
                        gpart[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            if padding_mode == "replicate" and padding:
                gx = _edge_pad_adjoint(gxp, padding)
            else:
                gx = gxp[:, :, padding:padding + h, padding:padding + w]
            gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
            return gx, gw.reshape(weight.shape), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def avg_pool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"avg_pool2d: kernel {kernel} larger than input {h}x{w}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    if stride == kernel:
        # non-overlapping windows: strided slices replace the sliding view
        out = np.zeros((n, c, ho, wo), dtype=x.dtype)
        for i in range(kernel):
            for j in range(kernel):
                out += x.data[:, :, i:ho * kernel:kernel, j:wo * kernel:kernel]
        out *= x.dtype.type(1.0 / (kernel * kernel))

        def bw(g):
            gx = np.zeros_like(x.data)
            share = (g / (kernel * kernel))[:, :, :, None, :, None]
            gx[:, :, :ho * kernel, :wo * kernel] = np.broadcast_to(
                share, (n, c, ho, kernel, wo, kernel)).reshape(n, c, ho * kernel, wo * kernel)
            return (gx,)

        return make_result(out, (x,), bw, "avg_pool2d")
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = win.mean(axis=(-2, -1))

    def bw(g):
        gx = np.zeros_like(x.data)
        share = g / (kernel * kernel)
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (gx,)

    return make_result(out, (x,), bw, "avg_pool2d")


def global_avg_pool2d(x: Tensor) -> Tensor:
    """Mean over the spatial axes, keeping them as 1x1."""
    return mean(x, axis=(2, 3), keepdims=True)


def global_max_pool2d(x: Tensor) -> Tensor:
    return max(x, axis=(2, 3), keepdims=True)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the align-corners interpolation weights for output i."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        src = i * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        i0 = int(np.floor(src))
        i1 = i0 + 1 if i0 + 1 < n_in else i0
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes with the align-corners convention.

    Works for both up- and downsampling; corners map exactly onto corners.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample_bilinear: output size must be positive, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise ShapeError(f"upsample_bilinear needs at least 2 dims, got {x.shape}")
    rh = bilinear_matrix(x.shape[-2], out_h, x.dtype)
    rw = bilinear_matrix(x.shape[-1], out_w, x.dtype)
    out = rh @ x.data @ rw.T
    return make_result(out, (x,), lambda g: (rh.T @ g @ rw,), "upsample_bilinear")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = sub(a, b)
    return mean(mul(d, d))


def _bind():
    T = Tensor
    T.__add__ = add
    T.__radd__ = add
    T.__sub__ = sub
    T.__rsub__ = rsub
    T.__mul__ = mul
    T.__rmul__ = mul
    T.__truediv__ = div
    T.__rtruediv__ = rdiv
    T.__neg__ = neg
    T.__matmul__ = matmul
    T.__pow__ = power
    T.__getitem__ = getitem
    T.sum = sum
    T.mean = mean
    T.max = max
    T.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)
    T.transpose = lambda self, *axes: transpose(self, axes[0] if len(axes) == 1 and not isinstance(axes[0], int) else (axes or None))
    T.exp = exp
    T.log = log
    T.sqrt = sqrt
    T.sigmoid = sigmoid


_bind()

__all__ = [
    "ShapeError", "as_tensor", "add", "sub", "mul", "div", "elementwise", "neg", "exp", "log",
    "sqrt", "power", "sigmoid", "leaky_relu", "relu", "activation", "sum", "mean", "max", "min",
    "reshape", "transpose", "getitem", "concat", "stack", "matmul", "softmax", "log_softmax",
    "conv2d", "avg_pool2d", "global_avg_pool2d", "global_max_pool2d", "bilinear_matrix",
    "upsample_bilinear", "mse",
]
