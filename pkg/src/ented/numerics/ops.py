"""Differentiable primitive operations.

Each function takes `Var`s and/or plain ndarrays, computes the forward value
with numpy (convolutions go through the kernel backend), and if any argument
is traced records a hand-written backward closure on that tape. With no
traced argument the raw forward value is returned, so the same code doubles
as a pure evaluator.

Gradient conventions: backward closures receive d(loss)/d(output) and return
one gradient per positional input, ``None`` for untraced ones. No implicit
broadcasting; the only vector-against-tensor products are the explicitly
named per-axis scales.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import ShapeError
from .tape import Tape, Var
from .tensor import check_axis


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _emit(op: str, out_val: np.ndarray, inputs: tuple, backward):
    """Record the op if any input is traced; otherwise return the raw value.

    `backward` maps g_out -> full gradient tuple; gradients for untraced
    positions are dropped before recording.
    """
    tape = _tape_of(*inputs)
    if tape is None:
        return out_val
    traced = tuple(x for x in inputs if isinstance(x, Var))
    mask = tuple(isinstance(x, Var) for x in inputs)

    def bw(g, _inner=backward, _mask=mask):
        gs = _inner(g)
        return tuple(gi for gi, m in zip(gs, _mask) if m)

    out = tape.new_var(out_val)
    tape.record(op, out, traced, bw)
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"add: shapes {av.shape} and {bv.shape} differ")
    return _emit("add", av + bv, (a, b), lambda g: (g, g))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"sub: shapes {av.shape} and {bv.shape} differ")
    return _emit("sub", av - bv, (a, b), lambda g: (g, -g))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"mul: shapes {av.shape} and {bv.shape} differ")
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, s: float):
    """Scalar-times-tensor, the one permitted broadcast."""
    xv = value_of(x)
    s = float(s)
    return _emit("scale", xv * s, (x,), lambda g: (g * s,))


def add_scalar(x, c: float):
    xv = value_of(x)
    return _emit("add_scalar", xv + float(c), (x,), lambda g: (g,))


def neg(x):
    return scale(x, -1.0)


def square(x):
    xv = value_of(x)
    return _emit("square", xv * xv, (x,), lambda g: (g * (2.0 * xv),))


def absolute(x):
    xv = value_of(x)
    # subgradient 0 at exactly 0
    return _emit("absolute", np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def rsqrt(x):
    xv = value_of(x)
    out = 1.0 / np.sqrt(xv)
    return _emit("rsqrt", out, (x,), lambda g: (g * (-0.5 * out / xv),))


def leaky_relu(x, slope: float = 0.2):
    xv = value_of(x)
    mask = np.where(xv > 0, 1.0, slope).astype(xv.dtype)
    return _emit("leaky_relu", xv * mask, (x,), lambda g: (g * mask,))


def clamp(x, lo: float, hi: float):
    xv = value_of(x)
    inside = ((xv > lo) & (xv < hi)).astype(xv.dtype)
    return _emit("clamp", np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


def softplus(x):
    """log(1 + exp(x)) in the overflow-safe form max(x,0) + log1p(exp(-|x|))."""
    xv = value_of(x)
    out = np.maximum(xv, 0) + np.log1p(np.exp(-np.abs(xv)))
    sig = 1.0 / (1.0 + np.exp(-xv))
    return _emit("softplus", out, (x,), lambda g: (g * sig,))


def stop_gradient(x):
    xv = value_of(x)
    return _emit("stop_gradient", xv.copy(), (x,), lambda g: (None,))


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape):
    xv = value_of(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != xv.size:
        raise ShapeError(f"reshape: cannot view {xv.shape} as {shape}")
    old = xv.shape
    return _emit("reshape", xv.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    xv = value_of(x)
    if xv.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {xv.shape}")
    return _emit("transpose", np.ascontiguousarray(xv.T), (x,), lambda g: (g.T,))


def concat(parts, axis: int = 0):
    vals = [value_of(p) for p in parts]
    axis = check_axis(axis, vals[0].ndim, "concat input")
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _emit("concat", np.concatenate(vals, axis=axis), tuple(parts), bw)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x):
    xv = value_of(x)
    shape = xv.shape
    out = np.asarray(xv.sum(), dtype=xv.dtype)
    return _emit("sum_all", out, (x,), lambda g: (np.broadcast_to(g, shape).astype(xv.dtype),))


def mean_all(x):
    xv = value_of(x)
    shape, n = xv.shape, xv.size
    out = np.asarray(xv.mean(), dtype=xv.dtype)
    return _emit(
        "mean_all", out, (x,), lambda g: (np.broadcast_to(g / n, shape).astype(xv.dtype),)
    )


def sum_axes(x, axes, keepdims: bool = False):
    xv = value_of(x)
    axes = tuple(check_axis(a, xv.ndim, "sum_axes input") for a in axes)
    out = xv.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gg, xv.shape).astype(xv.dtype),)

    return _emit("sum_axes", out, (x,), bw)


def mean_abs(x):
    """Per-element L1 mean; the workhorse of the reconstruction-style losses."""
    return mean_all(absolute(x))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def matvec(w, x, bias=None):
    """(m,n) @ (n,) + (m,). The linear layers of the style path and critic head."""
    wv, xv = value_of(w), value_of(x)
    if wv.ndim != 2 or xv.ndim != 1 or wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {wv.shape} x {xv.shape}")
    out = wv @ xv
    if bias is None:
        return _emit("matvec", out, (w, x), lambda g: (np.outer(g, xv), wv.T @ g))
    bv = value_of(bias)
    if bv.shape != out.shape:
        raise ShapeError(f"matvec: bias shape {bv.shape} does not match output {out.shape}")
    return _emit(
        "matvec", out + bv, (w, x, bias), lambda g: (np.outer(g, xv), wv.T @ g, g)
    )


def scale_axis(x, v, axis: int):
    """Multiply tensor `x` by vector `v` along `axis` (named per-axis scale)."""
    xv, vv = value_of(x), value_of(v)
    axis = check_axis(axis, xv.ndim, "scale_axis input")
    if vv.ndim != 1 or vv.shape[0] != xv.shape[axis]:
        raise ShapeError(f"scale_axis: vector {vv.shape} does not match axis {axis} of {xv.shape}")
    expand = [1] * xv.ndim
    expand[axis] = -1
    vexp = vv.reshape(expand)
    other = tuple(i for i in range(xv.ndim) if i != axis)

    def bw(g):
        return (g * vexp, (g * xv).sum(axis=other))

    return _emit("scale_axis", xv * vexp, (x, v), bw)


# ---------------------------------------------------------------------------
# normalization / attention building blocks


def softmax(x, axis: int, stabilized: bool = True):
    """Softmax along `axis`; the stabilized form subtracts the per-slice max.

    The unstabilized form is kept only for oracle cross-checks.
    """
    xv = value_of(x)
    axis = check_axis(axis, xv.ndim, "softmax input")
    if xv.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} in shape {xv.shape}")
    z = xv - xv.max(axis=axis, keepdims=True) if stabilized else xv
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), bw)


def feature_normalize(x, axis: int, eps: float = 1e-8):
    """Mean-centered, norm-scaled features: (x - mean) / sqrt(sum(x^2) + eps).

    The denominator deliberately sums the squares of the *uncentered* values;
    see the module notes on the alternative (centered) reading.
    """
    xv = value_of(x)
    axis = check_axis(axis, xv.ndim, "feature_normalize input")
    if eps <= 0:
        raise ValueError("feature_normalize: eps must be positive")
    m = xv.shape[axis]
    mu = xv.mean(axis=axis, keepdims=True)
    denom = np.sqrt((xv * xv).sum(axis=axis, keepdims=True) + eps)
    y = (xv - mu) / denom

    def bw(g):
        gd = g / denom
        term1 = gd - gd.mean(axis=axis, keepdims=True)
        s = (g * (xv - mu)).sum(axis=axis, keepdims=True)
        return (term1 - xv * s / (denom**3),)

    return _emit("feature_normalize", y, (x,), bw)


# ---------------------------------------------------------------------------
# convolutions and spatial ops


def conv1x1(x, w, bias=None):
    """Pointwise channel mix of a (c_in, h, w) map by a (c_out, c_in) matrix.

    Exactly the matmul of `w` with the unrolled map, re-rolled.
    """
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 3 or wv.ndim != 2 or wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"conv1x1: weight {wv.shape} does not match input {xv.shape}")
    c_in, h, wd = xv.shape
    c_out = wv.shape[0]
    flat = xv.reshape(c_in, h * wd)
    out = (wv @ flat).reshape(c_out, h, wd)
    if bias is None:
        def bw(g):
            gf = g.reshape(c_out, h * wd)
            return ((wv.T @ gf).reshape(xv.shape), gf @ flat.T)

        return _emit("conv1x1", out, (x, w), bw)
    bv = value_of(bias)
    if bv.shape != (c_out,):
        raise ShapeError(f"conv1x1: bias {bv.shape} does not match {c_out} channels")

    def bwb(g):
        gf = g.reshape(c_out, h * wd)
        return ((wv.T @ gf).reshape(xv.shape), gf @ flat.T, gf.sum(axis=1))

    return _emit("conv1x1", out + bv[:, None, None], (x, w, bias), bwb)


def conv2d(x, w, bias=None, stride: int = 1):
    """2-D convolution, zero padding k//2, square stride. The hot kernel."""
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 3 or wv.ndim != 4 or wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"conv2d: weight {wv.shape} does not match input {xv.shape}")
    kh, kw = wv.shape[2:]
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels supported, got {wv.shape}")
    pad = kh // 2
    out = _kernels.conv2d_forward(xv, wv, stride, pad)
    c_out = wv.shape[0]
    if bias is None:
        def bw(g):
            return (
                _kernels.conv2d_input_grad(wv, g, xv.shape, stride, pad),
                _kernels.conv2d_weight_grad(xv, g, wv.shape, stride, pad),
            )

        return _emit("conv2d", out, (x, w), bw)
    bv = value_of(bias)
    if bv.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bv.shape} does not match {c_out} channels")

    def bwb(g):
        return (
            _kernels.conv2d_input_grad(wv, g, xv.shape, stride, pad),
            _kernels.conv2d_weight_grad(xv, g, wv.shape, stride, pad),
            g.sum(axis=(1, 2)),
        )

    return _emit("conv2d", out + bv[:, None, None], (x, w, bias), bwb)


def upsample_nearest2x(x):
    xv = value_of(x)
    if xv.ndim != 3:
        raise ShapeError(f"upsample_nearest2x expects (c,h,w), got {xv.shape}")
    out = np.repeat(np.repeat(xv, 2, axis=1), 2, axis=2)
    c, h, wd = xv.shape

    def bw(g):
        return (g.reshape(c, h, 2, wd, 2).sum(axis=(2, 4)),)

    return _emit("upsample_nearest2x", out, (x,), bw)


def global_avg_pool(x):
    """(c,h,w) -> (c,) spatial mean."""
    xv = value_of(x)
    if xv.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (c,h,w), got {xv.shape}")
    c, h, wd = xv.shape
    n = h * wd

    def bw(g):
        return (np.broadcast_to(g[:, None, None] / n, xv.shape).astype(xv.dtype),)

    return _emit("global_avg_pool", xv.mean(axis=(1, 2)), (x,), bw)


# ---------------------------------------------------------------------------
# codebook plumbing


def gather_rows(table, indices: np.ndarray):
    """Select rows of a (K,c) table; backward scatter-adds into the table."""
    tv = value_of(table)
    idx = np.asarray(indices, dtype=np.int64)
    if tv.ndim != 2:
        raise ShapeError(f"gather_rows expects a (K,c) table, got {tv.shape}")
    out = tv[idx]

    def bw(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx, g)
        return (gt,)

    return _emit("gather_rows", out, (table,), bw)


def straight_through(z, z_quantized):
    """Forward the quantized values, pass incoming gradient to `z` unchanged.

    The quantized operand contributes no gradient through this op: the
    codebook learns only through the quantization loss.
    """
    zv, qv = value_of(z), value_of(z_quantized)
    if zv.shape != qv.shape:
        raise ShapeError(f"straight_through: shapes {zv.shape} and {qv.shape} differ")
    return _emit("straight_through", qv.copy(), (z, z_quantized), lambda g: (g, None))
