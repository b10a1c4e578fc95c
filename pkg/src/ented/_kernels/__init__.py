"""Hot-kernel dispatch: compiled core when available, numpy otherwise.

The backend is chosen once at import. ``ENTED_FORCE_NUMPY=1`` forces the
fallback (useful for the benchmark and for debugging a suspect build);
``BACKEND`` reports which one is active. Both backends implement the same
contracts, so everything above this layer is backend-agnostic.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy_impl

_compiled = None
if os.environ.get("ENTED_FORCE_NUMPY", "") != "1":
    try:
        from . import _core_cy as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"

_REAL = (np.float32, np.float64)

# The numpy convolution materializes the im2col matrix (c_in*kh*kw rows by
# oh*ow columns) and hands it to BLAS, which wins on time at every shape the
# benchmark covers but costs O(k^2) extra memory: nearly 5 GB per call at
# 256 channels and 512x512. The compiled direct loop never materializes
# anything, so it takes over once that buffer would get big enough to
# threaten the machine. The cutoff is a fixed byte count, making the dispatch
# a pure function of shapes: two runs of the same config always take the same
# code path.
_IM2COL_BYTE_LIMIT = 256 * 1024 * 1024


def _usable(x: np.ndarray):
    return _compiled is not None and x.dtype.type in _REAL and x.flags.c_contiguous


def _pick_conv(x: np.ndarray, cols: int, w_shape):
    c_out, c_in, kh, kw = w_shape
    if _usable(x) and c_in * kh * kw * cols * x.itemsize > _IM2COL_BYTE_LIMIT:
        return _compiled
    return _numpy_impl


def _out_hw(in_hw, w_shape, stride: int, pad: int) -> int:
    oh = (in_hw[0] + 2 * pad - w_shape[2]) // stride + 1
    ow = (in_hw[1] + 2 * pad - w_shape[3]) // stride + 1
    return oh * ow


def conv2d_forward(x, w, stride: int, pad: int):
    impl = _pick_conv(x, _out_hw(x.shape[1:], w.shape, stride, pad), w.shape)
    return impl.conv2d_forward(x, w, stride, pad)


def conv2d_weight_grad(x, g_out, w_shape, stride: int, pad: int):
    impl = _pick_conv(x, g_out.shape[1] * g_out.shape[2], w_shape)
    return impl.conv2d_weight_grad(x, np.ascontiguousarray(g_out), w_shape, stride, pad)


def conv2d_input_grad(w, g_out, x_shape, stride: int, pad: int):
    impl = _pick_conv(w, g_out.shape[1] * g_out.shape[2], w.shape)
    return impl.conv2d_input_grad(w, np.ascontiguousarray(g_out), x_shape, stride, pad)


def nearest_rows(vectors, table):
    """Index of the closest table row per vector (squared L2, ties low)."""
    vectors = np.ascontiguousarray(vectors)
    table = np.ascontiguousarray(table)
    impl = _compiled if _usable(vectors) and table.flags.c_contiguous else _numpy_impl
    idx, _ = impl.nearest_rows(vectors, table)
    return idx
