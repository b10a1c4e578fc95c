"""Pure-numpy fallback for the hot kernels.

Convolutions go through im2col + BLAS matmul; the nearest-codeword scan is a
full vectorized distance matrix. Shapes follow the package convention:
feature maps are (channels, height, width), conv weights are
(c_out, c_in, kh, kw), zero padding, square stride.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(c_in, h, w) -> (c_in*kh*kw, oh*ow) column matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c_in, oh, ow = win.shape[:3]
    return (
        np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * kh * kw, oh * ow),
        oh,
        ow,
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    c_out, c_in, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    return (w.reshape(c_out, -1) @ cols).reshape(c_out, oh, ow)


def conv2d_weight_grad(
    x: np.ndarray, g_out: np.ndarray, w_shape: tuple, stride: int, pad: int
) -> np.ndarray:
    c_out, c_in, kh, kw = w_shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    return (g_out.reshape(c_out, -1) @ cols.T).reshape(w_shape)


def conv2d_input_grad(
    w: np.ndarray, g_out: np.ndarray, x_shape: tuple, stride: int, pad: int
) -> np.ndarray:
    c_out, c_in, kh, kw = w.shape
    _, h, wd = x_shape
    oh, ow = g_out.shape[1:]
    gcols = (w.reshape(c_out, -1).T @ g_out.reshape(c_out, -1)).reshape(c_in, kh, kw, oh, ow)
    gx = np.zeros((c_in, h + 2 * pad, wd + 2 * pad), dtype=g_out.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, i, j]
    if pad:
        gx = gx[:, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(gx)


def nearest_rows(vectors: np.ndarray, table: np.ndarray):
    """For each row of `vectors`, the index of the closest `table` row.

    Squared L2 distance; exact ties resolve to the lowest index (argmin keeps
    the first minimum). Returns (indices int64, squared distances).
    """
    diff = vectors[:, None, :] - table[None, :, :]
    d2 = np.einsum("nkc,nkc->nk", diff, diff)
    idx = np.argmin(d2, axis=1)
    return idx.astype(np.int64), d2[np.arange(len(idx)), idx]
