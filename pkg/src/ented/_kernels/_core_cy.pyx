# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: direct 2-D convolution (forward, input grad, weight
grad) and the nearest-codeword scan. Same contracts as _numpy_impl.

The convolution loops are ordered so the innermost index walks the last axis
of both operands with stride 1 (after hoisting the padding bounds out of the
loop), which lets the C compiler vectorize them. Unlike the im2col path in
_numpy_impl, nothing here materializes an intermediate buffer, so memory
stays at O(output) regardless of shape.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest i >= 0 with i*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t off, Py_ssize_t stride,
                           Py_ssize_t limit, Py_ssize_t n) noexcept nogil:
    # one past the largest i < n with i*stride + off < limit
    cdef Py_ssize_t top = limit - off
    if top <= 0:
        return 0
    top = (top + stride - 1) // stride
    return top if top < n else n


cdef void _fwd(real[:, :, ::1] x, real[:, :, :, ::1] w, real[:, :, ::1] y,
               Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = y.shape[1], ow = y.shape[2]
    cdef Py_ssize_t o, c, i, j, u, v, ii, jo, i0, i1, j0, j1
    cdef real wv
    for o in range(c_out):
        for c in range(c_in):
            for u in range(kh):
                i0 = _lo(u - pad, stride)
                i1 = _hi(u - pad, stride, h, oh)
                for v in range(kw):
                    wv = w[o, c, u, v]
                    j0 = _lo(v - pad, stride)
                    j1 = _hi(v - pad, stride, wd, ow)
                    jo = v - pad
                    for i in range(i0, i1):
                        ii = i * stride + u - pad
                        if stride == 1:
                            for j in range(j0, j1):
                                y[o, i, j] += wv * x[c, ii, j + jo]
                        else:
                            for j in range(j0, j1):
                                y[o, i, j] += wv * x[c, ii, j * stride + jo]


cdef void _wgrad(real[:, :, ::1] x, real[:, :, ::1] g, real[:, :, :, ::1] gw,
                 Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = g.shape[0], oh = g.shape[1], ow = g.shape[2]
    cdef Py_ssize_t kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t o, c, i, j, u, v, ii, jo, i0, i1, j0, j1
    cdef real acc
    for o in range(c_out):
        for c in range(c_in):
            for u in range(kh):
                i0 = _lo(u - pad, stride)
                i1 = _hi(u - pad, stride, h, oh)
                for v in range(kw):
                    j0 = _lo(v - pad, stride)
                    j1 = _hi(v - pad, stride, wd, ow)
                    jo = v - pad
                    acc = 0
                    for i in range(i0, i1):
                        ii = i * stride + u - pad
                        if stride == 1:
                            for j in range(j0, j1):
                                acc += g[o, i, j] * x[c, ii, j + jo]
                        else:
                            for j in range(j0, j1):
                                acc += g[o, i, j] * x[c, ii, j * stride + jo]
                    gw[o, c, u, v] = acc


cdef void _xgrad(real[:, :, :, ::1] w, real[:, :, ::1] g, real[:, :, ::1] gx,
                 Py_ssize_t stride, Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t c_out = w.shape[0], c_in = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = g.shape[1], ow = g.shape[2]
    cdef Py_ssize_t h = gx.shape[1], wd = gx.shape[2]
    cdef Py_ssize_t o, c, i, j, u, v, ii, jo, i0, i1, j0, j1
    cdef real wv
    for o in range(c_out):
        for c in range(c_in):
            for u in range(kh):
                i0 = _lo(u - pad, stride)
                i1 = _hi(u - pad, stride, h, oh)
                for v in range(kw):
                    wv = w[o, c, u, v]
                    j0 = _lo(v - pad, stride)
                    j1 = _hi(v - pad, stride, wd, ow)
                    jo = v - pad
                    for i in range(i0, i1):
                        ii = i * stride + u - pad
                        if stride == 1:
                            for j in range(j0, j1):
                                gx[c, ii, j + jo] += wv * g[o, i, j]
                        else:
                            for j in range(j0, j1):
                                gx[c, ii, j * stride + jo] += wv * g[o, i, j]


cdef void _nearest(real[:, ::1] vecs, real[:, ::1] table,
                   cnp.int64_t[::1] idx, real[::1] best) noexcept nogil:
    cdef Py_ssize_t n = vecs.shape[0], k = table.shape[0], c = vecs.shape[1]
    cdef Py_ssize_t i, j, m
    cdef real d, diff, b
    cdef Py_ssize_t bi
    for i in range(n):
        bi = 0
        b = 0
        for m in range(c):
            diff = vecs[i, m] - table[0, m]
            b += diff * diff
        for j in range(1, k):
            d = 0
            for m in range(c):
                diff = vecs[i, m] - table[j, m]
                d += diff * diff
            if d < b:
                b = d
                bi = j
        idx[i] = bi
        best[i] = b


def conv2d_forward(x, w, int stride, int pad):
    cdef Py_ssize_t oh = (x.shape[1] + 2 * pad - w.shape[2]) // stride + 1
    cdef Py_ssize_t ow = (x.shape[2] + 2 * pad - w.shape[3]) // stride + 1
    y = np.zeros((w.shape[0], oh, ow), dtype=x.dtype)
    if x.dtype == np.float64:
        _fwd[double](x, w, y, stride, pad)
    else:
        _fwd[float](x, w, y, stride, pad)
    return y


def conv2d_weight_grad(x, g_out, w_shape, int stride, int pad):
    gw = np.empty(w_shape, dtype=g_out.dtype)
    if x.dtype == np.float64:
        _wgrad[double](x, g_out, gw, stride, pad)
    else:
        _wgrad[float](x, g_out, gw, stride, pad)
    return gw


def conv2d_input_grad(w, g_out, x_shape, int stride, int pad):
    gx = np.zeros(x_shape, dtype=g_out.dtype)
    if w.dtype == np.float64:
        _xgrad[double](w, g_out, gx, stride, pad)
    else:
        _xgrad[float](w, g_out, gx, stride, pad)
    return gx


def nearest_rows(vectors, table):
    idx = np.empty(vectors.shape[0], dtype=np.int64)
    best = np.empty(vectors.shape[0], dtype=vectors.dtype)
    if vectors.dtype == np.float64:
        _nearest[double](vectors, table, idx, best)
    else:
        _nearest[float](vectors, table, idx, best)
    return idx, best
