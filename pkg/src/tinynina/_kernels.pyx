# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_kernels_py`` function for function."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def im2col(const double[:, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t c = xp.shape[0]
    cols_arr = np.empty((c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t ch, i, j, y, x, row, col
    with nogil:
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    row = (ch * k + i) * k + j
                    col = 0
                    for y in range(ho):
                        for x in range(wo):
                            cols[row, col] = xp[ch, y * stride + i, x * stride + j]
                            col += 1
    return cols_arr


def col2im(const double[:, ::1] cols, int c, int hp, int wp, int k, int stride,
           int ho, int wo):
    out_arr = np.zeros((c, hp, wp), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y, x, row, col
    with nogil:
        for i in range(k):
            for j in range(k):
                for ch in range(c):
                    row = (ch * k + i) * k + j
                    col = 0
                    for y in range(ho):
                        for x in range(wo):
                            out[ch, y * stride + i, x * stride + j] += cols[row, col]
                            col += 1
    return out_arr


def depthwise_forward(const double[:, :, ::1] xp, const double[:, :, ::1] w,
                      const double[::1] b):
    cdef Py_ssize_t c = xp.shape[0]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t h = xp.shape[1] - k + 1
    cdef Py_ssize_t wd = xp.shape[2] - k + 1
    out_arr = np.empty((c, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y, x
    cdef double acc, wt
    with nogil:
        for ch in range(c):
            for y in range(h):
                for x in range(wd):
                    out[ch, y, x] = b[ch]
            for i in range(k):
                for j in range(k):
                    wt = w[ch, i, j]
                    for y in range(h):
                        for x in range(wd):
                            out[ch, y, x] = out[ch, y, x] + wt * xp[ch, y + i, x + j]
    return out_arr


def depthwise_backward(const double[:, :, ::1] xp, const double[:, :, ::1] w,
                       const double[:, :, ::1] gout):
    cdef Py_ssize_t c = gout.shape[0]
    cdef Py_ssize_t h = gout.shape[1]
    cdef Py_ssize_t wd = gout.shape[2]
    cdef Py_ssize_t k = w.shape[1]
    gxp_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=np.float64)
    gw_arr = np.empty((w.shape[0], w.shape[1], w.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] gxp = gxp_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t ch, i, j, y, x
    cdef double acc, wt, g
    with nogil:
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wt = w[ch, i, j]
                    acc = 0.0
                    for y in range(h):
                        for x in range(wd):
                            g = gout[ch, y, x]
                            gxp[ch, y + i, x + j] = gxp[ch, y + i, x + j] + wt * g
                            acc = acc + g * xp[ch, y + i, x + j]
                    gw[ch, i, j] = acc
    return gxp_arr, gw_arr


def resample_axis(const double[:, :, ::1] x, const cnp.intp_t[:, ::1] idx,
                  const double[:, ::1] wts, int axis):
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef Py_ssize_t n_out = idx.shape[0]
    cdef Py_ssize_t taps = idx.shape[1]
    cdef Py_ssize_t ch, o, t, y, xx
    cdef double wt
    cdef double[:, :, ::1] out
    if axis == 1:
        out_arr = np.empty((c, n_out, w), dtype=np.float64)
        out = out_arr
        with nogil:
            for ch in range(c):
                for o in range(n_out):
                    wt = wts[o, 0]
                    for xx in range(w):
                        out[ch, o, xx] = wt * x[ch, idx[o, 0], xx]
                    for t in range(1, taps):
                        wt = wts[o, t]
                        for xx in range(w):
                            out[ch, o, xx] = out[ch, o, xx] + wt * x[ch, idx[o, t], xx]
    else:
        out_arr = np.empty((c, h, n_out), dtype=np.float64)
        out = out_arr
        with nogil:
            for ch in range(c):
                for y in range(h):
                    for o in range(n_out):
                        out[ch, y, o] = wts[o, 0] * x[ch, y, idx[o, 0]]
                        for t in range(1, taps):
                            out[ch, y, o] = out[ch, y, o] + wts[o, t] * x[ch, y, idx[o, t]]
    return out_arr


def resample_axis_T(const double[:, :, ::1] g, const cnp.intp_t[:, ::1] idx,
                    const double[:, ::1] wts, int n_in, int axis):
    cdef Py_ssize_t c = g.shape[0]
    cdef Py_ssize_t n_out = idx.shape[0]
    cdef Py_ssize_t taps = idx.shape[1]
    cdef Py_ssize_t ch, o, t, y, xx, src
    cdef double wt
    cdef double[:, :, ::1] out
    if axis == 1:
        out_arr = np.zeros((c, n_in, g.shape[2]), dtype=np.float64)
        out = out_arr
        with nogil:
            for t in range(taps):
                for o in range(n_out):
                    wt = wts[o, t]
                    src = idx[o, t]
                    for ch in range(c):
                        for xx in range(g.shape[2]):
                            out[ch, src, xx] = out[ch, src, xx] + wt * g[ch, o, xx]
    else:
        out_arr = np.zeros((c, g.shape[1], n_in), dtype=np.float64)
        out = out_arr
        with nogil:
            for t in range(taps):
                for o in range(n_out):
                    wt = wts[o, t]
                    src = idx[o, t]
                    for ch in range(c):
                        for y in range(g.shape[1]):
                            out[ch, y, src] = out[ch, y, src] + wt * g[ch, y, o]
    return out_arr
