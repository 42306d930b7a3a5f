# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops. Same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()

NAME = "cython"

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad_t, int pad_l, int ho, int wo):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, ho, wo, k, k, c), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, oy, ox, dy, iy, ix0, dx0, dx1
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    # valid taps of one kernel row are contiguous in both arrays
                    ix0 = ox * stride - pad_l
                    dx0 = max(0, -ix0)
                    dx1 = min(k, w - ix0)
                    if dx1 <= dx0:
                        continue
                    for dy in range(k):
                        iy = oy * stride + dy - pad_t
                        if iy < 0 or iy >= h:
                            continue
                        memcpy(&cols[b, oy, ox, dy, dx0, 0], &x[b, iy, ix0 + dx0, 0],
                               (dx1 - dx0) * c * sizeof(real))
    return out


def col2im(real[:, :, :, :, :, ::1] cols, int h, int w, int stride, int pad_t, int pad_l):
    cdef Py_ssize_t n = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t k = cols.shape[3], c = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] dx_ = out
    cdef Py_ssize_t b, oy, ox, dy, i, iy, ix0, dx0, dx1
    cdef real* dst
    cdef const real* src
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    ix0 = ox * stride - pad_l
                    dx0 = max(0, -ix0)
                    dx1 = min(k, w - ix0)
                    if dx1 <= dx0:
                        continue
                    for dy in range(k):
                        iy = oy * stride + dy - pad_t
                        if iy < 0 or iy >= h:
                            continue
                        dst = &dx_[b, iy, ix0 + dx0, 0]
                        src = &cols[b, oy, ox, dy, dx0, 0]
                        for i in range((dx1 - dx0) * c):
                            dst[i] += src[i]
    return out


cdef inline void _dw_tap(const real* xr, const real* wr, real* orow,
                         Py_ssize_t c, Py_ssize_t mult) noexcept nogil:
    cdef Py_ssize_t ci, j
    if mult == 1:
        for ci in range(c):
            orow[ci] += xr[ci] * wr[ci]
    else:
        for ci in range(c):
            for j in range(mult):
                orow[ci * mult + j] += xr[ci] * wr[ci * mult + j]


def depthwise_forward(real[:, :, :, ::1] x, real[:, :, ::1] w, int mult, int stride,
                      int pad_t, int pad_l, int ho, int wo):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t k = w.shape[0]
    dtype = np.float32 if real is float else np.float64
    result = np.zeros((n, ho, wo, c * mult), dtype=dtype)
    cdef real[:, :, :, ::1] out = result
    cdef Py_ssize_t b, oy, ox, dy, dx, iy, ix
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for dy in range(k):
                        iy = oy * stride + dy - pad_t
                        if iy < 0 or iy >= h:
                            continue
                        for dx in range(k):
                            ix = ox * stride + dx - pad_l
                            if ix < 0 or ix >= wd:
                                continue
                            _dw_tap(&x[b, iy, ix, 0], &w[dy, dx, 0], &out[b, oy, ox, 0], c, mult)
    return result


def depthwise_backward(real[:, :, :, ::1] x, real[:, :, ::1] w, real[:, :, :, ::1] dout,
                       int mult, int stride, int pad_t, int pad_l):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], ho = dout.shape[1], wo = dout.shape[2]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, h, wd, c), dtype=dtype)
    dw_arr = np.zeros((k, k, c * mult), dtype=dtype)
    cdef real[:, :, :, ::1] dx_ = dx_arr
    cdef real[:, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, oy, ox, dy, dx, ci, j, iy, ix, co
    cdef const real* xr
    cdef const real* gr
    cdef const real* wr
    cdef real* dwr
    cdef real* dxr
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    gr = &dout[b, oy, ox, 0]
                    for dy in range(k):
                        iy = oy * stride + dy - pad_t
                        if iy < 0 or iy >= h:
                            continue
                        for dx in range(k):
                            ix = ox * stride + dx - pad_l
                            if ix < 0 or ix >= wd:
                                continue
                            xr = &x[b, iy, ix, 0]
                            dxr = &dx_[b, iy, ix, 0]
                            wr = &w[dy, dx, 0]
                            dwr = &dw[dy, dx, 0]
                            if mult == 1:
                                for ci in range(c):
                                    dwr[ci] += xr[ci] * gr[ci]
                                    dxr[ci] += gr[ci] * wr[ci]
                            else:
                                for ci in range(c):
                                    for j in range(mult):
                                        co = ci * mult + j
                                        dwr[co] += xr[ci] * gr[co]
                                        dxr[ci] += gr[co] * wr[co]
    return dx_arr, dw_arr


def maxpool_forward(real[:, :, :, ::1] x, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    result = np.empty((n, ho, wo, c), dtype=dtype)
    argres = np.zeros((n, ho, wo, c), dtype=np.int64)
    cdef real[:, :, :, ::1] out = result
    cdef cnp.int64_t[:, :, :, ::1] arg = argres
    cdef Py_ssize_t b, oy, ox, dy, dx, ci, iy, ix, y0, x0
    cdef cnp.int64_t flat
    cdef real* orow
    cdef cnp.int64_t* arow
    cdef const real* xr
    with nogil:
        for b in range(n):
            for oy in range(ho):
                y0 = oy * stride
                for ox in range(wo):
                    x0 = ox * stride
                    orow = &out[b, oy, ox, 0]
                    arow = &arg[b, oy, ox, 0]
                    xr = &x[b, y0, x0, 0]
                    for ci in range(c):
                        orow[ci] = xr[ci]
                        arow[ci] = y0 * w + x0
                    # scan order matches the numpy backend so ties pick the same index
                    for dy in range(k):
                        iy = y0 + dy
                        if iy >= h:
                            break
                        for dx in range(k):
                            ix = x0 + dx
                            if ix >= w:
                                break
                            xr = &x[b, iy, ix, 0]
                            flat = iy * w + ix
                            for ci in range(c):
                                if xr[ci] > orow[ci]:
                                    orow[ci] = xr[ci]
                                    arow[ci] = flat
    return result, argres


def maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] arg, int h, int w):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], c = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    result = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] dx_ = result
    cdef Py_ssize_t b, oy, ox, ci, idx
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for ci in range(c):
                        idx = arg[b, oy, ox, ci]
                        dx_[b, idx // w, idx % w, ci] += dout[b, oy, ox, ci]
    return result
