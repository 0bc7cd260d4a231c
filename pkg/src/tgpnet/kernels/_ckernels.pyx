# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (same contract as ``_fallback``)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef void _im2col(const floating[:, :, :, ::1] x, floating[:, ::1] cols, int k,
                  int stride, int pad, int ho, int wo) noexcept nogil:
    # cols row = (ci, i, j), column = (n, oy, ox)
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row, col
    for c in range(ci):
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                col = 0
                for b in range(n):
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            for ox in range(wo):
                                cols[row, col] = 0
                                col += 1
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                cols[row, col] = 0
                            else:
                                cols[row, col] = x[b, c, iy, ix]
                            col += 1


cdef void _col2im(const floating[:, ::1] cols, floating[:, :, :, ::1] gx, int k,
                  int stride, int pad, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n = gx.shape[0], ci = gx.shape[1], h = gx.shape[2], w = gx.shape[3]
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row, col
    for c in range(ci):
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                col = 0
                for b in range(n):
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            col += wo
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if ix >= 0 and ix < w:
                                gx[b, c, iy, ix] += cols[row, col]
                            col += 1


def _im2col_py(const floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo, dtype):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1]
    cols = np.empty((ci * k * k, n * ho * wo), dtype=dtype)
    cdef floating[:, ::1] cv = cols
    with nogil:
        _im2col(x, cv, k, stride, pad, ho, wo)
    return cols


def conv2d_forward(x, w, int stride, int padding):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        out = np.matmul(w.reshape(co, ci), x.reshape(n, ci, h * wd))
        return out.reshape(n, co, h, wd)
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    x = np.ascontiguousarray(x)
    cols = _im2col_py(x, k, stride, padding, ho, wo, x.dtype)
    out = np.dot(np.ascontiguousarray(w).reshape(co, -1), cols)
    return np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_backward(x, w, gy, int stride, int padding):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        xm = x.reshape(n, ci, h * wd)
        gym = gy.reshape(n, co, h * wd)
        gw = np.einsum("nop,nip->oi", gym, xm).reshape(co, ci, 1, 1)
        gx = np.matmul(w.reshape(co, ci).T, gym).reshape(n, ci, h, wd)
        return gx, gw
    ho, wo = gy.shape[2], gy.shape[3]
    x = np.ascontiguousarray(x)
    cols = _im2col_py(x, k, stride, padding, ho, wo, x.dtype)
    gym = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(co, -1)
    gw = np.dot(gym, cols.T).reshape(w.shape)
    gcols = np.ascontiguousarray(np.dot(np.ascontiguousarray(w).reshape(co, -1).T, gym))
    gx = np.zeros(x.shape, dtype=x.dtype)
    _col2im_dispatch(gcols, gx, k, stride, padding, ho, wo)
    return gx, gw


def _col2im_dispatch(const floating[:, ::1] cols, floating[:, :, :, ::1] gx, int k,
                     int stride, int pad, int ho, int wo):
    with nogil:
        _col2im(cols, gx, k, stride, pad, ho, wo)


cdef void _dw_fwd(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                  floating[:, :, :, ::1] out, int pad) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[2], ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, ox0, ox1
    cdef floating wv
    for b in range(n):
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wv = w[ch, 0, i, j]
                    # valid ox range: 0 <= ox + j - pad < wd
                    ox0 = pad - j
                    if ox0 < 0:
                        ox0 = 0
                    ox1 = wd + pad - j
                    if ox1 > wo:
                        ox1 = wo
                    for oy in range(ho):
                        iy = oy + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox0, ox1):
                            out[b, ch, oy, ox] += wv * x[b, ch, iy, ox + j - pad]


cdef void _dw_bwd(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                  const floating[:, :, :, ::1] gy, floating[:, :, :, ::1] gx,
                  floating[:, :, :, ::1] gw, int pad) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[2], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ox0, ox1
    cdef floating wv, acc, g
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                wv = w[ch, 0, i, j]
                ox0 = pad - j
                if ox0 < 0:
                    ox0 = 0
                ox1 = wd + pad - j
                if ox1 > wo:
                    ox1 = wo
                acc = 0
                for b in range(n):
                    for oy in range(ho):
                        iy = oy + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox0, ox1):
                            g = gy[b, ch, oy, ox]
                            acc = acc + g * x[b, ch, iy, ox + j - pad]
                            gx[b, ch, iy, ox + j - pad] += wv * g
                gw[ch, 0, i, j] = acc


def _dw_fwd_dispatch(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                     floating[:, :, :, ::1] out, int pad):
    with nogil:
        _dw_fwd(x, w, out, pad)


def _dw_bwd_dispatch(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                     const floating[:, :, :, ::1] gy, floating[:, :, :, ::1] gx,
                     floating[:, :, :, ::1] gw, int pad):
    with nogil:
        _dw_bwd(x, w, gy, gx, gw, pad)


def dwconv_forward(x, w, int padding):
    n, c, h, wd = x.shape
    k = w.shape[2]
    out = np.zeros((n, c, h + 2 * padding - k + 1, wd + 2 * padding - k + 1), dtype=x.dtype)
    _dw_fwd_dispatch(np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype), out, padding)
    return out


def dwconv_backward(x, w, gy, int padding):
    x = np.ascontiguousarray(x)
    gx = np.zeros(x.shape, dtype=x.dtype)
    gw = np.empty(w.shape, dtype=x.dtype)
    _dw_bwd_dispatch(x, np.ascontiguousarray(w, dtype=x.dtype),
                     np.ascontiguousarray(gy, dtype=x.dtype), gx, gw, padding)
    return gx, gw
