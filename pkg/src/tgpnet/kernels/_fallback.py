"""Pure-numpy convolution kernels.

Used when the compiled ``_ckernels`` extension is unavailable or disabled via
``TGPNET_PURE_PYTHON=1``. Every function here has a twin with the same
signature in ``_ckernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, k, stride):
    # (n, c, ho, wo, k, k) strided view, no copy
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, padding):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        out = np.matmul(w.reshape(co, ci), x.reshape(n, ci, h * wd))
        return out.reshape(n, co, h, wd)
    cols = _windows(_pad(x, padding), k, stride)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 4, 5]))
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d_backward(x, w, gy, stride, padding):
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        xm = x.reshape(n, ci, h * wd)
        gym = gy.reshape(n, co, h * wd)
        gw = np.einsum("nop,nip->oi", gym, xm).reshape(co, ci, 1, 1)
        gx = np.matmul(w.reshape(co, ci).T, gym).reshape(n, ci, h, wd)
        return gx, gw
    ho, wo = gy.shape[2], gy.shape[3]
    cols = _windows(_pad(x, padding), k, stride)
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))
    gcols = np.tensordot(w, gy, axes=([0], [1]))  # (ci, k, k, n, ho, wo)
    gxp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                gcols[:, i, j].transpose(1, 0, 2, 3))
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp), gw


def dwconv_forward(x, w, padding):
    """Stride-1 depthwise correlation; ``w`` has shape (c, 1, k, k)."""
    n, c, h, wd = x.shape
    k = w.shape[2]
    xp = _pad(x, padding)
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    wk = w[:, 0]
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + ho, j:j + wo] * wk[:, i, j][:, None, None]
    return out


def dwconv_backward(x, w, gy, padding):
    n, c, h, wd = x.shape
    k = w.shape[2]
    xp = _pad(x, padding)
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros(xp.shape, dtype=x.dtype)
    gw = np.empty(w.shape, dtype=x.dtype)
    wk = w[:, 0]
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + ho, j:j + wo] += gy * wk[:, i, j][:, None, None]
            gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gy, xp[:, :, i:i + ho, j:j + wo])
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp), gw
