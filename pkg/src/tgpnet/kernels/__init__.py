"""Convolution kernels with a compiled fast path.

The Cython extension ``_ckernels`` is used when it imports cleanly; otherwise
(or when ``TGPNET_PURE_PYTHON=1`` is set) the numpy implementation in
``_fallback`` is used. ``BACKEND`` names the active one.
"""
import os

from . import _fallback

if os.environ.get("TGPNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
dwconv_forward = _impl.dwconv_forward
dwconv_backward = _impl.dwconv_backward

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "dwconv_forward", "dwconv_backward"]
