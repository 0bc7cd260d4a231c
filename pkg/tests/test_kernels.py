import importlib

import numpy as np
import pytest

from tgpnet import kernels
from tgpnet.kernels import _fallback

compiled = pytest.importorskip("tgpnet.kernels._ckernels")

CASES = [(3, 1, 1), (1, 1, 0), (7, 2, 3), (3, 2, 1)]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride,pad", CASES)
def test_conv_backends_agree(dtype, k, stride, pad):
    rng = np.random.default_rng(k + stride)
    x = rng.normal(size=(2, 3, 9, 9)).astype(dtype)
    w = rng.normal(size=(4, 3, k, k)).astype(dtype)
    y_c = compiled.conv2d_forward(x, w, stride, pad)
    y_p = _fallback.conv2d_forward(x, w, stride, pad)
    tol = 1e-4 if dtype == np.float32 else 1e-12
    assert y_c.dtype == dtype and np.allclose(y_c, y_p, atol=tol)
    gy = rng.normal(size=y_c.shape).astype(dtype)
    for a, b in zip(compiled.conv2d_backward(x, w, gy, stride, pad),
                    _fallback.conv2d_backward(x, w, gy, stride, pad)):
        assert np.allclose(a, b, atol=tol * 10)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_depthwise_backends_agree(dtype):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 7, 6)).astype(dtype)
    w = rng.normal(size=(5, 1, 3, 3)).astype(dtype)
    tol = 1e-4 if dtype == np.float32 else 1e-12
    assert np.allclose(compiled.dwconv_forward(x, w, 1), _fallback.dwconv_forward(x, w, 1), atol=tol)
    gy = rng.normal(size=x.shape).astype(dtype)
    for a, b in zip(compiled.dwconv_backward(x, w, gy, 1), _fallback.dwconv_backward(x, w, gy, 1)):
        assert np.allclose(a, b, atol=tol * 10)


def test_backend_selection(monkeypatch):
    assert kernels.BACKEND == "cython"
    monkeypatch.setenv("TGPNET_PURE_PYTHON", "1")
    try:
        assert importlib.reload(kernels).BACKEND == "python"
    finally:
        monkeypatch.delenv("TGPNET_PURE_PYTHON")
        importlib.reload(kernels)
