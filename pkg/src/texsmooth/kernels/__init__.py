"""Shared convolution entry points with backend dispatch and "same" padding.

Convolution is cross-correlation with symmetric zero padding (k-1)/2, so
output spatial dims are ceil(in/stride) for any odd kernel.
"""

from __future__ import annotations

import numpy as np

from . import conv_numpy
from .backend import ENV_VAR, active_backend, set_backend  # noqa: F401


def _impl():
    if active_backend() == "numba":
        from . import conv_numba

        return conv_numba
    return conv_numpy


def _validate(x, w, b, stride):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIKK weights, got {x.shape} / {w.shape}")
    cout, cin, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {k}x{k2}")
    if x.shape[1] != cin:
        raise ValueError(f"input channels {x.shape[1]} != weight in_channels {cin}")
    if b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} != ({cout},)")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not (x.dtype == w.dtype == b.dtype):
        raise ValueError(f"dtype mismatch: x {x.dtype}, w {w.dtype}, b {b.dtype}")


def _pad(x, k):
    p = (k - 1) // 2
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def out_size(size: int, stride: int) -> int:
    return (size - 1) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    _validate(x, w, b, stride)
    k = w.shape[2]
    oh, ow = out_size(x.shape[2], stride), out_size(x.shape[3], stride)
    xp = np.ascontiguousarray(_pad(x, k))
    return _impl().conv_forward(xp, np.ascontiguousarray(w), np.ascontiguousarray(b), stride, oh, ow)


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray, stride: int = 1):
    """Exact analytic gradients (grad_x, grad_w, grad_b) of conv2d_forward."""
    b = np.zeros(w.shape[0], dtype=w.dtype)
    _validate(x, w, b, stride)
    k = w.shape[2]
    oh, ow = out_size(x.shape[2], stride), out_size(x.shape[3], stride)
    if grad_out.shape != (x.shape[0], w.shape[0], oh, ow):
        raise ValueError(f"grad_out shape {grad_out.shape} != {(x.shape[0], w.shape[0], oh, ow)}")
    if grad_out.dtype != x.dtype:
        raise ValueError(f"grad_out dtype {grad_out.dtype} != input dtype {x.dtype}")
    impl = _impl()
    p = (k - 1) // 2
    xp = np.ascontiguousarray(_pad(x, k))
    g = np.ascontiguousarray(grad_out)
    w = np.ascontiguousarray(w)

    gxp = np.zeros_like(xp)
    impl.conv_grad_input(gxp, w, g, stride)
    grad_x = gxp[:, :, p : p + x.shape[2], p : p + x.shape[3]].copy() if p else gxp
    grad_w = impl.conv_grad_weight(xp, g, stride, k)
    grad_b = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
    return grad_x, grad_w, grad_b
