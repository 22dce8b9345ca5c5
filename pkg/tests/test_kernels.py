"""Convolution kernels against a scipy oracle, plus backend cross-checks."""

import numpy as np
import pytest
from scipy.signal import correlate2d

from texsmooth.kernels import active_backend, conv2d_backward, conv2d_forward, out_size, set_backend


def conv_oracle(x, w, b, stride):
    """Direct per-channel correlate2d with zero padding, then stride subsample."""
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    full = np.zeros((n, cout, h, wd), dtype=np.float64)
    for i in range(n):
        for o in range(cout):
            acc = np.zeros((h, wd))
            for c in range(cin):
                acc += correlate2d(x[i, c].astype(np.float64), w[o, c].astype(np.float64), mode="same")
            full[i, o] = acc + float(b[o])
    return full[:, :, ::stride, ::stride]


@pytest.fixture(autouse=True)
def reset_backend():
    yield
    set_backend(None)


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_forward_matches_scipy(stride, k):
    rng = np.random.default_rng(7 * k + stride)
    x = rng.standard_normal((2, 3, 9, 11)).astype(np.float64)
    w = rng.standard_normal((4, 3, k, k)).astype(np.float64)
    b = rng.standard_normal(4).astype(np.float64)
    got = conv2d_forward(x, w, b, stride)
    want = conv_oracle(x, w, b, stride)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-10


def test_hand_example_all_ones():
    # 3x3 ones kernel on 3x3 ones input, zero pad: center sees 9, corners 4
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    y = conv2d_forward(x, w, b, 1)[0, 0]
    assert y[1, 1] == 9.0
    assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4.0
    assert y[0, 1] == 6.0


def test_identity_1x1_kernel():
    rng = np.random.default_rng(1)
    x = rng.random((2, 3, 5, 5)).astype(np.float32)
    w = np.zeros((3, 3, 1, 1), dtype=np.float32)
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    y = conv2d_forward(x, w, np.zeros(3, dtype=np.float32), 1)
    assert np.array_equal(y, x)


def test_output_shape_is_ceil_div():
    assert out_size(64, 2) == 32
    assert out_size(7, 2) == 4
    assert out_size(9, 3) == 3
    x = np.zeros((1, 1, 64, 64), dtype=np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    y = conv2d_forward(x, w, np.zeros(1, dtype=np.float32), 2)
    assert y.shape == (1, 1, 32, 32)


def test_backward_bias_is_sum_and_zero_grad():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 6, 6)).astype(np.float64)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float64)
    g = rng.standard_normal((2, 3, 6, 6)).astype(np.float64)
    gx, gw, gb = conv2d_backward(x, w, g, 1)
    assert np.allclose(gb, g.sum(axis=(0, 2, 3)), atol=1e-12)
    gx0, gw0, gb0 = conv2d_backward(x, w, np.zeros_like(g), 1)
    assert not gx0.any() and not gw0.any() and not gb0.any()


@pytest.mark.parametrize("stride", [1, 2])
def test_backward_matches_finite_differences(stride):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal(2)
    r = rng.standard_normal(conv2d_forward(x, w, b, stride).shape)

    def loss():
        return float((conv2d_forward(x, w, b, stride) * r).sum())

    gx, gw, gb = conv2d_backward(x, w, r, stride)
    eps = 1e-6
    for arr, grad in ((x, gx), (w, gw)):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = loss()
            flat[i] = keep - eps
            down = loss()
            flat[i] = keep
            num = (up - down) / (2 * eps)
            ana = grad.reshape(-1)[i]
            assert abs(num - ana) <= 1e-5 * max(1.0, abs(num))


def test_backends_agree():
    if active_backend() != "numba":
        pytest.skip("numba backend unavailable")
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 8, 9)).astype(np.float32)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    g_shape = (2, 5, out_size(8, 2), out_size(9, 2))
    g = rng.standard_normal(g_shape).astype(np.float32)

    set_backend("numba")
    y1 = conv2d_forward(x, w, b, 2)
    bx1, bw1, bb1 = conv2d_backward(x, w, g, 2)
    set_backend("numpy")
    y2 = conv2d_forward(x, w, b, 2)
    bx2, bw2, bb2 = conv2d_backward(x, w, g, 2)

    assert np.allclose(y1, y2, rtol=1e-5, atol=1e-6)
    assert np.allclose(bx1, bx2, rtol=1e-5, atol=1e-6)
    assert np.allclose(bw1, bw2, rtol=1e-4, atol=1e-5)
    assert np.allclose(bb1, bb2, rtol=1e-5, atol=1e-6)


def test_validation_errors():
    x = np.zeros((1, 2, 4, 4), dtype=np.float32)
    w = np.zeros((1, 3, 3, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        conv2d_forward(x, w, np.zeros(1, dtype=np.float32), 1)  # channel mismatch
    w_even = np.zeros((1, 2, 2, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        conv2d_forward(x, w_even, np.zeros(1, dtype=np.float32), 1)
    w_ok = np.zeros((1, 2, 3, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        conv2d_forward(x, w_ok, np.zeros(2, dtype=np.float32), 1)  # bias shape
    with pytest.raises(ValueError):
        conv2d_forward(x, w_ok, np.zeros(1, dtype=np.float32), 0)  # stride
    with pytest.raises(ValueError):
        conv2d_forward(x.astype(np.float64), w_ok, np.zeros(1, dtype=np.float32), 1)
