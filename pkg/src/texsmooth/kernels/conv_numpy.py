"""Pure-numpy convolution fallback via im2col + BLAS matmul."""

import numpy as np


def _im2col(xp, k, stride, oh, ow):
    n, cin = xp.shape[0], xp.shape[1]
    cols = np.empty((n, cin * k * k, oh * ow), dtype=xp.dtype)
    i = 0
    for ic in range(cin):
        for ky in range(k):
            for kx in range(k):
                patch = xp[:, ic, ky : ky + oh * stride : stride, kx : kx + ow * stride : stride]
                cols[:, i, :] = patch.reshape(n, -1)
                i += 1
    return cols


def conv_forward(xp, w, b, stride, oh, ow):
    n = xp.shape[0]
    cout, cin, k, _ = w.shape
    cols = _im2col(xp, k, stride, oh, ow)
    out = w.reshape(cout, -1) @ cols
    out += b.reshape(1, cout, 1)
    return out.reshape(n, cout, oh, ow)


def conv_grad_input(gxp, w, g, stride):
    n, cout, oh, ow = g.shape
    cin, k = w.shape[1], w.shape[2]
    g2 = g.reshape(n, cout, oh * ow)
    cols_grad = w.reshape(cout, -1).T @ g2  # (n, cin*k*k, oh*ow)
    i = 0
    for ic in range(cin):
        for ky in range(k):
            for kx in range(k):
                view = gxp[:, ic, ky : ky + oh * stride : stride, kx : kx + ow * stride : stride]
                view += cols_grad[:, i, :].reshape(n, oh, ow)
                i += 1


def conv_grad_weight(xp, g, stride, k):
    n, cout, oh, ow = g.shape
    cin = xp.shape[1]
    cols = _im2col(xp, k, stride, oh, ow)
    g2 = g.reshape(n, cout, oh * ow)
    gw = np.einsum("nop,nip->oi", g2, cols, optimize=True)
    return np.ascontiguousarray(gw.reshape(cout, cin, k, k), dtype=xp.dtype)
