"""Numba convolution kernels.

All kernels take the zero-padded input (n, c, h+2p, w+2p) and run plain
sequential loops with contiguous rows innermost so LLVM can vectorize the
per-row multiply-accumulate. Reduction order is fixed, so results are
deterministic for a fixed input. The stride-1 case is split into its own
loops: a loop-invariant stride branch in the innermost position defeats
the vectorizer.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv_forward(xp, w, b, stride, oh, ow):
    n, cin = xp.shape[0], xp.shape[1]
    cout, k = w.shape[0], w.shape[2]
    out = np.empty((n, cout, oh, ow), dtype=xp.dtype)
    if stride == 1:
        for ni in range(n):
            for oc in range(cout):
                for oy in range(oh):
                    row = out[ni, oc, oy]
                    row[:] = b[oc]
                    for ic in range(cin):
                        for ky in range(k):
                            xrow = xp[ni, ic, oy + ky]
                            for kx in range(k):
                                wv = w[oc, ic, ky, kx]
                                for ox in range(ow):
                                    row[ox] += wv * xrow[ox + kx]
        return out
    # strided: gather each input row into contiguous per-kx buffers once and
    # reuse them across output channels; per-row accumulation order over
    # (ic, ky, kx, ox) matches the stride-1 nest
    buf = np.empty((k, ow), dtype=xp.dtype)
    for ni in range(n):
        for oc in range(cout):
            out[ni, oc, :oh] = b[oc]
        for oy in range(oh):
            iy0 = oy * stride
            for ic in range(cin):
                for ky in range(k):
                    xrow = xp[ni, ic, iy0 + ky]
                    for kx in range(k):
                        for ox in range(ow):
                            buf[kx, ox] = xrow[ox * stride + kx]
                    for oc in range(cout):
                        row = out[ni, oc, oy]
                        for kx in range(k):
                            wv = w[oc, ic, ky, kx]
                            brow = buf[kx]
                            for ox in range(ow):
                                row[ox] += wv * brow[ox]
    return out


@njit(cache=True)
def conv_grad_input(gxp, w, g, stride):
    # accumulates into the caller-zeroed padded gradient buffer gxp
    n, cout, oh, ow = g.shape
    cin, k = w.shape[1], w.shape[2]
    if stride == 1 and cout < 4:
        for ni in range(n):
            for oc in range(cout):
                for oy in range(oh):
                    grow = g[ni, oc, oy]
                    for ic in range(cin):
                        for ky in range(k):
                            xrow = gxp[ni, ic, oy + ky]
                            for kx in range(k):
                                wv = w[oc, ic, ky, kx]
                                for ox in range(ow):
                                    xrow[ox + kx] += wv * grow[ox]
        return
    if stride == 1:
        # many output channels: fold them into a contiguous buffer first so
        # each padded-gradient row is touched k times instead of cout*k times
        acc = np.empty((k, ow), dtype=gxp.dtype)
        for ni in range(n):
            for oy in range(oh):
                for ic in range(cin):
                    for ky in range(k):
                        acc[:, :] = gxp.dtype.type(0.0)
                        for oc in range(cout):
                            grow = g[ni, oc, oy]
                            for kx in range(k):
                                wv = w[oc, ic, ky, kx]
                                arow = acc[kx]
                                for ox in range(ow):
                                    arow[ox] += wv * grow[ox]
                        xrow = gxp[ni, ic, oy + ky]
                        for kx in range(k):
                            arow = acc[kx]
                            for ox in range(ow):
                                xrow[ox + kx] += arow[ox]
        return
    # strided: sum the per-channel contributions in a contiguous buffer and
    # scatter it into the padded gradient once per (row, tap) pair
    acc = np.empty((k, ow), dtype=gxp.dtype)
    for ni in range(n):
        for oy in range(oh):
            iy0 = oy * stride
            for ic in range(cin):
                for ky in range(k):
                    acc[:, :] = gxp.dtype.type(0.0)
                    for oc in range(cout):
                        grow = g[ni, oc, oy]
                        for kx in range(k):
                            wv = w[oc, ic, ky, kx]
                            arow = acc[kx]
                            for ox in range(ow):
                                arow[ox] += wv * grow[ox]
                    xrow = gxp[ni, ic, iy0 + ky]
                    for kx in range(k):
                        arow = acc[kx]
                        for ox in range(ow):
                            xrow[ox * stride + kx] += arow[ox]


@njit(cache=True)
def conv_grad_weight(xp, g, stride, k):
    # rows outermost so each (grad, input) row pair is consumed once for all
    # taps; four interleaved partial sums per dot break the serial FMA latency
    # chain. The summation pattern is fixed, so results are run-to-run stable.
    n, cout, oh, ow = g.shape
    cin = xp.shape[1]
    gw = np.zeros((cout, cin, k, k), dtype=xp.dtype)
    zero = xp.dtype.type(0.0)
    buf = np.empty((k, ow), dtype=xp.dtype)
    for ni in range(n):
        for oy in range(oh):
            iy0 = oy * stride
            for ic in range(cin):
                for ky in range(k):
                    xrow = xp[ni, ic, iy0 + ky]
                    for kx in range(k):
                        brow = buf[kx]
                        if stride == 1:
                            for ox in range(ow):
                                brow[ox] = xrow[ox + kx]
                        else:
                            for ox in range(ow):
                                brow[ox] = xrow[ox * stride + kx]
                    for oc in range(cout):
                        grow = g[ni, oc, oy]
                        for kx in range(k):
                            brow = buf[kx]
                            s0 = zero
                            s1 = zero
                            s2 = zero
                            s3 = zero
                            ox = 0
                            while ox + 4 <= ow:
                                s0 += grow[ox] * brow[ox]
                                s1 += grow[ox + 1] * brow[ox + 1]
                                s2 += grow[ox + 2] * brow[ox + 2]
                                s3 += grow[ox + 3] * brow[ox + 3]
                                ox += 4
                            while ox < ow:
                                s0 += grow[ox] * brow[ox]
                                ox += 1
                            gw[oc, ic, ky, kx] += (s0 + s1) + (s2 + s3)
    return gw
