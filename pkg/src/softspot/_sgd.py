"""Fused single-sample forward/backward/update for the three-stream network.

Numerically the same computation as ``softnet.backward`` followed by
``softnet.sgd_step`` (summation order differs), but without temporaries:
the conv gradients only visit the positions that won both max-pools.
"""

import numpy as np
from numba import njit

IN = 42
C1 = 14
C2 = 7
K = 5
NCH = 16
FLAT = C2 * C2 * NCH
HID = 400


@njit(cache=True, nogil=True, fastmath=True)
def _im2col(x, s):
    """``(1764, 25)`` zero-padded 5x5 patches of channel ``s``; row ``y * 42 + x``."""
    cols = np.zeros((IN * IN, K * K))
    for y in range(IN):
        for xx in range(IN):
            r = y * IN + xx
            for i in range(K):
                yy = y + i - 2
                if yy < 0 or yy >= IN:
                    continue
                for j in range(K):
                    xj = xx + j - 2
                    if 0 <= xj < IN:
                        cols[r, i * K + j] = x[yy, xj, s]
    return cols


@njit(cache=True, nogil=True, fastmath=True)
def _conv_relu_pool(cols, w, b, c0, concat, arg1, z_sign):
    """One stream: same conv, ReLU and 3x3 max-pool into ``concat[..., c0:c0+f]``."""
    f = w.shape[3]
    z = np.dot(cols, np.ascontiguousarray(w.reshape(K * K, f)))
    for py in range(C1):
        for px in range(C1):
            for c in range(f):
                best = -1.0  # pooled values are >= 0
                best_k = 0
                pos = False
                for dy in range(3):
                    for dx in range(3):
                        acc = z[(py * 3 + dy) * IN + px * 3 + dx, c] + b[c]
                        a = acc if acc > 0.0 else 0.0
                        if a > best:
                            best = a
                            best_k = dy * 3 + dx
                            pos = acc > 0.0
                concat[py, px, c0 + c] = best
                arg1[py, px, c0 + c] = best_k
                z_sign[py, px, c0 + c] = pos


@njit(cache=True, nogil=True, fastmath=True)
def sgd_step_fused(x, target, lr, w0, b0, w1, b1, w2, b2, W1, B1, W2, B2):
    """One SGD step on ``0.5 * (score - target)**2``, in place; returns the pre-update loss."""
    cols0 = _im2col(x, 0)
    cols1 = _im2col(x, 1)
    cols2 = _im2col(x, 2)
    concat = np.empty((C1, C1, NCH))
    arg1 = np.zeros((C1, C1, NCH), dtype=np.int64)
    z_sign = np.zeros((C1, C1, NCH), dtype=np.bool_)
    _conv_relu_pool(cols0, w0, b0, 0, concat, arg1, z_sign)
    _conv_relu_pool(cols1, w1, b1, 3, concat, arg1, z_sign)
    _conv_relu_pool(cols2, w2, b2, 8, concat, arg1, z_sign)

    flat = np.empty(FLAT)
    arg2 = np.empty(FLAT, dtype=np.int64)
    for py in range(C2):
        for px in range(C2):
            for c in range(NCH):
                best = -1.0  # pooled values are >= 0
                best_k = 0
                for dy in range(2):
                    for dx in range(2):
                        v = concat[py * 2 + dy, px * 2 + dx, c]
                        if v > best:
                            best = v
                            best_k = dy * 2 + dx
                n = (py * C2 + px) * NCH + c
                flat[n] = best
                arg2[n] = best_k

    h_pre = B1.copy()
    for n in range(FLAT):
        fn = flat[n]
        if fn != 0.0:
            for m in range(HID):
                h_pre[m] += fn * W1[n, m]
    score = B2[0]
    for m in range(HID):
        if h_pre[m] > 0.0:
            score += h_pre[m] * W2[m, 0]
    d = score - target

    dh = np.zeros(HID)
    for m in range(HID):
        if h_pre[m] > 0.0:
            dh[m] = d * W2[m, 0]
            W2[m, 0] -= lr * d * h_pre[m]
    B2[0] -= lr * d

    # d_flat uses each W1 row before that row is updated
    d_flat = np.zeros(FLAT)
    for n in range(FLAT):
        # eight independent partial sums keep the reduction pipelined
        part = np.zeros(8)
        for m0 in range(0, HID, 8):
            for r in range(8):
                part[r] += W1[n, m0 + r] * dh[m0 + r]
        d_flat[n] = part.sum()
        fn = lr * flat[n]
        if fn != 0.0:
            for m in range(HID):
                W1[n, m] -= fn * dh[m]
    for m in range(HID):
        B1[m] -= lr * dh[m]

    # route through both pools; a conv output gets gradient only if it won both
    for py in range(C2):
        for px in range(C2):
            for c in range(NCH):
                n = (py * C2 + px) * NCH + c
                g = d_flat[n]
                if g == 0.0:
                    continue
                k2 = arg2[n]
                cy = py * 2 + k2 // 2
                cx = px * 2 + k2 % 2
                if not z_sign[cy, cx, c]:
                    continue
                k1 = arg1[cy, cx, c]
                y = cy * 3 + k1 // 3
                xx = cx * 3 + k1 % 3
                r = y * IN + xx
                if c < 3:
                    cols, w, b, cc = cols0, w0, b0, c
                elif c < 8:
                    cols, w, b, cc = cols1, w1, b1, c - 3
                else:
                    cols, w, b, cc = cols2, w2, b2, c - 8
                for i in range(K):
                    for j in range(K):
                        w[i, j, 0, cc] -= lr * g * cols[r, i * K + j]
                b[cc] -= lr * g
    return 0.5 * d * d
