"""Direct-loop reference implementations of the convolution and pooling ops.

Deliberately naive: one scalar multiply-add per loop iteration. They exist to
check the vectorised paths in :mod:`ops` and are far too slow for training.
"""

import numpy as np


def conv2d(x, w, b, stride=1, pad=0):
    T, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((T, Cout, Ho, Wo), dtype=np.float64)
    for t in range(T):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = float(b[o])
                    for c in range(Cin):
                        for u in range(kh):
                            for v in range(kw):
                                hi = i * stride + u - pad
                                wi = j * stride + v - pad
                                if 0 <= hi < H and 0 <= wi < W:
                                    acc += float(x[t, c, hi, wi]) * float(w[o, c, u, v])
                    out[t, o, i, j] = acc
    return out


def conv1d_temporal(x, w, b, dilation=1):
    T, Cin, H, W = x.shape
    Cout, _, k = w.shape
    pad = dilation * (k - 1) // 2
    out = np.zeros((T, Cout, H, W), dtype=np.float64)
    for t in range(T):
        for o in range(Cout):
            for h in range(H):
                for s in range(W):
                    acc = float(b[o])
                    for c in range(Cin):
                        for u in range(k):
                            ti = t + u * dilation - pad
                            if 0 <= ti < T:
                                acc += float(x[ti, c, h, s]) * float(w[o, c, u])
                    out[t, o, h, s] = acc
    return out


def conv3d(x, w, b, stride=1, pad=(1, 1, 1)):
    T, Cin, H, W = x.shape
    Cout, _, kt, kh, kw = w.shape
    pt, ph, pw = pad
    To = T + 2 * pt - kt + 1
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    out = np.zeros((To, Cout, Ho, Wo), dtype=np.float64)
    for t in range(To):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = float(b[o])
                    for c in range(Cin):
                        for a in range(kt):
                            for u in range(kh):
                                for v in range(kw):
                                    ti, hi, wi = t + a - pt, i * stride + u - ph, j * stride + v - pw
                                    if 0 <= ti < T and 0 <= hi < H and 0 <= wi < W:
                                        acc += float(x[ti, c, hi, wi]) * float(w[o, c, a, u, v])
                    out[t, o, i, j] = acc
    return out


def maxpool2d(x, k, stride, pad=0):
    T, C, H, W = x.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((T, C, Ho, Wo), dtype=np.float64)
    for t in range(T):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = -np.inf
                    for u in range(k):
                        for v in range(k):
                            hi, wi = i * stride + u - pad, j * stride + v - pad
                            if 0 <= hi < H and 0 <= wi < W and x[t, c, hi, wi] > best:
                                best = x[t, c, hi, wi]
                    out[t, c, i, j] = best
    return out


def spatial_avgpool(x):
    T, C, H, W = x.shape
    out = np.zeros((T, C), dtype=np.float64)
    for t in range(T):
        for c in range(C):
            acc = 0.0
            for h in range(H):
                for s in range(W):
                    acc += float(x[t, c, h, s])
            out[t, c] = acc / (H * W)
    return out


def linear(x, w, b):
    n, C = x.shape
    K = w.shape[0]
    out = np.zeros((n, K), dtype=np.float64)
    for r in range(n):
        for q in range(K):
            acc = float(b[q])
            for c in range(C):
                acc += float(x[r, c]) * float(w[q, c])
            out[r, q] = acc
    return out
