"""Independent reference implementations used as test oracles.

Nothing here imports the package's numerical kernels; each function is a
direct, slow transcription of the definition.
"""

from __future__ import annotations

import math

import numpy as np


def conv1d_loops(x, w, b=None):
    """Same-padded stride-1 cross-correlation by explicit loops."""
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    p = (K - 1) // 2
    out = np.zeros((B, Cout, L))
    for n in range(B):
        for o in range(Cout):
            for t in range(L):
                acc = 0.0 if b is None else float(b[o])
                for c in range(Cin):
                    for k in range(K):
                        j = t + k - p
                        if 0 <= j < L:
                            acc += w[o, c, k] * x[n, c, j]
                out[n, o, t] = acc
    return out


def maxpool1d_loops(x, m):
    B, C, L = x.shape
    Lo = math.ceil(L / m)
    out = np.empty((B, C, Lo))
    for n in range(B):
        for c in range(C):
            for i in range(Lo):
                out[n, c, i] = max(x[n, c, i * m:min(L, (i + 1) * m)])
    return out


def conv_transpose1d_loops(x, w, stride, padding):
    B, Cin, L = x.shape
    _, Cout, K = w.shape
    Lout = (L - 1) * stride - 2 * padding + K
    out = np.zeros((B, Cout, Lout))
    for n in range(B):
        for c in range(Cin):
            for i in range(L):
                for o in range(Cout):
                    for k in range(K):
                        t = i * stride + k - padding
                        if 0 <= t < Lout:
                            out[n, o, t] += x[n, c, i] * w[c, o, k]
    return out


def central_difference(f, arrays, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``arrays``
    (perturbed in place and restored)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = f()
            a[i] = old - eps
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def ricker_direct(t, a):
    """Mexican-hat wavelet evaluated pointwise, normalized to unit energy."""
    A = 2.0 / (math.sqrt(3.0 * a) * math.pi ** 0.25)
    return A * (1 - (t / a) ** 2) * np.exp(-0.5 * (t / a) ** 2)


def dense_cwt_argmax(row, widths):
    """Position of the largest wavelet response over all widths and shifts,
    computed by explicit dot products with shifted wavelets."""
    n = len(row)
    idx = np.arange(n)
    best, pos = -np.inf, -1
    for a in widths:
        for c in range(n):
            v = float(np.dot(row, ricker_direct(idx - c, a)))
            if v > best:
                best, pos = v, c
    return pos


def dense_cwt_local_peaks(row, widths, min_sep=50):
    """Centers of the strongest separated responses of the dense CWT summed over widths."""
    n = len(row)
    idx = np.arange(n)
    resp = np.zeros(n)
    for a in widths:
        for c in range(n):
            resp[c] += float(np.dot(row, ricker_direct(idx - c, a)))
    out = []
    order = np.argsort(-resp)
    for c in order:
        if resp[c] <= 0:
            break
        if all(abs(c - o) >= min_sep for o in out):
            out.append(int(c))
    return sorted(out)


def svm_dual_projected_gradient(K, y, C, iters=200_000, lr=None):
    """Maximize sum(a) - 1/2 a^T Q a s.t. 0 <= a <= C, y^T a = 0 by projected
    gradient ascent; the projection onto the hyperplane-box intersection is
    found by bisection on the multiplier."""
    y = np.asarray(y, dtype=float)
    Q = (y[:, None] * y[None, :]) * K
    n = len(y)
    lr = 1.0 / np.linalg.eigvalsh(Q).max() if lr is None else lr
    a = np.zeros(n)

    def project(v):
        lo, hi = -1e6, 1e6
        for _ in range(200):
            mu = 0.5 * (lo + hi)
            s = y @ np.clip(v - mu * y, 0, C)
            if s > 0:
                lo = mu
            else:
                hi = mu
        return np.clip(v - 0.5 * (lo + hi) * y, 0, C)

    for _ in range(iters):
        a_new = project(a + lr * (1 - Q @ a))
        if np.max(np.abs(a_new - a)) < 1e-12:
            a = a_new
            break
        a = a_new
    free = (a > 1e-8) & (a < C - 1e-8)
    g = y - (Q @ a) * y  # y_i - sum_j a_j y_j K_ij
    sv = free if free.any() else a > 1e-8
    b = float(np.mean(g[sv])) if sv.any() else 0.0
    return a, b


def pairwise_distance_means(X, y):
    intra, inter = [], []
    for i in range(len(X)):
        for j in range(i + 1, len(X)):
            d = math.dist(X[i], X[j])
            (intra if y[i] == y[j] else inter).append(d)
    return (float(np.mean(intra)) if intra else None, float(np.mean(inter)) if inter else None)
