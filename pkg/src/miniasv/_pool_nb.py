"""Numba builds of the pooling kernels.

Loop-for-loop mirror of ``_pool_np``; same signatures, same floor and
subgradient conventions. Kept in explicit loops because the per-utterance
call sizes are small enough that dispatch and temporaries dominate the
vectorized path.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _softmax_time(scores):
    T, H, J = scores.shape
    out = np.empty_like(scores)
    for h in range(H):
        for j in range(J):
            mx = scores[0, h, j]
            for t in range(1, T):
                if scores[t, h, j] > mx:
                    mx = scores[t, h, j]
            total = 0.0
            for t in range(T):
                e = np.exp(scores[t, h, j] - mx)
                out[t, h, j] = e
                total += e
            for t in range(T):
                out[t, h, j] /= total
    return out


@njit(cache=True)
def _stats(X, W, Q, ds, eps):
    T, H, dh = X.shape
    cstep = 0 if ds == 1 else 1
    mu = np.zeros((H, Q, dh))
    m2 = np.zeros((H, Q, dh))
    for t in range(T):
        for h in range(H):
            for q in range(Q):
                for c in range(dh):
                    w = W[t, h, q * ds + c * cstep]
                    x = X[t, h, c]
                    mu[h, q, c] += w * x
                    m2[h, q, c] += w * x * x
    var = np.empty((H, Q, dh))
    sigma = np.empty((H, Q, dh))
    for h in range(H):
        for q in range(Q):
            for c in range(dh):
                v = m2[h, q, c] - mu[h, q, c] * mu[h, q, c]
                var[h, q, c] = v
                sigma[h, q, c] = np.sqrt(v if v > eps else eps)
    return mu, var, sigma


@njit(cache=True)
def forward_n1(X, wa, Q, ds, eps):
    T, H, dh = X.shape
    J = wa.shape[2]
    scores = np.empty((T, H, J))
    for t in range(T):
        for h in range(H):
            for j in range(J):
                acc = 0.0
                for c in range(dh):
                    acc += X[t, h, c] * wa[h, c, j]
                scores[t, h, j] = acc
    W = _softmax_time(scores)
    mu, var, sigma = _stats(X, W, Q, ds, eps)
    return mu, var, sigma, W


@njit(cache=True)
def forward_n2(X, wb, wc, Q, ds, eps):
    T, H, dh = X.shape
    dk = wb.shape[2]
    J = wc.shape[2]
    R = np.empty((T, H, dk))
    for t in range(T):
        for h in range(H):
            for k in range(dk):
                acc = 0.0
                for c in range(dh):
                    acc += X[t, h, c] * wb[h, c, k]
                R[t, h, k] = acc if acc > 0.0 else 0.0
    scores = np.empty((T, H, J))
    for t in range(T):
        for h in range(H):
            for j in range(J):
                acc = 0.0
                for k in range(dk):
                    acc += R[t, h, k] * wc[h, k, j]
                scores[t, h, j] = acc
    W = _softmax_time(scores)
    mu, var, sigma = _stats(X, W, Q, ds, eps)
    return mu, var, sigma, W, R


@njit(cache=True)
def _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    T, H, dh = X.shape
    J = W.shape[2]
    cstep = 0 if ds == 1 else 1
    gvar = np.empty((H, Q, dh))
    gmu_tot = np.empty((H, Q, dh))
    for h in range(H):
        for q in range(Q):
            for c in range(dh):
                gv = gsigma[h, q, c] * 0.5 / sigma[h, q, c] if var[h, q, c] > eps else 0.0
                gvar[h, q, c] = gv
                gmu_tot[h, q, c] = gmu[h, q, c] - 2.0 * mu[h, q, c] * gv
    gX = np.zeros((T, H, dh))
    gW = np.zeros((T, H, J))
    for t in range(T):
        for h in range(H):
            for q in range(Q):
                for c in range(dh):
                    x = X[t, h, c]
                    j = q * ds + c * cstep
                    w = W[t, h, j]
                    gmt = gmu_tot[h, q, c]
                    gv = gvar[h, q, c]
                    gW[t, h, j] += gmt * x + gv * x * x
                    gX[t, h, c] += w * gmt + 2.0 * x * w * gv
    return gX, gW


@njit(cache=True)
def _softmax_backward(W, gW):
    T, H, J = W.shape
    gS = np.empty((T, H, J))
    for h in range(H):
        for j in range(J):
            dot = 0.0
            for t in range(T):
                dot += W[t, h, j] * gW[t, h, j]
            for t in range(T):
                gS[t, h, j] = W[t, h, j] * (gW[t, h, j] - dot)
    return gS


@njit(cache=True)
def backward_n1(X, wa, W, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    T, H, dh = X.shape
    J = W.shape[2]
    gX, gW = _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps)
    gS = _softmax_backward(W, gW)
    gwa = np.zeros((H, dh, J))
    for t in range(T):
        for h in range(H):
            for j in range(J):
                gs = gS[t, h, j]
                for c in range(dh):
                    gwa[h, c, j] += X[t, h, c] * gs
                    gX[t, h, c] += gs * wa[h, c, j]
    return gX, gwa


@njit(cache=True)
def backward_n2(X, wb, wc, W, R, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    T, H, dh = X.shape
    dk = wb.shape[2]
    J = W.shape[2]
    gX, gW = _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps)
    gS = _softmax_backward(W, gW)
    gwc = np.zeros((H, dk, J))
    gR = np.zeros((T, H, dk))
    for t in range(T):
        for h in range(H):
            for j in range(J):
                gs = gS[t, h, j]
                for k in range(dk):
                    gwc[h, k, j] += R[t, h, k] * gs
                    gR[t, h, k] += gs * wc[h, k, j]
    gwb = np.zeros((H, dh, dk))
    for t in range(T):
        for h in range(H):
            for k in range(dk):
                if R[t, h, k] > 0.0:
                    gp = gR[t, h, k]
                    for c in range(dh):
                        gwb[h, c, k] += X[t, h, c] * gp
                        gX[t, h, c] += gp * wb[h, c, k]
    return gX, gwb, gwc
