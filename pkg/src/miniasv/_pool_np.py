"""Pure-numpy pooling kernels (fallback backend).

Shapes used throughout:
    X      (T, H, dh)       head-split frame features
    wa     (H, dh, Q*ds)    one-layer attention weights
    wb, wc (H, dh, dk), (H, dk, Q*ds)   two-layer attention weights
    W      (T, H, Q*ds)     attention weights, softmax over the T axis
    mu, var, sigma          (H, Q, dh)

``ds`` is 1 when one weight per frame is shared across a head's channels,
and ``dh`` when every channel has its own weight. Variance is floored at
``eps`` before the square root; no gradient flows through floored entries.
"""

import numpy as np


def _softmax_time(scores):
    shifted = scores - scores.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def _stats(X, W, Q, ds, eps):
    T, H, dh = X.shape
    if ds == 1:
        W3 = W.reshape(T, H, Q)
        mu = np.einsum("thq,thc->hqc", W3, X)
        m2 = np.einsum("thq,thc->hqc", W3, X * X)
    else:
        W4 = W.reshape(T, H, Q, dh)
        mu = np.einsum("thqc,thc->hqc", W4, X)
        m2 = np.einsum("thqc,thc->hqc", W4, X * X)
    var = m2 - mu * mu
    sigma = np.sqrt(np.maximum(var, eps))
    return mu, var, sigma


def forward_n1(X, wa, Q, ds, eps):
    scores = np.einsum("thc,hcj->thj", X, wa)
    W = _softmax_time(scores)
    mu, var, sigma = _stats(X, W, Q, ds, eps)
    return mu, var, sigma, W


def forward_n2(X, wb, wc, Q, ds, eps):
    pre = np.einsum("thc,hck->thk", X, wb)
    R = np.maximum(pre, 0.0)
    scores = np.einsum("thk,hkj->thj", R, wc)
    W = _softmax_time(scores)
    mu, var, sigma = _stats(X, W, Q, ds, eps)
    return mu, var, sigma, W, R


def _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    """Gradients of (mu, sigma) w.r.t. X (direct route) and W."""
    T, H, dh = X.shape
    gvar = np.where(var > eps, gsigma * (0.5 / sigma), 0.0)
    gmu_tot = gmu - 2.0 * mu * gvar
    X2 = X * X
    if ds == 1:
        W3 = W.reshape(T, H, Q)
        gW = np.einsum("hqc,thc->thq", gmu_tot, X) + np.einsum("hqc,thc->thq", gvar, X2)
        gX = np.einsum("thq,hqc->thc", W3, gmu_tot) + 2.0 * X * np.einsum(
            "thq,hqc->thc", W3, gvar
        )
    else:
        W4 = W.reshape(T, H, Q, dh)
        gW = np.einsum("hqc,thc->thqc", gmu_tot, X) + np.einsum("hqc,thc->thqc", gvar, X2)
        gX = np.einsum("thqc,hqc->thc", W4, gmu_tot) + 2.0 * X * np.einsum(
            "thqc,hqc->thc", W4, gvar
        )
    return gX, gW.reshape(T, H, Q * ds)


def _softmax_backward(W, gW):
    return W * (gW - np.sum(W * gW, axis=0, keepdims=True))


def backward_n1(X, wa, W, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    gX, gW = _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps)
    gS = _softmax_backward(W, gW)
    gwa = np.einsum("thc,thj->hcj", X, gS)
    gX += np.einsum("thj,hcj->thc", gS, wa)
    return gX, gwa


def backward_n2(X, wb, wc, W, R, mu, var, sigma, gmu, gsigma, Q, ds, eps):
    gX, gW = _stats_backward(X, W, mu, var, sigma, gmu, gsigma, Q, ds, eps)
    gS = _softmax_backward(W, gW)
    gwc = np.einsum("thk,thj->hkj", R, gS)
    gR = np.einsum("thj,hkj->thk", gS, wc)
    gP = gR * (R > 0.0)
    gwb = np.einsum("thc,thk->hck", X, gP)
    gX += np.einsum("thk,hck->thc", gP, wb)
    return gX, gwb, gwc
