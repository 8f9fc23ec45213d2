"""Compiled loops behind the fused graph-convolution primitives.

The loops do the indexing and per-row LayerNorm statistics; transcendental
functions stay in numpy, whose vectorised ``tanh`` is far faster than a scalar
loop.  All loops run sequentially in a fixed order so results are bitwise
reproducible.  ``ends`` is an (E, 2) array of undirected edges; each edge is
visited once and serves both directions.
"""

import numpy as np
from numba import njit


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


@njit(cache=True)
def gated_sums(sig, w, ends, n_nodes):
    """num_i = sum_j sig_ij * w_j and den_i = sum_j sig_ij over both directions."""
    E, D = sig.shape
    num = np.zeros((n_nodes, D))
    den = np.zeros((n_nodes, D))
    for k in range(E):
        a = ends[k, 0]
        b = ends[k, 1]
        for c in range(D):
            s = sig[k, c]
            num[a, c] += s * w[b, c]
            num[b, c] += s * w[a, c]
            den[a, c] += s
            den[b, c] += s
    return num, den


@njit(cache=True)
def gated_sums_bwd(g_num, g_den, sig, w, ends):
    """Gradients of (num, den) w.r.t. the edge gates and the node messages."""
    E, D = sig.shape
    g_sig = np.empty((E, D))
    g_w = np.zeros(w.shape)
    for k in range(E):
        a = ends[k, 0]
        b = ends[k, 1]
        for c in range(D):
            s = sig[k, c]
            g_sig[k, c] = g_num[a, c] * w[b, c] + g_den[a, c] + g_num[b, c] * w[a, c] + g_den[b, c]
            g_w[b, c] += g_num[a, c] * s
            g_w[a, c] += g_num[b, c] * s
    return g_sig, g_w


@njit(cache=True, inline="always")
def _norm_row(z, gamma, beta, eps, xhat_row, y_row):
    D = z.shape[0]
    mu = 0.0
    for c in range(D):
        mu += z[c]
    mu /= D
    var = 0.0
    for c in range(D):
        d = z[c] - mu
        var += d * d
    inv = 1.0 / np.sqrt(var / D + eps)
    for c in range(D):
        xh = (z[c] - mu) * inv
        xhat_row[c] = xh
        y_row[c] = gamma[c] * xh + beta[c]
    return inv


@njit(cache=True, inline="always")
def _norm_row_bwd(gy, xhat_row, inv, gamma, dz, g_gamma, g_beta):
    D = gy.shape[0]
    m1 = 0.0
    m2 = 0.0
    for c in range(D):
        g_gamma[c] += gy[c] * xhat_row[c]
        g_beta[c] += gy[c]
        dxh = gy[c] * gamma[c]
        dz[c] = dxh
        m1 += dxh
        m2 += dxh * xhat_row[c]
    m1 /= D
    m2 /= D
    for c in range(D):
        dz[c] = inv * (dz[c] - m1 - xhat_row[c] * m2)


@njit(cache=True)
def layer_norm_fwd(x, gamma, beta, eps):
    R, D = x.shape
    y = np.empty((R, D))
    xhat = np.empty((R, D))
    inv = np.empty(R)
    for r in range(R):
        inv[r] = _norm_row(x[r], gamma, beta, eps, xhat[r], y[r])
    return y, xhat, inv


@njit(cache=True)
def layer_norm_bwd(gy, xhat, inv, gamma):
    R, D = gy.shape
    dx = np.empty((R, D))
    g_gamma = np.zeros(D)
    g_beta = np.zeros(D)
    for r in range(R):
        _norm_row_bwd(gy[r], xhat[r], inv[r], gamma, dx[r], g_gamma, g_beta)
    return dx, g_gamma, g_beta


@njit(cache=True)
def pair_norm_fwd(p, q, r, ends, gamma, beta, eps):
    """LayerNorm of p[i] + q[j] + r[k] for both directions (i, j) of edge k.

    Row ``d * E + k`` holds direction d: d=0 is (ends[k,0], ends[k,1]).
    """
    E, D = r.shape
    y = np.empty((2 * E, D))
    xhat = np.empty((2 * E, D))
    inv = np.empty(2 * E)
    z = np.empty(D)
    for d in range(2):
        for k in range(E):
            i = ends[k, d]
            j = ends[k, 1 - d]
            for c in range(D):
                z[c] = p[i, c] + q[j, c] + r[k, c]
            inv[d * E + k] = _norm_row(z, gamma, beta, eps, xhat[d * E + k], y[d * E + k])
    return y, xhat, inv


@njit(cache=True)
def pair_norm_bwd(gy, xhat, inv, ends, n_nodes, gamma):
    E = ends.shape[0]
    D = gy.shape[1]
    g_p = np.zeros((n_nodes, D))
    g_q = np.zeros((n_nodes, D))
    g_r = np.zeros((E, D))
    g_gamma = np.zeros(D)
    g_beta = np.zeros(D)
    dz = np.empty(D)
    for d in range(2):
        for k in range(E):
            i = ends[k, d]
            j = ends[k, 1 - d]
            row = d * E + k
            _norm_row_bwd(gy[row], xhat[row], inv[row], gamma, dz, g_gamma, g_beta)
            for c in range(D):
                g_p[i, c] += dz[c]
                g_q[j, c] += dz[c]
                g_r[k, c] += dz[c]
    return g_p, g_q, g_r, g_gamma, g_beta
