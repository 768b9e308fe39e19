"""Pure-numpy batched kernels. Fallback path and semantic twin of nb_backend.

Signatures, argument order, and math are kept in lockstep with the numba
build; tests assert agreement. Gradient outputs are written in place into
preallocated arrays. Dtype follows the inputs, so the same code runs the
float64 cross-checks.
"""

import numpy as np

NAME = "numpy"


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _entropy_from_logit(z, s):
    # H(sigmoid(z)) = s*softplus(-z) + (1-s)*softplus(z), stable at saturation
    sp = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0)
    return s * (sp - z) + (1.0 - s) * sp


def _tree_masses(X, node_w, node_b, n_leaves):
    Z = X @ node_w.T + node_b
    S = _sigmoid(Z)
    nn_ = node_w.shape[0]
    M = np.empty((X.shape[0], nn_ + n_leaves), dtype=X.dtype)
    M[:, 0] = 1
    for j in range(nn_):
        M[:, 2 * j + 1] = M[:, j] * (1.0 - S[:, j])
        M[:, 2 * j + 2] = M[:, j] * S[:, j]
    return Z, S, M


def _softmax_ce(Y, y):
    """Returns (mean CE, dY) with dY already scaled by 1/B."""
    B = Y.shape[0]
    rows = np.arange(B)
    mx = Y.max(axis=1, keepdims=True)
    e = np.exp(Y - mx)
    se = e.sum(axis=1, keepdims=True)
    l_pred = float(np.mean(np.log(se[:, 0]) + mx[:, 0] - Y[rows, y]))
    dY = e / se
    dY[rows, y] -= 1
    dY /= B
    return l_pred, dY


def _fff_backward(X, Z, S, M, H, A, Cc, dY, dc_extra, w2f, b2l, h_coef,
                  harden_norm, g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l):
    B = X.shape[0]
    nn_ = Z.shape[1]
    L = Cc.shape[1]
    lw = A.shape[1] // L
    Ce = np.repeat(Cc, lw, axis=1)
    Ac = A * Ce
    dAc = dY @ w2f
    g_w2f[:, :] = dY.T @ Ac
    g_b2l[:, :] = Cc.T @ dY
    dc = dY @ b2l.T + (dAc * A).reshape(B, L, lw).sum(axis=2)
    if dc_extra is not None:
        dc += dc_extra
    dH = dAc * Ce
    dH[H <= 0] = 0
    g_w1f[:, :] = dH.T @ X
    g_b1f[:] = dH.sum(axis=0)
    gh = np.empty((B, nn_ + L), dtype=X.dtype)
    gh[:, nn_:] = dc
    dZn = np.empty((B, nn_), dtype=X.dtype)
    hs = h_coef * harden_norm
    for j in range(nn_ - 1, -1, -1):
        gl, gr = gh[:, 2 * j + 1], gh[:, 2 * j + 2]
        s = S[:, j]
        gh[:, j] = (1.0 - s) * gl + s * gr
        sp = s * (1.0 - s)
        dZn[:, j] = M[:, j] * (gr - gl) * sp + hs * (-Z[:, j] * sp)
    g_node_w[:, :] = dZn.T @ X
    g_node_b[:] = dZn.sum(axis=0)


def _routing_terms(Cc, depth, alpha, dispatch):
    B, L = Cc.shape
    counts = np.bincount(np.argmax(Cc, axis=1), minlength=L)
    dispatch[:] = counts
    f = counts / B
    l_balance = float(2.0 ** depth * np.dot(f, Cc.mean(axis=0)))
    dc_extra = None
    if alpha > 0:
        dc_extra = (alpha * 2.0 ** depth / B) * f.astype(Cc.dtype)
    return l_balance, dc_extra


def step_fff(X, y, node_w, node_b, w1f, b1f, w2f, b2l, depth, h_coef,
             harden_norm, alpha,
             g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l, dispatch):
    Z, S, M = _tree_masses(X, node_w, node_b, b2l.shape[0])
    nn_ = node_w.shape[0]
    Cc = np.ascontiguousarray(M[:, nn_:])
    H = X @ w1f.T + b1f
    A = np.maximum(H, 0)
    lw = w1f.shape[0] // Cc.shape[1]
    Y = (A * np.repeat(Cc, lw, axis=1)) @ w2f.T + Cc @ b2l
    l_pred, dY = _softmax_ce(Y, y)
    l_harden = float(np.sum(_entropy_from_logit(Z, S)) * harden_norm)
    l_balance, dc_extra = _routing_terms(Cc, depth, alpha, dispatch)
    _fff_backward(X, Z, S, M, H, A, Cc, dY, dc_extra, w2f, b2l, h_coef,
                  harden_norm, g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l)
    return l_pred, l_harden, l_balance


def step_fff_master(X, y, node_w, node_b, w1f, b1f, w2f, b2l,
                    m_w1, m_b1, m_w2, m_b2, kappa, depth, h_coef,
                    harden_norm, alpha,
                    g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l,
                    g_m_w1, g_m_b1, g_m_w2, g_m_b2, g_kappa, dispatch):
    Z, S, M = _tree_masses(X, node_w, node_b, b2l.shape[0])
    nn_ = node_w.shape[0]
    Cc = np.ascontiguousarray(M[:, nn_:])
    H = X @ w1f.T + b1f
    A = np.maximum(H, 0)
    lw = w1f.shape[0] // Cc.shape[1]
    Y = (A * np.repeat(Cc, lw, axis=1)) @ w2f.T + Cc @ b2l
    Hm = X @ m_w1.T + m_b1
    Am = np.maximum(Hm, 0)
    Ym = Am @ m_w2.T + m_b2
    k = float(_sigmoid(np.asarray(kappa[0])))
    Yf = k * Y + (1.0 - k) * Ym
    l_pred, dYf = _softmax_ce(Yf, y)
    l_harden = float(np.sum(_entropy_from_logit(Z, S)) * harden_norm)
    l_balance, dc_extra = _routing_terms(Cc, depth, alpha, dispatch)
    g_kappa[0] = float(np.sum(dYf * (Y - Ym))) * k * (1.0 - k)
    dYm = (1.0 - k) * dYf
    g_m_w2[:, :] = dYm.T @ Am
    g_m_b2[:] = dYm.sum(axis=0)
    dHm = dYm @ m_w2
    dHm[Hm <= 0] = 0
    g_m_w1[:, :] = dHm.T @ X
    g_m_b1[:] = dHm.sum(axis=0)
    dY = (k * dYf).astype(X.dtype)
    _fff_backward(X, Z, S, M, H, A, Cc, dY, dc_extra, w2f, b2l, h_coef,
                  harden_norm, g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l)
    return l_pred, l_harden, l_balance


def step_vanilla(X, y, w1, b1, w2, b2, g_w1, g_b1, g_w2, g_b2):
    H = X @ w1.T + b1
    A = np.maximum(H, 0)
    Y = A @ w2.T + b2
    l_pred, dY = _softmax_ce(Y, y)
    g_w2[:, :] = dY.T @ A
    g_b2[:] = dY.sum(axis=0)
    dH = dY @ w2
    dH[H <= 0] = 0
    g_w1[:, :] = dH.T @ X
    g_b1[:] = dH.sum(axis=0)
    return l_pred


def _route(X, node_w, node_b, depth):
    Z = X @ node_w.T + node_b
    B = X.shape[0]
    pos = np.zeros(B, dtype=np.int64)
    rows = np.arange(B)
    for _ in range(depth):
        right = Z[rows, pos] > 0  # sigmoid(z) > 0.5 iff z > 0; ties go left
        pos = 2 * pos + 1 + right
    return pos - (node_w.shape[0])


def _leaf_logits_grouped(X, leaf, w1f, b1f, w2f, b2l, out):
    L = b2l.shape[0]
    lw = w1f.shape[0] // L
    for i in range(L):
        idx = np.nonzero(leaf == i)[0]
        if idx.size == 0:
            continue
        sl = slice(i * lw, (i + 1) * lw)
        Hi = np.maximum(X[idx] @ w1f[sl].T + b1f[sl], 0)
        out[idx] = Hi @ w2f[:, sl].T + b2l[i]
    return out


def predict_fff(X, node_w, node_b, w1f, b1f, w2f, b2l, depth):
    leaf = _route(X, node_w, node_b, depth)
    logits = np.empty((X.shape[0], w2f.shape[0]), dtype=X.dtype)
    _leaf_logits_grouped(X, leaf, w1f, b1f, w2f, b2l, logits)
    return np.argmax(logits, axis=1)


def predict_fff_master(X, node_w, node_b, w1f, b1f, w2f, b2l,
                       m_w1, m_b1, m_w2, m_b2, kappa, depth):
    leaf = _route(X, node_w, node_b, depth)
    logits = np.empty((X.shape[0], w2f.shape[0]), dtype=X.dtype)
    _leaf_logits_grouped(X, leaf, w1f, b1f, w2f, b2l, logits)
    Ym = np.maximum(X @ m_w1.T + m_b1, 0) @ m_w2.T + m_b2
    k = float(_sigmoid(np.asarray(kappa[0])))
    return np.argmax(k * logits + (1.0 - k) * Ym, axis=1)


def predict_vanilla(X, w1, b1, w2, b2):
    Y = np.maximum(X @ w1.T + b1, 0) @ w2.T + b2
    return np.argmax(Y, axis=1)
