"""Numba-jitted batched kernels, float32 only.

Semantic twin of np_backend: same signatures, same math, loop-and-BLAS
implementation. Heavy lifting stays in np.dot (BLAS sgemm); tree walks and
elementwise work are plain loops the JIT fuses. Training kernels avoid
fastmath so IEEE semantics match the numpy build closely; the prediction
kernels enable it (they contain no reductions whose rounding matters and at
most exp(-|z|), which cannot overflow).

cache=True persists compiled kernels next to this file, so first-call
compilation cost is paid once per machine, not once per process.
"""

import numpy as np
from numba import njit

NAME = "numba"

F32 = np.float32


@njit(cache=True, inline="always")
def _sig(z):
    if z >= F32(0.0):
        return F32(1.0) / (F32(1.0) + np.exp(-z))
    e = np.exp(z)
    return e / (F32(1.0) + e)


@njit(cache=True)
def _tree_forward(X, node_w, node_b, n_leaves):
    """Z (bias added), S, and heap masses M for a batch."""
    B = X.shape[0]
    nn_ = node_w.shape[0]
    Z = np.dot(X, node_w.T)
    S = np.empty((B, nn_), F32)
    for b in range(B):
        for j in range(nn_):
            z = Z[b, j] + node_b[j]
            Z[b, j] = z
            S[b, j] = _sig(z)
    M = np.empty((B, nn_ + n_leaves), F32)
    for b in range(B):
        M[b, 0] = F32(1.0)
        for j in range(nn_):
            mj = M[b, j]
            s = S[b, j]
            M[b, 2 * j + 1] = mj * (F32(1.0) - s)
            M[b, 2 * j + 2] = mj * s
    return Z, S, M


@njit(cache=True)
def _entropy_sum(Z, S):
    """Sum over batch and nodes of H(sigmoid(z)), via softplus identities."""
    total = 0.0
    for b in range(Z.shape[0]):
        for j in range(Z.shape[1]):
            z = Z[b, j]
            sp = np.log1p(np.exp(-np.abs(z)))
            if z > F32(0.0):
                sp = sp + z
            total += S[b, j] * (sp - z) + (F32(1.0) - S[b, j]) * sp
    return total


@njit(cache=True)
def _softmax_ce(Y, y):
    """Mean CE and in-place conversion of Y into dY = (softmax - onehot)/B."""
    B, C = Y.shape
    inv_b = F32(1.0 / B)
    l_pred = 0.0
    for b in range(B):
        mx = Y[b, 0]
        for c in range(1, C):
            if Y[b, c] > mx:
                mx = Y[b, c]
        y_val = Y[b, y[b]]
        se = F32(0.0)
        for c in range(C):
            e = np.exp(Y[b, c] - mx)
            Y[b, c] = e
            se += e
        l_pred += np.log(se) + mx - y_val
        inv = F32(1.0) / se
        for c in range(C):
            v = Y[b, c] * inv
            if c == y[b]:
                v -= F32(1.0)
            Y[b, c] = v * inv_b
    return l_pred / B


@njit(cache=True)
def _mixed_hidden(A, M, nn_, L, lw):
    B = A.shape[0]
    Ac = np.empty_like(A)
    for b in range(B):
        for i in range(L):
            ci = M[b, nn_ + i]
            base = i * lw
            for t in range(lw):
                Ac[b, base + t] = A[b, base + t] * ci
    return Ac


@njit(cache=True)
def _routing_terms(M, nn_, L, depth, alpha, dispatch, addc):
    """Dispatch counts, balance loss, and the per-leaf coefficient gradient."""
    B = M.shape[0]
    for i in range(L):
        dispatch[i] = 0
    for b in range(B):
        best = 0
        bv = M[b, nn_]
        for i in range(1, L):
            v = M[b, nn_ + i]
            if v > bv:
                bv = v
                best = i
        dispatch[best] += 1
    inv_b = 1.0 / B
    twod = 2.0 ** depth
    l_balance = 0.0
    for i in range(L):
        psum = 0.0
        for b in range(B):
            psum += M[b, nn_ + i]
        l_balance += (dispatch[i] * inv_b) * (psum * inv_b)
        addc[i] = F32(alpha * twod * dispatch[i] * inv_b * inv_b)
    return twod * l_balance


@njit(cache=True)
def _fff_backward(X, Z, S, M, H, A, Cc, dY, addc, use_addc, w2f, b2l, hs,
                  g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l):
    B, D = X.shape
    nn_ = Z.shape[1]
    L = Cc.shape[1]
    lw = A.shape[1] // L
    Ac = _mixed_hidden(A, M, nn_, L, lw)
    dAc = np.dot(dY, w2f)
    g_w2f[:, :] = np.dot(dY.T, Ac)
    g_b2l[:, :] = np.dot(Cc.T, dY)
    dc = np.dot(dY, b2l.T)
    for b in range(B):
        for i in range(L):
            base = i * lw
            acc = F32(0.0)
            for t in range(lw):
                acc += dAc[b, base + t] * A[b, base + t]
            dc[b, i] += acc
            if use_addc:
                dc[b, i] += addc[i]
    dH = np.empty_like(A)
    for b in range(B):
        for i in range(L):
            ci = M[b, nn_ + i]
            base = i * lw
            for t in range(lw):
                q = base + t
                dH[b, q] = dAc[b, q] * ci if H[b, q] > F32(0.0) else F32(0.0)
    g_w1f[:, :] = np.dot(dH.T, X)
    for q in range(g_b1f.shape[0]):
        acc = F32(0.0)
        for b in range(B):
            acc += dH[b, q]
        g_b1f[q] = acc
    gh = np.empty((B, nn_ + L), F32)
    dZn = np.empty((B, nn_), F32)
    hs32 = F32(hs)
    for b in range(B):
        for i in range(L):
            gh[b, nn_ + i] = dc[b, i]
        for j in range(nn_ - 1, -1, -1):
            gl = gh[b, 2 * j + 1]
            gr = gh[b, 2 * j + 2]
            s = S[b, j]
            gh[b, j] = (F32(1.0) - s) * gl + s * gr
            sp = s * (F32(1.0) - s)
            dZn[b, j] = M[b, j] * (gr - gl) * sp - hs32 * Z[b, j] * sp
    g_node_w[:, :] = np.dot(dZn.T, X)
    for j in range(nn_):
        acc = F32(0.0)
        for b in range(B):
            acc += dZn[b, j]
        g_node_b[j] = acc


@njit(cache=True)
def _leaf_hidden(X, w1f, b1f):
    H = np.dot(X, w1f.T)
    A = np.empty_like(H)
    for b in range(H.shape[0]):
        for q in range(H.shape[1]):
            hp = H[b, q] + b1f[q]
            H[b, q] = hp
            A[b, q] = hp if hp > F32(0.0) else F32(0.0)
    return H, A


@njit(cache=True)
def _coeff_matrix(M, nn_, L):
    B = M.shape[0]
    Cc = np.empty((B, L), F32)
    for b in range(B):
        for i in range(L):
            Cc[b, i] = M[b, nn_ + i]
    return Cc


@njit(cache=True)
def step_fff(X, y, node_w, node_b, w1f, b1f, w2f, b2l, depth, h_coef,
             harden_norm, alpha,
             g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l, dispatch):
    nn_ = node_w.shape[0]
    L = b2l.shape[0]
    lw = w1f.shape[0] // L
    Z, S, M = _tree_forward(X, node_w, node_b, L)
    Cc = _coeff_matrix(M, nn_, L)
    H, A = _leaf_hidden(X, w1f, b1f)
    Ac = _mixed_hidden(A, M, nn_, L, lw)
    Y = np.dot(Ac, w2f.T)
    Y += np.dot(Cc, b2l)
    l_pred = _softmax_ce(Y, y)  # Y now holds dY
    l_harden = _entropy_sum(Z, S) * harden_norm
    addc = np.empty(L, F32)
    l_balance = _routing_terms(M, nn_, L, depth, alpha, dispatch, addc)
    _fff_backward(X, Z, S, M, H, A, Cc, Y, addc, alpha > 0.0, w2f, b2l,
                  h_coef * harden_norm,
                  g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l)
    return l_pred, l_harden, l_balance


@njit(cache=True)
def step_fff_master(X, y, node_w, node_b, w1f, b1f, w2f, b2l,
                    m_w1, m_b1, m_w2, m_b2, kappa, depth, h_coef,
                    harden_norm, alpha,
                    g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l,
                    g_m_w1, g_m_b1, g_m_w2, g_m_b2, g_kappa, dispatch):
    B = X.shape[0]
    nn_ = node_w.shape[0]
    L = b2l.shape[0]
    lw = w1f.shape[0] // L
    C = w2f.shape[0]
    Z, S, M = _tree_forward(X, node_w, node_b, L)
    Cc = _coeff_matrix(M, nn_, L)
    H, A = _leaf_hidden(X, w1f, b1f)
    Ac = _mixed_hidden(A, M, nn_, L, lw)
    Y = np.dot(Ac, w2f.T)
    Y += np.dot(Cc, b2l)
    Hm, Am = _leaf_hidden(X, m_w1, m_b1)
    Ym = np.dot(Am, m_w2.T)
    for b in range(B):
        for c in range(C):
            Ym[b, c] += m_b2[c]
    k = _sig(kappa[0])
    Yf = np.empty((B, C), F32)
    for b in range(B):
        for c in range(C):
            Yf[b, c] = k * Y[b, c] + (F32(1.0) - k) * Ym[b, c]
    l_pred = _softmax_ce(Yf, y)  # Yf now holds dYf
    l_harden = _entropy_sum(Z, S) * harden_norm
    addc = np.empty(L, F32)
    l_balance = _routing_terms(M, nn_, L, depth, alpha, dispatch, addc)
    dk = 0.0
    for b in range(B):
        for c in range(C):
            dk += Yf[b, c] * (Y[b, c] - Ym[b, c])
    g_kappa[0] = F32(dk) * k * (F32(1.0) - k)
    dYm = np.empty((B, C), F32)
    dY = np.empty((B, C), F32)
    for b in range(B):
        for c in range(C):
            dYm[b, c] = (F32(1.0) - k) * Yf[b, c]
            dY[b, c] = k * Yf[b, c]
    g_m_w2[:, :] = np.dot(dYm.T, Am)
    for c in range(C):
        acc = F32(0.0)
        for b in range(B):
            acc += dYm[b, c]
        g_m_b2[c] = acc
    dHm = np.dot(dYm, m_w2)
    for b in range(B):
        for q in range(dHm.shape[1]):
            if Hm[b, q] <= F32(0.0):
                dHm[b, q] = F32(0.0)
    g_m_w1[:, :] = np.dot(dHm.T, X)
    for q in range(g_m_b1.shape[0]):
        acc = F32(0.0)
        for b in range(B):
            acc += dHm[b, q]
        g_m_b1[q] = acc
    _fff_backward(X, Z, S, M, H, A, Cc, dY, addc, alpha > 0.0, w2f, b2l,
                  h_coef * harden_norm,
                  g_node_w, g_node_b, g_w1f, g_b1f, g_w2f, g_b2l)
    return l_pred, l_harden, l_balance


@njit(cache=True)
def step_vanilla(X, y, w1, b1, w2, b2, g_w1, g_b1, g_w2, g_b2):
    B = X.shape[0]
    C = w2.shape[0]
    H, A = _leaf_hidden(X, w1, b1)
    Y = np.dot(A, w2.T)
    for b in range(B):
        for c in range(C):
            Y[b, c] += b2[c]
    l_pred = _softmax_ce(Y, y)
    g_w2[:, :] = np.dot(Y.T, A)
    for c in range(C):
        acc = F32(0.0)
        for b in range(B):
            acc += Y[b, c]
        g_b2[c] = acc
    dH = np.dot(Y, w2)
    for b in range(B):
        for q in range(dH.shape[1]):
            if H[b, q] <= F32(0.0):
                dH[b, q] = F32(0.0)
    g_w1[:, :] = np.dot(dH.T, X)
    for q in range(g_b1.shape[0]):
        acc = F32(0.0)
        for b in range(B):
            acc += dH[b, q]
        g_b1[q] = acc
    return l_pred


@njit(cache=True, fastmath=True)
def _route(X, node_w, node_b, depth):
    B = X.shape[0]
    nn_ = node_w.shape[0]
    Z = np.dot(X, node_w.T)
    leaf = np.empty(B, np.int64)
    for b in range(B):
        j = 0
        for _ in range(depth):
            z = Z[b, j] + node_b[j]
            j = 2 * j + 2 if z > F32(0.0) else 2 * j + 1
        leaf[b] = j - nn_
    return leaf


@njit(cache=True, fastmath=True)
def _grouped_leaf_logits(X, leaf, w1f, b1f, w2f, b2l, out):
    B, D = X.shape
    L = b2l.shape[0]
    C = w2f.shape[0]
    lw = w1f.shape[0] // L
    counts = np.zeros(L + 1, np.int64)
    for b in range(B):
        counts[leaf[b] + 1] += 1
    for i in range(L):
        counts[i + 1] += counts[i]
    order = np.empty(B, np.int64)
    fill = counts[:L].copy()
    for b in range(B):
        i = leaf[b]
        order[fill[i]] = b
        fill[i] += 1
    for i in range(L):
        lo, hi = counts[i], counts[i + 1]
        if hi == lo:
            continue
        n = hi - lo
        Xi = np.empty((n, D), F32)
        for r in range(n):
            Xi[r] = X[order[lo + r]]
        base = i * lw
        Hi = np.dot(Xi, w1f[base:base + lw].T)
        for r in range(n):
            for t in range(lw):
                hp = Hi[r, t] + b1f[base + t]
                Hi[r, t] = hp if hp > F32(0.0) else F32(0.0)
        W2 = np.ascontiguousarray(w2f[:, base:base + lw])
        Yi = np.dot(Hi, W2.T)
        for r in range(n):
            for c in range(C):
                out[order[lo + r], c] = Yi[r, c] + b2l[i, c]


@njit(cache=True, fastmath=True)
def predict_fff(X, node_w, node_b, w1f, b1f, w2f, b2l, depth):
    B = X.shape[0]
    C = w2f.shape[0]
    leaf = _route(X, node_w, node_b, depth)
    logits = np.empty((B, C), F32)
    _grouped_leaf_logits(X, leaf, w1f, b1f, w2f, b2l, logits)
    preds = np.empty(B, np.int64)
    for b in range(B):
        preds[b] = np.argmax(logits[b])
    return preds


@njit(cache=True, fastmath=True)
def predict_fff_master(X, node_w, node_b, w1f, b1f, w2f, b2l,
                       m_w1, m_b1, m_w2, m_b2, kappa, depth):
    B = X.shape[0]
    C = w2f.shape[0]
    leaf = _route(X, node_w, node_b, depth)
    logits = np.empty((B, C), F32)
    _grouped_leaf_logits(X, leaf, w1f, b1f, w2f, b2l, logits)
    Hm, Am = _leaf_hidden(X, m_w1, m_b1)
    Ym = np.dot(Am, m_w2.T)
    k = _sig(kappa[0])
    preds = np.empty(B, np.int64)
    for b in range(B):
        best = 0
        bv = k * logits[b, 0] + (F32(1.0) - k) * (Ym[b, 0] + m_b2[0])
        for c in range(1, C):
            v = k * logits[b, c] + (F32(1.0) - k) * (Ym[b, c] + m_b2[c])
            if v > bv:
                bv = v
                best = c
        preds[b] = best
    return preds


@njit(cache=True, fastmath=True)
def predict_vanilla(X, w1, b1, w2, b2):
    B = X.shape[0]
    C = w2.shape[0]
    Hm, A = _leaf_hidden(X, w1, b1)
    Y = np.dot(A, w2.T)
    preds = np.empty(B, np.int64)
    for b in range(B):
        best = 0
        bv = Y[b, 0] + b2[0]
        for c in range(1, C):
            v = Y[b, c] + b2[c]
            if v > bv:
                bv = v
                best = c
        preds[b] = best
    return preds
