"""Compiled regression-tree builder shared by the forest and boosting models.

Trees are grown depth-first from per-row first and second order statistics
(g, h). A node's value is -G / (H + lam) and a split's gain is
0.5 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma. With g = -y
and h = 1 this is ordinary variance-reduction CART.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _score(G, H, lam):
    return G * G / (H + lam) if H + lam > 0 else 0.0


@njit(cache=True)
def build_tree(X, g, h, rows, max_depth, min_leaf, lam, gamma, n_try, seed):
    """Grow one tree over ``rows`` (duplicates allowed, e.g. a bootstrap).

    Returns parallel node arrays (feature, threshold, left, right, value, gain);
    leaves have feature -1. ``n_try`` features are drawn per node.
    """
    np.random.seed(seed)
    n_feat = X.shape[1]
    cap = 2 * rows.shape[0] + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    gain = np.zeros(cap)

    # explicit stack of (node, start, stop, depth) over a shared row buffer
    buf = rows.copy()
    st_node = np.zeros(cap, np.int64)
    st_lo = np.zeros(cap, np.int64)
    st_hi = np.zeros(cap, np.int64)
    st_d = np.zeros(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = buf.shape[0]
    st_d[0] = 0
    sp = 1
    n_nodes = 1
    perm = np.arange(n_feat)
    tmp_v = np.empty(buf.shape[0])
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_d[sp]
        m = hi - lo
        G = 0.0
        H = 0.0
        for t in range(lo, hi):
            G += g[buf[t]]
            H += h[buf[t]]
        value[node] = -G / (H + lam) if H + lam > 0 else 0.0
        if depth >= max_depth or m < 2 * min_leaf:
            continue
        parent = _score(G, H, lam)
        # gains below this are rounding noise, e.g. on a constant target
        floor = 1e-12 * parent

        # partial Fisher-Yates: the first n_try entries of perm are the candidates,
        # scanned in draw order so exact gain ties are broken at random
        for a in range(n_try):
            b = a + np.random.randint(n_feat - a)
            tmp = perm[a]
            perm[a] = perm[b]
            perm[b] = tmp
        cand = perm[:n_try].copy()

        best_gain = floor
        best_f = -1
        best_thr = 0.0
        seg = buf[lo:hi]
        for ci in range(n_try):
            f = cand[ci]
            for t in range(m):
                tmp_v[t] = X[seg[t], f]
            order = np.argsort(tmp_v[:m], kind="mergesort")
            GL = 0.0
            HL = 0.0
            for t in range(m - 1):
                r = seg[order[t]]
                GL += g[r]
                HL += h[r]
                v0 = tmp_v[order[t]]
                v1 = tmp_v[order[t + 1]]
                if v1 <= v0:
                    continue
                nl = t + 1
                if nl < min_leaf or m - nl < min_leaf:
                    continue
                gn = 0.5 * (_score(GL, HL, lam) + _score(G - GL, H - HL, lam) - parent) - gamma
                if gn > best_gain:
                    best_gain = gn
                    best_f = f
                    best_thr = 0.5 * (v0 + v1)
                    if best_thr >= v1:  # midpoint rounding between adjacent floats
                        best_thr = v0
        if best_f < 0:
            continue

        # partition rows in place: left block first, order preserved
        nl = 0
        for t in range(m):
            if X[seg[t], best_f] <= best_thr:
                nl += 1
        lbuf = np.empty(nl, np.int64)
        rbuf = np.empty(m - nl, np.int64)
        a = 0
        b = 0
        for t in range(m):
            r = seg[t]
            if X[r, best_f] <= best_thr:
                lbuf[a] = r
                a += 1
            else:
                rbuf[b] = r
                b += 1
        for t in range(nl):
            buf[lo + t] = lbuf[t]
        for t in range(m - nl):
            buf[lo + nl + t] = rbuf[t]

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_gain
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # push right first so the left subtree is built first
        st_node[sp] = ri
        st_lo[sp] = lo + nl
        st_hi[sp] = hi
        st_d[sp] = depth + 1
        sp += 1
        st_node[sp] = li
        st_lo[sp] = lo
        st_hi[sp] = lo + nl
        st_d[sp] = depth + 1
        sp += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain[:n_nodes])


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out
