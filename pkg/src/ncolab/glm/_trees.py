"""Numba kernels for histogram-based regression and honest causal trees.

Features are pre-binned to small integer codes; a split on feature ``f`` at
threshold ``t`` sends rows with ``code <= t`` left.  Trees are returned as
parallel node arrays where ``left == -1`` marks a leaf.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_MAX_BINS = 255


class BinMapper:
    """Quantile binning of each column into at most ``max_bins`` codes."""

    def __init__(self, max_bins: int = 64):
        if not 2 <= max_bins <= _MAX_BINS:
            raise ValueError(f"max_bins must lie in [2, {_MAX_BINS}]")
        self.max_bins = max_bins

    def fit(self, x: np.ndarray) -> BinMapper:
        x = np.asarray(x, dtype=np.float64)
        self.cuts_ = []
        for j in range(x.shape[1]):
            uniq = np.unique(x[:, j])
            if uniq.size <= self.max_bins:
                cuts = 0.5 * (uniq[1:] + uniq[:-1])
            else:
                qs = np.quantile(x[:, j], np.linspace(0, 1, self.max_bins + 1)[1:-1])
                cuts = np.unique(qs)
            self.cuts_.append(cuts)
        self.nbins_ = np.array([c.size + 1 for c in self.cuts_], dtype=np.int64)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != len(self.cuts_):
            raise ValueError(f"expected {len(self.cuts_)} columns, got {x.shape[1]}")
        codes = np.empty(x.shape, dtype=np.uint8)
        for j, cuts in enumerate(self.cuts_):
            codes[:, j] = np.searchsorted(cuts, x[:, j], side="right")
        return codes


@njit(cache=True)
def _partial_shuffle(arr, k):
    n = arr.shape[0]
    for i in range(k):
        j = i + np.random.randint(n - i)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


@njit(cache=True)
def _partition(rows, start, end, codes, f, t):
    i = start
    j = end - 1
    while i <= j:
        if codes[rows[i], f] <= t:
            i += 1
        else:
            tmp = rows[i]
            rows[i] = rows[j]
            rows[j] = tmp
            j -= 1
    return i


@njit(cache=True)
def subsample(n, size, seed):
    """First ``size`` entries of a seeded random permutation, then the rest."""
    np.random.seed(seed)
    perm = np.arange(n)
    _partial_shuffle(perm, size)
    return perm[:size].copy(), perm[size:].copy()


@njit(cache=True)
def grow_regression_tree(codes, nbins, y, rows, mtry, min_leaf, seed):
    """CART regression tree on ``rows`` with variance-reduction splits."""
    np.random.seed(seed)
    p = codes.shape[1]
    rows = rows.copy()
    m_all = rows.shape[0]
    cap = 2 * (m_all // max(min_leaf, 1)) + 3
    feature = np.full(cap, -1, np.int32)
    thresh = np.zeros(cap, np.int32)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    maxb = nbins.max()
    cnt = np.zeros(maxb)
    sm = np.zeros(maxb)
    feats = np.arange(p)
    n_nodes = 1
    sp = 0
    st_start[0] = 0
    st_end[0] = m_all
    st_node[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        node = st_node[sp]
        m = end - start
        s_tot = 0.0
        for i in range(start, end):
            s_tot += y[rows[i]]
        value[node] = s_tot / m
        if m < 2 * min_leaf:
            continue
        _partial_shuffle(feats, mtry)
        parent = s_tot * s_tot / m
        best_gain = 1e-12 * max(1.0, abs(parent))
        best_f = -1
        best_t = -1
        for k in range(mtry):
            f = feats[k]
            nb = nbins[f]
            if nb < 2:
                continue
            if nb == 2:
                n1 = 0
                s1 = 0.0
                for i in range(start, end):
                    r = rows[i]
                    b = codes[r, f]
                    n1 += b
                    s1 += b * y[r]
                nl = float(m - n1)
                if nl < min_leaf or n1 < min_leaf:
                    continue
                sl = s_tot - s1
                gain = sl * sl / nl + s1 * s1 / n1 - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = 0
                continue
            cnt[:nb] = 0.0
            sm[:nb] = 0.0
            for i in range(start, end):
                r = rows[i]
                b = codes[r, f]
                cnt[b] += 1.0
                sm[b] += y[r]
            nl = 0.0
            sl = 0.0
            for t in range(nb - 1):
                nl += cnt[t]
                sl += sm[t]
                if nl < min_leaf:
                    continue
                nr = m - nl
                if nr < min_leaf:
                    break
                if cnt[t] == 0.0:
                    continue
                sr = s_tot - sl
                gain = sl * sl / nl + sr * sr / nr - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
        if best_f < 0:
            continue
        mid = _partition(rows, start, end, codes, best_f, best_t)
        feature[node] = best_f
        thresh[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_start[sp] = start
        st_end[sp] = mid
        st_node[sp] = n_nodes
        st_start[sp + 1] = mid
        st_end[sp + 1] = end
        st_node[sp + 1] = n_nodes + 1
        sp += 2
        n_nodes += 2
    return (
        feature[:n_nodes].copy(),
        thresh[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True)
def grow_causal_tree(
    codes,
    nbins,
    yres,
    ares,
    arm,
    build_rows,
    est_rows,
    mtry,
    min_node_size,
    min_per_arm,
    alpha,
    imbalance_penalty,
    honesty_prune,
    seed,
):
    """Honest causal tree.

    Splits are chosen on ``build_rows`` by a CART criterion applied to the
    gradient pseudo-outcome of the residual-on-residual effect; each node's
    effect is then re-estimated from ``est_rows`` only.

    Returns node arrays plus per-node estimation counts of treated and
    control rows.
    """
    np.random.seed(seed)
    p = codes.shape[1]
    brows = build_rows.copy()
    erows = est_rows.copy()
    mb = brows.shape[0]
    cap = 2 * (mb // max(min_per_arm, 1)) + 3
    feature = np.full(cap, -1, np.int32)
    thresh = np.zeros(cap, np.int32)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.full(cap, np.nan)
    est_t = np.zeros(cap, np.int32)
    est_c = np.zeros(cap, np.int32)
    st_b0 = np.empty(cap, np.int64)
    st_b1 = np.empty(cap, np.int64)
    st_e0 = np.empty(cap, np.int64)
    st_e1 = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    maxb = nbins.max()
    h_cnt = np.zeros(maxb)
    h_trt = np.zeros(maxb)
    h_rho = np.zeros(maxb)
    h_et = np.zeros(maxb)
    h_ec = np.zeros(maxb)
    rho = np.empty(mb)
    feats = np.arange(p)

    st_b0[0] = 0
    st_b1[0] = mb
    st_e0[0] = 0
    st_e1[0] = erows.shape[0]
    st_node[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        b0 = st_b0[sp]
        b1 = st_b1[sp]
        e0 = st_e0[sp]
        e1 = st_e1[sp]
        node = st_node[sp]

        # honest estimate from the estimation rows
        num = 0.0
        den = 0.0
        nt = 0
        for i in range(e0, e1):
            r = erows[i]
            num += ares[r] * yres[r]
            den += ares[r] * ares[r]
            nt += arm[r]
        est_t[node] = nt
        est_c[node] = (e1 - e0) - nt
        if den > 0.0:
            value[node] = num / den

        m = b1 - b0
        min_child = max(min_node_size, int(np.ceil(alpha * m)))
        if m < 2 * min_child:
            continue
        sa = 0.0
        sy = 0.0
        mt = 0
        for i in range(b0, b1):
            r = brows[i]
            sa += ares[r]
            sy += yres[r]
            mt += arm[r]
        if mt < 2 * min_per_arm or (m - mt) < 2 * min_per_arm:
            continue
        if not honesty_prune and (est_t[node] < 2 * min_per_arm or est_c[node] < 2 * min_per_arm):
            continue
        abar = sa / m
        ybar = sy / m
        saa = 0.0
        say = 0.0
        for i in range(b0, b1):
            r = brows[i]
            da = ares[r] - abar
            saa += da * da
            say += da * (yres[r] - ybar)
        if saa <= 0.0:
            continue
        tau_p = say / saa
        var_a = saa / m
        s_rho = 0.0
        s_rho2 = 0.0
        for i in range(b0, b1):
            r = brows[i]
            da = ares[r] - abar
            g = da * ((yres[r] - ybar) - da * tau_p) / var_a
            rho[i - b0] = g
            s_rho += g
            s_rho2 += g * g
        var_rho = s_rho2 / m - (s_rho / m) ** 2
        parent = s_rho * s_rho / m

        _partial_shuffle(feats, mtry)
        best_gain = 1e-12 * max(1.0, s_rho2)
        best_f = -1
        best_t = -1
        for k in range(mtry):
            f = feats[k]
            nb = nbins[f]
            if nb < 2:
                continue
            if nb == 2:
                n1 = 0
                t1 = 0
                s1 = 0.0
                for i in range(b0, b1):
                    r = brows[i]
                    b = codes[r, f]
                    n1 += b
                    t1 += b * arm[r]
                    s1 += b * rho[i - b0]
                h_cnt[1] = n1
                h_trt[1] = t1
                h_rho[1] = s1
                h_cnt[0] = m - n1
                h_trt[0] = mt - t1
                h_rho[0] = s_rho - s1
                if not honesty_prune:
                    et1 = 0
                    ec1 = 0
                    for i in range(e0, e1):
                        r = erows[i]
                        b = codes[r, f]
                        et1 += b * arm[r]
                        ec1 += b * (1 - arm[r])
                    h_et[0] = est_t[node] - et1
                    h_ec[0] = est_c[node] - ec1
            else:
                h_cnt[:nb] = 0.0
                h_trt[:nb] = 0.0
                h_rho[:nb] = 0.0
                for i in range(b0, b1):
                    r = brows[i]
                    b = codes[r, f]
                    h_cnt[b] += 1.0
                    h_trt[b] += arm[r]
                    h_rho[b] += rho[i - b0]
                if not honesty_prune:
                    h_et[:nb] = 0.0
                    h_ec[:nb] = 0.0
                    for i in range(e0, e1):
                        r = erows[i]
                        b = codes[r, f]
                        if arm[r] == 1:
                            h_et[b] += 1.0
                        else:
                            h_ec[b] += 1.0
            nl = 0.0
            tl = 0.0
            sl = 0.0
            etl = 0.0
            ecl = 0.0
            for t in range(nb - 1):
                nl += h_cnt[t]
                tl += h_trt[t]
                sl += h_rho[t]
                etl += h_et[t]
                ecl += h_ec[t]
                if h_cnt[t] == 0.0 or nl < min_child:
                    continue
                nr = m - nl
                if nr < min_child:
                    break
                tr = mt - tl
                if tl < min_per_arm or nl - tl < min_per_arm:
                    continue
                if tr < min_per_arm or nr - tr < min_per_arm:
                    continue
                if not honesty_prune:
                    if etl < min_per_arm or ecl < min_per_arm:
                        continue
                    if est_t[node] - etl < min_per_arm or est_c[node] - ecl < min_per_arm:
                        continue
                sr = s_rho - sl
                gain = sl * sl / nl + sr * sr / nr - parent
                gain -= imbalance_penalty * var_rho * (m / nl + m / nr - 4.0)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
        if best_f < 0:
            continue
        bmid = _partition(brows, b0, b1, codes, best_f, best_t)
        emid = _partition(erows, e0, e1, codes, best_f, best_t)
        feature[node] = best_f
        thresh[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_b0[sp] = b0
        st_b1[sp] = bmid
        st_e0[sp] = e0
        st_e1[sp] = emid
        st_node[sp] = n_nodes
        st_b0[sp + 1] = bmid
        st_b1[sp + 1] = b1
        st_e0[sp + 1] = emid
        st_e1[sp + 1] = e1
        st_node[sp + 1] = n_nodes + 1
        sp += 2
        n_nodes += 2

    if honesty_prune:
        # children always carry larger ids than their parent
        for node in range(n_nodes - 1, -1, -1):
            lc = left[node]
            if lc < 0:
                continue
            rc = right[node]
            if (
                est_t[lc] < min_per_arm
                or est_c[lc] < min_per_arm
                or est_t[rc] < min_per_arm
                or est_c[rc] < min_per_arm
            ):
                left[node] = -1
                right[node] = -1
                feature[node] = -1
    return (
        feature[:n_nodes].copy(),
        thresh[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        est_t[:n_nodes].copy(),
        est_c[:n_nodes].copy(),
    )


@njit(cache=True)
def _descend(codes, i, root, feature, thresh, left, right, value):
    node = root
    last = value[node]
    while left[node] >= 0:
        if codes[i, feature[node]] <= thresh[node]:
            node = left[node]
        else:
            node = right[node]
        v = value[node]
        if not np.isnan(v):
            last = v
    return last


@njit(cache=True)
def accumulate_tree(codes, rows, root, feature, thresh, left, right, value, sums, counts):
    """Add one tree's predictions for ``rows`` into running sums."""
    for k in range(rows.shape[0]):
        i = rows[k]
        v = _descend(codes, i, root, feature, thresh, left, right, value)
        if not np.isnan(v):
            sums[i] += v
            counts[i] += 1.0


@njit(cache=True)
def predict_forest(codes, roots, feature, thresh, left, right, value):
    """Mean over trees of the value reached by each row.

    A leaf without an estimate falls back to its nearest estimated ancestor.
    """
    n = codes.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        c = 0
        for t in range(roots.shape[0]):
            v = _descend(codes, i, roots[t], feature, thresh, left, right, value)
            if not np.isnan(v):
                s += v
                c += 1
        out[i] = s / c if c > 0 else np.nan
    return out


@njit(cache=True)
def leaf_index(codes, i, root, feature, thresh, left, right):
    node = root
    while left[node] >= 0:
        if codes[i, feature[node]] <= thresh[node]:
            node = left[node]
        else:
            node = right[node]
    return node


def flatten_trees(trees: list[tuple[np.ndarray, ...]]) -> dict[str, np.ndarray]:
    """Concatenate per-tree node arrays, shifting child pointers."""
    sizes = np.array([t[0].shape[0] for t in trees], dtype=np.int64)
    roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    feature = np.concatenate([t[0] for t in trees])
    thresh = np.concatenate([t[1] for t in trees])
    left = np.concatenate([np.where(t[2] >= 0, t[2] + r, -1) for t, r in zip(trees, roots)])
    right = np.concatenate([np.where(t[3] >= 0, t[3] + r, -1) for t, r in zip(trees, roots)])
    value = np.concatenate([t[4] for t in trees])
    return {
        "roots": roots,
        "feature": feature.astype(np.int32),
        "thresh": thresh.astype(np.int32),
        "left": left.astype(np.int32),
        "right": right.astype(np.int32),
        "value": value.astype(np.float64),
    }
