# cython: language_level=3
"""Compiled kernels. Same contracts as ``_pykernels``; different algorithms.

* ``cox_derivatives`` sweeps event times backwards with running risk-set sums.
* ``weighted_concordance`` sweeps patients by time with a Fenwick tree over
  risk ranks, O(n log n) per weight vector.
* ``best_logrank_split`` writes the log-rank numerator as a sum of per-row
  scores and the hypergeometric variance as a linear term minus a pairwise
  term over min(time_i, time_j), maintained with two Fenwick trees; every
  candidate threshold is scored in O(log n).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef double SPLIT_REL_TOL = 1e-10


def cox_derivatives(const double[::1] start, const double[::1] stop,
                    const unsigned char[::1] event, const double[:, ::1] X,
                    const double[::1] beta, bint efron=True):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j, k, a, b, l, q, r
    cdef double[::1] eta = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double shift = -1e300
    for i in range(n):
        eta[i] = 0.0
        for j in range(p):
            eta[i] += X[i, j] * beta[j]
        if eta[i] > shift:
            shift = eta[i]
    for i in range(n):
        w[i] = exp(eta[i] - shift)

    cdef Py_ssize_t[::1] by_stop = np.argsort(np.asarray(stop), kind="stable")
    cdef Py_ssize_t[::1] by_start = np.argsort(np.asarray(start), kind="stable")

    cdef double A0 = 0.0, B0 = 0.0, D0, s0, phi
    cdef double[::1] A1 = np.zeros(p), B1 = np.zeros(p), D1 = np.zeros(p), s1 = np.zeros(p)
    cdef double[:, ::1] A2 = np.zeros((p, p)), B2 = np.zeros((p, p)), D2 = np.zeros((p, p))
    cdef double ll = 0.0
    cdef double[::1] grad = np.zeros(p)
    cdef double[:, ::1] hess = np.zeros((p, p))
    cdef Py_ssize_t pa = n - 1, pb = n - 1, e_hi, e_lo
    cdef double t
    cdef int d

    # event rows sorted by stop: walk by_stop from the end and pick event rows
    e_hi = n - 1
    while e_hi >= 0:
        i = by_stop[e_hi]
        if not event[i]:
            e_hi -= 1
            continue
        t = stop[i]
        # add every row with stop >= t
        while pa >= 0 and stop[by_stop[pa]] >= t:
            r = by_stop[pa]
            A0 += w[r]
            for j in range(p):
                A1[j] += w[r] * X[r, j]
                for q in range(p):
                    A2[j, q] += w[r] * X[r, j] * X[r, q]
            pa -= 1
        # rows with start >= t are not at risk
        while pb >= 0 and start[by_start[pb]] >= t:
            r = by_start[pb]
            B0 += w[r]
            for j in range(p):
                B1[j] += w[r] * X[r, j]
                for q in range(p):
                    B2[j, q] += w[r] * X[r, j] * X[r, q]
            pb -= 1
        # tied events at t
        D0 = 0.0
        for j in range(p):
            D1[j] = 0.0
            for q in range(p):
                D2[j, q] = 0.0
        d = 0
        e_lo = e_hi
        while e_lo >= 0 and stop[by_stop[e_lo]] == t:
            r = by_stop[e_lo]
            if event[r]:
                d += 1
                ll += eta[r]
                D0 += w[r]
                for j in range(p):
                    grad[j] += X[r, j]
                    D1[j] += w[r] * X[r, j]
                    for q in range(p):
                        D2[j, q] += w[r] * X[r, j] * X[r, q]
            e_lo -= 1
        for l in range(d):
            phi = (<double>l) / d if efron else 0.0
            s0 = (A0 - B0) - phi * D0
            ll -= log(s0) + shift
            for j in range(p):
                s1[j] = ((A1[j] - B1[j]) - phi * D1[j]) / s0
            for j in range(p):
                grad[j] -= s1[j]
                for q in range(p):
                    hess[j, q] -= ((A2[j, q] - B2[j, q]) - phi * D2[j, q]) / s0 - s1[j] * s1[q]
        e_hi = e_lo
    return ll, np.asarray(grad), np.asarray(hess)


cdef inline void _fw_add(double[::1] tree, Py_ssize_t pos, double v) noexcept nogil:
    # 1-based position
    while pos < tree.shape[0]:
        tree[pos] += v
        pos += pos & (-pos)


cdef inline double _fw_sum(double[::1] tree, Py_ssize_t pos) noexcept nogil:
    # sum of positions 1..pos
    cdef double s = 0.0
    while pos > 0:
        s += tree[pos]
        pos -= pos & (-pos)
    return s


def weighted_concordance(const double[::1] T, const unsigned char[::1] event_ok,
                         const unsigned char[::1] eligible, const Py_ssize_t[::1] risk_rank,
                         const double[:, ::1] W):
    cdef Py_ssize_t n = T.shape[0], B = W.shape[0]
    idx_np = np.flatnonzero(np.asarray(eligible))
    idx_np = idx_np[np.argsort(np.asarray(T)[idx_np], kind="stable")]
    cdef Py_ssize_t[::1] idx = idx_np
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t max_rank = 0
    cdef Py_ssize_t i, b, hi, lo, g, rk
    for i in range(m):
        if risk_rank[idx[i]] > max_rank:
            max_rank = risk_rank[idx[i]]
    cdef double[::1] tree = np.zeros(max_rank + 2)
    cdef double[::1] num2 = np.zeros(B), den = np.zeros(B)
    cdef double total, wi, less, upto, acc_n, acc_d
    cdef double t
    with nogil:
        for b in range(B):
            for i in range(max_rank + 2):
                tree[i] = 0.0
            total = 0.0
            acc_n = 0.0
            acc_d = 0.0
            hi = m - 1
            while hi >= 0:
                t = T[idx[hi]]
                lo = hi
                while lo >= 0 and T[idx[lo]] == t:
                    lo -= 1
                # query the whole tie group before inserting it (strict T_i < T_j)
                for g in range(lo + 1, hi + 1):
                    i = idx[g]
                    wi = W[b, i]
                    if wi == 0.0 or not event_ok[i]:
                        continue
                    rk = risk_rank[i] + 1
                    less = _fw_sum(tree, rk - 1)
                    upto = _fw_sum(tree, rk)
                    acc_n += wi * (2.0 * less + (upto - less))
                    acc_d += wi * total
                for g in range(lo + 1, hi + 1):
                    i = idx[g]
                    wi = W[b, i]
                    if wi != 0.0:
                        _fw_add(tree, risk_rank[i] + 1, wi)
                        total += wi
                hi = lo
            num2[b] = acc_n
            den[b] = acc_d
    return np.asarray(num2), np.asarray(den)


def best_logrank_split(const double[:, ::1] Xn, const double[::1] time,
                       const unsigned char[::1] event, Py_ssize_t min_leaf=1):
    cdef Py_ssize_t n = Xn.shape[0], m = Xn.shape[1]
    cdef Py_ssize_t i, k, c, K, pos, rk, o, nxt
    best_c, best_thr, best_stat = -1, float("nan"), 0.0
    if n < 2:
        return best_c, best_thr, best_stat

    t_np = np.asarray(time)
    e_np = np.asarray(event).astype(bool)
    if not e_np.any():
        return best_c, best_thr, best_stat
    uniq, inv = np.unique(t_np, return_inverse=True)
    K = uniq.shape[0]
    cdef Py_ssize_t[::1] rank = inv.astype(np.intp)
    cnt = np.bincount(inv, minlength=K).astype(float)
    dth = np.bincount(inv, weights=e_np.astype(float), minlength=K)
    Y = np.cumsum(cnt[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        ck = np.where(Y > 1, dth * (Y - dth) / (Y * (Y - 1)), 0.0)
    cdef double[::1] Lam = np.cumsum(dth / Y)
    cdef double[::1] Ccum = np.cumsum(ck)
    cdef double[::1] Gcum = np.cumsum(ck / Y)

    cdef double[::1] cnt_tree = np.zeros(K + 1)
    cdef double[::1] g_tree = np.zeros(K + 1)
    cdef double U, Vlin, Q, A, Bs, G, V, stat, thr, xa, xb
    cdef double bstat = 0.0, bthr = 0.0
    cdef Py_ssize_t bcol = -1
    cdef Py_ssize_t[::1] order
    cdef double[::1] col

    for c in range(m):
        col_np = np.ascontiguousarray(np.asarray(Xn)[:, c])
        col = col_np
        order = np.argsort(col_np, kind="stable")
        for k in range(K + 1):
            cnt_tree[k] = 0.0
            g_tree[k] = 0.0
        U = 0.0
        Vlin = 0.0
        Q = 0.0
        for i in range(n - 1):
            o = order[i]
            rk = rank[o]
            G = Gcum[rk]
            U += (1.0 if event[o] else 0.0) - Lam[rk]
            Vlin += Ccum[rk]
            # left rows with time >= time_o contribute G(time_o); earlier ones their own G
            A = i - _fw_sum(cnt_tree, rk)
            Bs = _fw_sum(g_tree, rk)
            Q += G + 2.0 * (A * G + Bs)
            _fw_add(cnt_tree, rk + 1, 1.0)
            _fw_add(g_tree, rk + 1, G)
            nxt = order[i + 1]
            xa = col[o]
            xb = col[nxt]
            if xa == xb or i + 1 < min_leaf or n - i - 1 < min_leaf:
                continue
            V = Vlin - Q
            stat = U * U / V if V > 1e-12 else 0.0
            if stat > bstat + SPLIT_REL_TOL * bstat + 1e-14:
                thr = 0.5 * (xa + xb)
                if thr >= xb:
                    thr = xa
                bstat = stat
                bthr = thr
                bcol = c
    if bcol < 0:
        return best_c, best_thr, best_stat
    return int(bcol), float(bthr), float(bstat)
