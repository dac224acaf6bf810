"""Pure numpy implementations of the hot kernels.

These evaluate each formula directly (risk-set sums by searchsorted,
log-rank sums over an explicit at-risk matrix, pairwise concordance by
broadcasting). They are the reference the compiled kernels are checked
against, and the fallback when the extension is not built.
"""
from __future__ import annotations

import numpy as np

SPLIT_REL_TOL = 1e-10


def cox_derivatives(start, stop, event, X, beta, efron=True):
    """Log partial likelihood, score and Hessian for counting-process data.

    Risk set at event time t is every row with ``start < t <= stop``.
    """
    n, p = X.shape
    eta = X @ beta
    shift = eta.max() if n else 0.0
    w = np.exp(eta - shift)
    wx = w[:, None] * X
    wxx = wx[:, :, None] * X[:, None, :]

    ev_idx = np.flatnonzero(event)
    ev_idx = ev_idx[np.argsort(stop[ev_idx], kind="stable")]
    times, first = np.unique(stop[ev_idx], return_index=True)
    d = np.diff(np.append(first, len(ev_idx)))

    def suffix(key):
        order = np.argsort(key, kind="stable")
        k = key[order]
        pos = np.searchsorted(k, times, side="left")
        out = []
        for arr in (w, wx, wxx):
            a = arr[order]
            cs = np.concatenate([np.cumsum(a[::-1], axis=0)[::-1], np.zeros((1,) + a.shape[1:])])
            out.append(cs[pos])
        return out

    a0, a1, a2 = suffix(stop)
    b0, b1, b2 = suffix(start)
    r0, r1, r2 = a0 - b0, a1 - b1, a2 - b2
    d0 = np.add.reduceat(w[ev_idx], first)
    d1 = np.add.reduceat(wx[ev_idx], first, axis=0)
    d2 = np.add.reduceat(wxx[ev_idx], first, axis=0)

    ll = float(eta[ev_idx].sum())
    grad = X[ev_idx].sum(axis=0)
    hess = np.zeros((p, p))
    for l in range(int(d.max()) if len(d) else 0):
        active = d > l
        phi = (l / d[active]) if efron else np.zeros(active.sum())
        s0 = r0[active] - phi * d0[active]
        s1 = r1[active] - phi[:, None] * d1[active]
        s2 = r2[active] - phi[:, None, None] * d2[active]
        ll -= float(np.sum(np.log(s0) + shift))
        m = s1 / s0[:, None]
        grad = grad - m.sum(axis=0)
        hess = hess - (s2 / s0[:, None, None]).sum(axis=0) + np.einsum("ki,kj->ij", m, m)
    return ll, grad, hess


def weighted_concordance(T, event_ok, eligible, risk_rank, W):
    """Weighted pair counts for concordance over many weight vectors.

    For each row ``w`` of ``W`` returns ``num2 = sum w_i w_j (2[r_i > r_j] + [r_i == r_j])``
    and ``den = sum w_i w_j`` over valid pairs: both eligible, ``event_ok[i]``
    and ``T[i] < T[j]``. Counts are exact for integer weights.
    """
    idx = np.flatnonzero(eligible)
    t = T[idx]
    r = risk_rank[idx]
    valid = event_ok[idx][:, None] & (t[:, None] < t[None, :])
    score = 2.0 * (r[:, None] > r[None, :]) + (r[:, None] == r[None, :])
    V = valid.astype(float)
    S = V * score
    Wi = np.asarray(W, dtype=float)[:, idx]
    num2 = np.einsum("bi,bi->b", Wi @ S, Wi)
    den = np.einsum("bi,bi->b", Wi @ V, Wi)
    return num2, den


def _logrank_candidates(t_sorted, e_sorted, event_times, block=256):
    """Log-rank chi-square for every prefix split of rows sorted by a feature."""
    n = t_sorted.shape[0]
    O_E = np.zeros(n)
    V = np.zeros(n)
    for lo in range(0, event_times.size, block):
        et = event_times[lo : lo + block]
        at_risk = (t_sorted[:, None] >= et[None, :]).astype(float)
        dead = (e_sorted[:, None] & (t_sorted[:, None] == et[None, :])).astype(float)
        Y = at_risk.sum(axis=0)
        D = dead.sum(axis=0)
        frac = np.cumsum(at_risk, axis=0) / Y
        O_E += (np.cumsum(dead, axis=0) - D * frac).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            vfac = np.where(Y > 1, D * (Y - D) / (Y - 1), 0.0)
        V += (vfac * frac * (1.0 - frac)).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(V > 1e-12, O_E * O_E / V, 0.0)


def best_logrank_split(Xn, time, event, min_leaf=1):
    """Best (column, threshold, statistic) over midpoint thresholds of every column.

    Ties (within a relative 1e-10) keep the lower column, then the lower threshold.
    Returns ``(-1, nan, 0.0)`` when no admissible split exists.
    """
    n, m = Xn.shape
    event = np.asarray(event, dtype=bool)
    event_times = np.unique(time[event])
    best = (-1, float("nan"), 0.0)
    if n < 2 or event_times.size == 0:
        return best
    for c in range(m):
        order = np.argsort(Xn[:, c], kind="stable")
        xs = Xn[order, c]
        stat = _logrank_candidates(time[order], event[order], event_times)
        k_all = np.arange(n - 1)
        ok = (xs[:-1] != xs[1:]) & (k_all + 1 >= min_leaf) & (n - k_all - 1 >= min_leaf)
        for k in np.flatnonzero(ok):
            s = stat[k]
            if s > best[2] + SPLIT_REL_TOL * best[2] + 1e-14:
                thr = 0.5 * (xs[k] + xs[k + 1])
                if thr >= xs[k + 1]:
                    thr = xs[k]
                best = (c, float(thr), float(s))
    return best
