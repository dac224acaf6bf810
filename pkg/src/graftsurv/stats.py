"""Comparing several models over several datasets.

Friedman test on within-dataset ranks, pairwise Wilcoxon signed-rank tests
with Holm's step-down correction, and the cliques of a critical-difference
diagram. Higher scores are better and get lower ranks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from html import escape
from itertools import combinations
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import stats as sps

from .errors import DataError

FORMAT_VERSION = 1
EXACT_MAX_N = 12


@dataclass(frozen=True)
class ScoreMatrix:
    """``values[j, d]`` is model ``j``'s score on dataset ``d``."""

    values: np.ndarray
    models: tuple[str, ...]
    datasets: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "datasets", tuple(self.datasets))
        if v.ndim != 2 or v.shape != (len(self.models), len(self.datasets)):
            raise DataError(f"score matrix shape {v.shape} does not match {len(self.models)} models x {len(self.datasets)} datasets")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise DataError("need at least 2 models and 2 datasets")
        if not np.isfinite(v).all():
            raise DataError("score matrix has missing or non-finite cells")
        if len(set(self.models)) != len(self.models):
            raise DataError("duplicate model labels")

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def rank_models(m: ScoreMatrix) -> np.ndarray:
    """Within-dataset ranks, 1 = best, average ranks for ties. Shape (k, N)."""
    return np.column_stack([sps.rankdata(-m.values[:, d]) for d in range(m.n)])


def friedman_test(m: ScoreMatrix) -> tuple[float, float]:
    """Friedman chi-square with the usual tie correction; ``k - 1`` degrees of freedom."""
    k, n = m.k, m.n
    ranks = rank_models(m)
    rank_sums = ranks.sum(axis=1)
    ties = 0.0
    for d in range(n):
        _, counts = np.unique(ranks[:, d], return_counts=True)
        ties += float(np.sum(counts**3 - counts))
    corr = 1.0 - ties / (k * (k * k - 1) * n)
    if corr <= 0:
        return 0.0, 1.0
    stat = (12.0 / (k * n * (k + 1)) * float(np.sum(rank_sums**2)) - 3.0 * n * (k + 1)) / corr
    stat = max(stat, 0.0)
    return stat, float(sps.chi2.sf(stat, k - 1))


def _signed_rank_parts(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    if len(x) < 2:
        raise ValueError("need at least 2 pairs")
    d = x - y
    d = d[d != 0]
    if d.size == 0:
        raise DataError("all differences are zero; the signed-rank test has no information")
    ranks = sps.rankdata(np.abs(d))
    return d, ranks


def _exact_p(ranks: np.ndarray, w: float) -> float:
    # ranks are multiples of 1/2, so doubled ranks are integers
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r]
    w2 = int(round(2 * w))
    tail = int(counts[: w2 + 1].sum())
    return min(1.0, 2.0 * tail / 2.0 ** len(r2))


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided signed-rank test; returns ``(W, p)`` with ``W = min(W+, W-)``.

    Zero differences are dropped. The p-value is exact for up to 12 nonzero
    differences and uses the tie-corrected normal approximation with
    continuity correction beyond that.
    """
    d, ranks = _signed_rank_parts(x, y)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    n = len(d)
    if n <= EXACT_MAX_N:
        return w, _exact_p(ranks, w)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    z = (w - mean + 0.5) / math.sqrt(var)
    return w, float(min(1.0, 2.0 * sps.norm.cdf(z)))


def holm_correction(pvals: Sequence[float]) -> np.ndarray:
    """Holm step-down adjusted p-values, in input order."""
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1:
        raise ValueError("pvals must be a vector")
    if np.any((p < 0) | (p > 1)) or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for i, j in enumerate(order):
        running = max(running, min(1.0, (m - i) * p[j]))
        adjusted[j] = running
    return adjusted


@dataclass(frozen=True)
class CDResult:
    models: tuple[str, ...]
    mean_ranks: np.ndarray
    friedman_statistic: float
    friedman_p: float
    pairwise_p: np.ndarray  # Holm-adjusted, symmetric, diagonal 1
    cliques: tuple[tuple[str, ...], ...]
    alpha: float

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "alpha": self.alpha,
            "models": list(self.models),
            "mean_ranks": {m: float(r) for m, r in zip(self.models, self.mean_ranks)},
            "friedman": {"statistic": self.friedman_statistic, "p": self.friedman_p},
            "pairwise_adjusted_p": {
                a: {b: float(self.pairwise_p[i, j]) for j, b in enumerate(self.models)}
                for i, a in enumerate(self.models)
            },
            "cliques": [list(c) for c in self.cliques],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_svg(self, width: int = 600) -> str:
        """Minimal diagram: rank axis, model ticks, and a bar per multi-model clique."""
        k = len(self.models)
        margin = 40
        span = width - 2 * margin

        def x(r):
            return margin + span * (r - 1) / max(k - 1, 1)

        order = np.argsort(self.mean_ranks, kind="stable")
        bars = [c for c in self.cliques if len(c) > 1]
        height = 60 + 18 * len(bars) + 20 * k
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">']
        out.append(f'<line x1="{margin}" y1="30" x2="{width - margin}" y2="30" stroke="black"/>')
        for r in range(1, k + 1):
            out.append(f'<line x1="{x(r):.1f}" y1="25" x2="{x(r):.1f}" y2="30" stroke="black"/>')
            out.append(f'<text x="{x(r):.1f}" y="20" text-anchor="middle">{r}</text>')
        rank_of = dict(zip(self.models, self.mean_ranks))
        for row, b in enumerate(bars):
            lo = min(rank_of[m] for m in b)
            hi = max(rank_of[m] for m in b)
            y = 40 + 18 * row
            out.append(f'<line x1="{x(lo) - 3:.1f}" y1="{y}" x2="{x(hi) + 3:.1f}" y2="{y}" stroke="black" stroke-width="4"/>')
        y0 = 50 + 18 * len(bars)
        for row, j in enumerate(order):
            y = y0 + 20 * row
            xr = x(self.mean_ranks[j])
            out.append(f'<line x1="{xr:.1f}" y1="30" x2="{xr:.1f}" y2="{y}" stroke="gray"/>')
            out.append(f'<text x="{xr + 4:.1f}" y="{y + 4}">{escape(self.models[j])} ({self.mean_ranks[j]:.2f})</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def critical_difference(m: ScoreMatrix, alpha: float = 0.05) -> CDResult:
    """Friedman gate, then Holm-adjusted pairwise Wilcoxon tests and maximal cliques.

    A pair whose scores agree on every dataset gets p = 1.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = m.k
    mean_ranks = rank_models(m).mean(axis=1)
    stat, p = friedman_test(m)
    padj = np.ones((k, k))
    if p >= alpha:
        cliques = (tuple(sorted(m.models)),)
    else:
        pairs = list(combinations(range(k), 2))
        raw = []
        for a, b in pairs:
            try:
                raw.append(wilcoxon_signed_rank(m.values[a], m.values[b])[1])
            except DataError:
                raw.append(1.0)
        adj = holm_correction(raw)
        g = nx.Graph()
        g.add_nodes_from(range(k))
        for (a, b), q in zip(pairs, adj):
            padj[a, b] = padj[b, a] = q
            if q >= alpha:
                g.add_edge(a, b)
        found = [tuple(sorted(m.models[i] for i in c)) for c in nx.find_cliques(g)]
        cliques = tuple(sorted(found, key=lambda c: (min(mean_ranks[m.models.index(x)] for x in c), c)))
    return CDResult(m.models, mean_ranks, stat, p, padj, cliques, alpha)
