"""Concordance metrics for censored outcomes.

Harrell's C, the time-dependent concordance index TDCI(t, dt), the mean-TDCI
grid, and patient-level bootstrap confidence intervals.

Pair counting is exact: concordant pairs count 2, risk ties 1, and the
index is ``(count / 2) / n_valid``, so any implementation that counts the
same pairs returns a bit-identical value.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _kernels
from .cohort import DAYS_PER_YEAR, EventType, PatientSeries
from .errors import DataError, UndefinedMetricError

DEFAULT_TS: tuple[float, ...] = (0.5, 1.0, 3.0, 5.0)
DEFAULT_DTS: tuple[float, ...] = (1.0, 3.0, 5.0, 7.0)


def _dense_rank(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise DataError("risk scores must be finite")
    return np.unique(values, return_inverse=True)[1].astype(np.intp).reshape(-1)


def _ratio(num2: float, den: float) -> float:
    return (num2 * 0.5) / den if den > 0 else float("nan")


def harrell_c(time, event, risk) -> float:
    """Harrell's C over pairs with ``time_i < time_j`` and ``event_i == 1``.

    Higher risk should mean earlier failure. Risk ties count one half.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    risk = np.asarray(risk, dtype=float)
    if not (time.shape == event.shape == risk.shape):
        raise ValueError("time, event and risk must have the same shape")
    num2, den = _kernels.weighted_concordance(
        time, event, np.ones(len(time), bool), _dense_rank(risk), np.ones((1, len(time)))
    )
    if den[0] == 0:
        raise UndefinedMetricError("no comparable pairs")
    return _ratio(num2[0], den[0])


# --------------------------------------------------------------------------- datasets


class Snapshot:
    """Covariates carried forward to a prediction time for the eligible patients."""

    def __init__(self, dataset: "EvalDataset", patients: np.ndarray, rows: np.ndarray):
        self.dataset = dataset
        self.patients = patients
        self.rows = rows
        self.feature_names = dataset.feature_names

    @property
    def z(self) -> np.ndarray:
        return self.dataset.z[self.rows]

    @property
    def raw(self) -> np.ndarray:
        return self.dataset.raw[self.rows]

    def _cols(self, names):
        return [self.feature_names.index(n) for n in names]

    def z_for(self, names: Sequence[str]) -> np.ndarray:
        return self.dataset.z[np.ix_(self.rows, self._cols(names))]

    def raw_for(self, names: Sequence[str]) -> np.ndarray:
        return self.dataset.raw[np.ix_(self.rows, self._cols(names))]

    def static(self, name: str) -> np.ndarray:
        return self.dataset.static[name][self.patients]

    def __len__(self):
        return len(self.patients)


RiskFn = Callable[[Snapshot, float, float], np.ndarray]


@dataclass(frozen=True)
class EvalDataset:
    """Patients for evaluation, with follow-up rows flattened.

    ``event`` is true for graft failure only; competing death counts as
    censoring. Times are integer days. ``offsets[i]:offsets[i+1]`` indexes
    patient ``i``'s follow-up rows, sorted by day.
    """

    patient_ids: tuple[str, ...]
    regions: tuple[str, ...]
    event_day: np.ndarray
    event: np.ndarray
    offsets: np.ndarray
    followup_day: np.ndarray
    raw: np.ndarray
    z: np.ndarray
    feature_names: tuple[str, ...]
    static: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.patient_ids)

    @property
    def time_years(self) -> np.ndarray:
        return self.event_day / DAYS_PER_YEAR

    @classmethod
    def from_series(
        cls,
        series: Sequence[PatientSeries],
        feature_names: Sequence[str],
        static: Mapping[str, Mapping[str, float]] | None = None,
    ) -> "EvalDataset":
        counts = [len(s.followup_days) for s in series]
        p = len(feature_names)
        ids = tuple(s.patient_id for s in series)
        st = {}
        for name, values in (static or {}).items():
            try:
                st[name] = np.array([float(values[pid]) for pid in ids])
            except KeyError as exc:
                raise DataError(f"static value {name!r} missing for patient {exc}") from None
        return cls(
            patient_ids=ids,
            regions=tuple(s.region for s in series),
            event_day=np.array([s.event_day for s in series], dtype=np.int64),
            event=np.array([s.event_type == EventType.GRAFT_FAILURE for s in series], dtype=bool),
            offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            followup_day=np.concatenate([s.followup_days for s in series] or [np.zeros(0)]).astype(np.int64),
            raw=np.concatenate([s.raw.reshape(-1, p) for s in series] or [np.zeros((0, p))]),
            z=np.concatenate([s.z.reshape(-1, p) for s in series] or [np.zeros((0, p))]),
            feature_names=tuple(feature_names),
            static=st,
        )

    @classmethod
    def from_static(cls, time_days, event, risk_name: str = "risk", risk=None) -> "EvalDataset":
        """Dataset where every patient has a single observation at day 0."""
        time_days = np.asarray(time_days)
        n = len(time_days)
        static = {} if risk is None else {risk_name: np.asarray(risk, dtype=float)}
        return cls(
            patient_ids=tuple(str(i) for i in range(n)),
            regions=("",) * n,
            event_day=time_days.astype(np.int64),
            event=np.asarray(event, dtype=bool),
            offsets=np.arange(n + 1, dtype=np.int64),
            followup_day=np.zeros(n, dtype=np.int64),
            raw=np.zeros((n, 0)),
            z=np.zeros((n, 0)),
            feature_names=(),
            static=static,
        )

    def subset(self, idx: Sequence[int]) -> "EvalDataset":
        """Patients ``idx`` in that order (duplicates allowed, as in a bootstrap)."""
        idx = np.asarray(idx, dtype=np.int64)
        starts, ends = self.offsets[idx], self.offsets[idx + 1]
        rows = np.concatenate([np.arange(a, b) for a, b in zip(starts, ends)] or [np.zeros(0, np.int64)])
        return EvalDataset(
            patient_ids=tuple(self.patient_ids[i] for i in idx),
            regions=tuple(self.regions[i] for i in idx),
            event_day=self.event_day[idx],
            event=self.event[idx],
            offsets=np.concatenate([[0], np.cumsum(ends - starts)]).astype(np.int64),
            followup_day=self.followup_day[rows],
            raw=self.raw[rows],
            z=self.z[rows],
            feature_names=self.feature_names,
            static={k: v[idx] for k, v in self.static.items()},
        )

    def select_regions(self, regions: Sequence[str]) -> "EvalDataset":
        keep = [i for i, r in enumerate(self.regions) if r in set(regions)]
        return self.subset(keep)

    def snapshot(self, t_years: float) -> Snapshot:
        """Patients event-free past ``t`` with a follow-up at or before ``t``."""
        t_days = t_years * DAYS_PER_YEAR
        n = len(self)
        owner = np.repeat(np.arange(n), np.diff(self.offsets))
        seen = np.bincount(owner[self.followup_day <= t_days], minlength=n)
        eligible = (seen > 0) & (self.event_day > t_days)
        patients = np.flatnonzero(eligible)
        rows = self.offsets[patients] + seen[patients] - 1
        return Snapshot(self, patients, rows)


def _cell(dataset: EvalDataset, risk_fn: RiskFn, t: float, dt: float):
    """Full-length kernel inputs for one (t, dt) cell."""
    if t < 0 or dt <= 0:
        raise ValueError(f"need t >= 0 and dt > 0, got t={t}, dt={dt}")
    snap = dataset.snapshot(t)
    n = len(dataset)
    eligible = np.zeros(n, bool)
    eligible[snap.patients] = True
    rank = np.zeros(n, np.intp)
    if len(snap):
        r = np.asarray(risk_fn(snap, t, dt), dtype=float).reshape(-1)
        if r.shape != (len(snap),):
            raise ValueError(f"risk_fn returned {r.shape[0]} values for {len(snap)} patients")
        rank[snap.patients] = _dense_rank(r)
    horizon = (t + dt) * DAYS_PER_YEAR
    event_ok = dataset.event & (dataset.event_day < horizon)
    return dataset.event_day.astype(float), event_ok, eligible, rank


def tdci(dataset: EvalDataset, risk_fn: RiskFn, t: float, dt: float) -> float:
    """Time-dependent concordance at prediction time ``t`` over window ``dt`` (years).

    A pair (i, j) is valid when ``T_i < T_j``, ``T_i < t + dt``, patient i
    had a graft failure, and both patients are event-free after ``t`` with a
    follow-up at or before ``t``. Risks come from ``risk_fn`` applied to the
    covariates carried forward to ``t``. Returns NaN when no pair is valid.
    """
    T, ev, el, rank = _cell(dataset, risk_fn, t, dt)
    num2, den = _kernels.weighted_concordance(T, ev, el, rank, np.ones((1, len(T))))
    return _ratio(num2[0], den[0])


@dataclass(frozen=True)
class TDCIGrid:
    ts: tuple[float, ...]
    dts: tuple[float, ...]
    values: np.ndarray  # (len(ts), len(dts)); NaN where undefined
    mask: np.ndarray  # True where defined
    mean: float

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())


def _grid_from_values(ts, dts, values) -> TDCIGrid:
    mask = np.isfinite(values)
    mean = float(values[mask].mean()) if mask.any() else float("nan")
    return TDCIGrid(tuple(ts), tuple(dts), values, mask, mean)


def mean_tdci(
    dataset: EvalDataset,
    risk_fn: RiskFn,
    ts: Sequence[float] = DEFAULT_TS,
    dts: Sequence[float] = DEFAULT_DTS,
) -> TDCIGrid:
    """TDCI over the (t, dt) grid and its mean over defined cells."""
    if not ts or not dts:
        raise ValueError("ts and dts must be non-empty")
    values = np.array([[tdci(dataset, risk_fn, t, dt) for dt in dts] for t in ts], dtype=float)
    grid = _grid_from_values(ts, dts, values)
    if not grid.mask.any():
        raise UndefinedMetricError("every TDCI cell is undefined (no valid pairs)")
    return grid


# --------------------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class CIResult:
    point: float
    lower: float
    upper: float
    level: float
    n_resamples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "n_resamples": self.n_resamples,
            "seed": self.seed,
        }


def resample_indices(n: int, seed: int, b: int) -> np.ndarray:
    """Patient indices of bootstrap resample ``b``; an independent stream per (seed, b)."""
    return np.random.default_rng([seed, b]).integers(0, n, size=n)


def _percentile_ci(point, samples, level, n_resamples, seed) -> CIResult:
    lo, hi = np.quantile(samples, [(1 - level) / 2, (1 + level) / 2])
    return CIResult(float(point), float(min(lo, point)), float(max(hi, point)), level, n_resamples, seed)


def _check_failures(n_failed: int, n_resamples: int):
    if n_failed > 0.01 * n_resamples:
        raise UndefinedMetricError(
            f"statistic undefined on {n_failed} of {n_resamples} bootstrap resamples"
        )


def bootstrap_ci(
    statistic: Callable[[EvalDataset], float],
    dataset: EvalDataset,
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> CIResult:
    """Percentile interval from resampling patients with replacement.

    The interval is widened if necessary so it contains the point estimate.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    point = float(statistic(dataset))
    samples, failed = [], 0
    for b in range(n_resamples):
        try:
            v = float(statistic(dataset.subset(resample_indices(len(dataset), seed, b))))
        except UndefinedMetricError:
            v = float("nan")
        if np.isfinite(v):
            samples.append(v)
        else:
            failed += 1
    _check_failures(failed, n_resamples)
    return _percentile_ci(point, np.asarray(samples), level, n_resamples, seed)


@dataclass(frozen=True)
class EvalResult:
    model: str
    site: str
    grid: TDCIGrid
    ci: CIResult
    cell_lower: np.ndarray
    cell_upper: np.ndarray
    n_patients: int

    def to_dict(self) -> dict:
        def nan_to_none(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in a]

        return {
            "format_version": 1,
            "model": self.model,
            "site": self.site,
            "n_patients": self.n_patients,
            "prediction_times": list(self.grid.ts),
            "windows": list(self.grid.dts),
            "tdci": nan_to_none(self.grid.values),
            "mask": self.grid.mask.astype(bool).tolist(),
            "mean_tdci": self.grid.mean,
            "ci": self.ci.to_dict(),
            "cell_ci_lower": nan_to_none(self.cell_lower),
            "cell_ci_upper": nan_to_none(self.cell_upper),
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for a, t in enumerate(self.grid.ts):
            for b, dt in enumerate(self.grid.dts):
                if not self.grid.mask[a, b]:
                    continue
                rows.append(
                    {
                        "model": self.model,
                        "site": self.site,
                        "prediction_time": t,
                        "window": dt,
                        "tdci": float(self.grid.values[a, b]),
                        "ci_lo": float(self.cell_lower[a, b]),
                        "ci_hi": float(self.cell_upper[a, b]),
                    }
                )
        return rows


CELL_CSV_FIELDS = ("model", "site", "prediction_time", "window", "tdci", "ci_lo", "ci_hi")


def results_to_csv(results: Sequence[EvalResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CELL_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in results:
        for row in r.csv_rows():
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) and k not in ("prediction_time", "window") else v)
                        for k, v in row.items()})
    return buf.getvalue()


def results_to_json(results: Sequence[EvalResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True)


def evaluate(
    dataset: EvalDataset,
    risk_fn: RiskFn,
    model: str = "model",
    site: str = "all",
    ts: Sequence[float] = DEFAULT_TS,
    dts: Sequence[float] = DEFAULT_DTS,
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> EvalResult:
    """Mean-TDCI grid with bootstrap intervals for the mean and every cell.

    Equivalent to :func:`bootstrap_ci` on ``mean_tdci(...).mean`` (same
    resamples, same values) but each resample is scored by reweighting
    patients instead of rebuilding the dataset, so the risk function is
    evaluated once per cell.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    n = len(dataset)
    cells = [[_cell(dataset, risk_fn, t, dt) for dt in dts] for t in ts]
    W = np.stack([np.bincount(resample_indices(n, seed, b), minlength=n) for b in range(n_resamples)])
    W = np.vstack([np.ones((1, n)), W.astype(float)])
    vals = np.full((n_resamples + 1, len(ts), len(dts)), np.nan)
    for a in range(len(ts)):
        for b in range(len(dts)):
            T, ev, el, rank = cells[a][b]
            num2, den = _kernels.weighted_concordance(T, ev, el, rank, W)
            with np.errstate(invalid="ignore", divide="ignore"):
                vals[:, a, b] = np.where(den > 0, (num2 * 0.5) / np.where(den > 0, den, 1.0), np.nan)
    grid = _grid_from_values(ts, dts, vals[0])
    if not grid.mask.any():
        raise UndefinedMetricError("every TDCI cell is undefined (no valid pairs)")
    means = np.array([_grid_from_values(ts, dts, v).mean for v in vals[1:]])
    ok = np.isfinite(means)
    _check_failures(int((~ok).sum()), n_resamples)
    ci = _percentile_ci(grid.mean, means[ok], level, n_resamples, seed)
    lo = np.full((len(ts), len(dts)), np.nan)
    hi = np.full_like(lo, np.nan)
    q = [(1 - level) / 2, (1 + level) / 2]
    for a in range(len(ts)):
        for b in range(len(dts)):
            if not grid.mask[a, b]:
                continue
            s = vals[1:, a, b]
            s = s[np.isfinite(s)]
            point = vals[0, a, b]
            l, h = np.quantile(s, q) if len(s) else (point, point)
            lo[a, b], hi[a, b] = min(l, point), max(h, point)
    return EvalResult(model, site, grid, ci, lo, hi, n)
