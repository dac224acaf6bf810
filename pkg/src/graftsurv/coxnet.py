"""Elastic-net penalized Cox proportional hazards on counting-process data.

The objective maximized by :func:`fit_cox` is::

    ll(beta) - penalizer * (l1_ratio * |beta|_1 + (1 - l1_ratio) / 2 * |beta|_2^2)

where ``ll`` is the log partial likelihood over (start, stop] risk sets.
The penalty is not scaled by the number of events. Competing deaths are
treated as censoring.
"""
from __future__ import annotations

import enum
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .cohort import FEATURES, AugmentedRow, BiomarkerPanel, EventType, IntervalRow, NormalizationStats
from .errors import ConvergenceError, DataError, GraftSurvError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
COEF_NORM_BOUND = 50.0
MAX_HALVINGS = 20
STALL_STEP_TOL = 1e-4
MIN_CURVATURE = 1e-8


class Ties(str, enum.Enum):
    EFRON = "efron"
    BRESLOW = "breslow"


@dataclass(frozen=True)
class FitConfig:
    penalizer: float = 0.0
    l1_ratio: float = 0.0
    max_iter: int = 100
    tol: float = 1e-7
    ties_method: Ties = Ties.EFRON

    def __post_init__(self):
        if not self.penalizer >= 0:
            raise ValueError(f"penalizer must be >= 0, got {self.penalizer}")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        object.__setattr__(self, "ties_method", Ties(self.ties_method))


PENALIZER_GRID = (0.0, 0.01, 0.1, 0.2, 0.5, 1.0, 10.0)
L1_RATIO_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
COX_GRID: tuple[FitConfig, ...] = tuple(
    FitConfig(penalizer=lam, l1_ratio=a) for lam, a in itertools.product(PENALIZER_GRID, L1_RATIO_GRID)
)


@dataclass(frozen=True)
class CoxData:
    """Column arrays for fitting. ``event`` is true only for graft failure."""

    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...] = FEATURES
    normalization: NormalizationStats | None = None

    def __post_init__(self):
        n = len(self.stop)
        if not (len(self.start) == len(self.event) == self.X.shape[0] == n):
            raise ValueError("start, stop, event and X must have the same number of rows")
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise ValueError("X columns must match feature_names")
        if np.any(self.start >= self.stop):
            raise DataError("every interval needs start < stop")

    @classmethod
    def from_intervals(
        cls,
        rows: Sequence[IntervalRow],
        feature_names: Sequence[str] = FEATURES,
        normalization: NormalizationStats | None = None,
    ) -> "CoxData":
        return cls(
            start=np.array([r.start for r in rows], dtype=float),
            stop=np.array([r.stop for r in rows], dtype=float),
            event=np.array([r.event == EventType.GRAFT_FAILURE for r in rows], dtype=bool),
            X=np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), len(feature_names)),
            feature_names=tuple(feature_names),
            normalization=normalization,
        )

    @classmethod
    def from_augmented(
        cls,
        rows: Sequence[AugmentedRow],
        feature_names: Sequence[str] = FEATURES,
        normalization: NormalizationStats | None = None,
    ) -> "CoxData":
        return cls(
            start=np.zeros(len(rows)),
            stop=np.array([r.time_to_event for r in rows], dtype=float),
            event=np.array([r.event == EventType.GRAFT_FAILURE for r in rows], dtype=bool),
            X=np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), len(feature_names)),
            feature_names=tuple(feature_names),
            normalization=normalization,
        )

    @classmethod
    def from_arrays(cls, time, event, X, start=None, feature_names=None) -> "CoxData":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        time = np.asarray(time, dtype=float)
        return cls(
            start=np.zeros_like(time) if start is None else np.asarray(start, dtype=float),
            stop=time,
            event=np.asarray(event, dtype=bool),
            X=X,
            feature_names=tuple(feature_names or (f"x{j}" for j in range(X.shape[1]))),
        )

    def select(self, names: Sequence[str]) -> "CoxData":
        """Project onto a subset of features (in the given order)."""
        if not names:
            raise ValueError("feature subset must not be empty")
        unknown = [n for n in names if n not in self.feature_names]
        if unknown:
            raise ValueError(f"unknown feature(s): {unknown}")
        idx = [self.feature_names.index(n) for n in names]
        return CoxData(
            self.start,
            self.stop,
            self.event,
            self.X[:, idx],
            tuple(names),
            None if self.normalization is None else self.normalization.subset(names),
        )


def _derivs(beta, data: CoxData, ties) -> tuple[float, np.ndarray, np.ndarray]:
    if not data.event.any():
        raise DataError("partial likelihood needs at least one event")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.X.shape[1],):
        raise ValueError(f"beta has shape {beta.shape}, expected ({data.X.shape[1]},)")
    return _kernels.cox_derivatives(
        data.start, data.stop, data.event, data.X, beta, Ties(ties) == Ties.EFRON
    )


def partial_loglik(beta, data: CoxData, ties: Ties | str = Ties.EFRON) -> float:
    """Log partial likelihood under the Efron or Breslow tie correction."""
    return float(_derivs(beta, data, ties)[0])


def gradient(beta, data: CoxData, ties: Ties | str = Ties.EFRON) -> np.ndarray:
    """Score vector (analytic derivative of :func:`partial_loglik`)."""
    return np.asarray(_derivs(beta, data, ties)[1])


def hessian(beta, data: CoxData, ties: Ties | str = Ties.EFRON) -> np.ndarray:
    return np.asarray(_derivs(beta, data, ties)[2])


# --------------------------------------------------------------------------- baseline


@dataclass(frozen=True)
class BreslowBaseline:
    """Right-continuous step function H0 jumping at each distinct event time."""

    times: tuple[float, ...]
    cumhaz: tuple[float, ...]

    def __call__(self, t) -> np.ndarray | float:
        idx = np.searchsorted(np.asarray(self.times), t, side="right")
        values = np.concatenate([[0.0], np.asarray(self.cumhaz)])
        out = values[idx]
        return float(out) if np.ndim(out) == 0 else out


def _breslow_from_beta(beta: np.ndarray, data: CoxData) -> BreslowBaseline:
    eta = data.X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    times, d = np.unique(data.stop[data.event], return_counts=True)

    def suffix_sum(key):
        order = np.argsort(key, kind="stable")
        cs = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
        return cs[np.searchsorted(key[order], times, side="left")]

    risk = suffix_sum(data.stop) - suffix_sum(data.start)
    jumps = d / risk * math.exp(-shift)
    return BreslowBaseline(tuple(times.tolist()), tuple(np.cumsum(jumps).tolist()))


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    log_likelihood: float
    penalized_log_likelihood: float
    converged: bool


@dataclass(frozen=True)
class CoxModel:
    coefficients: np.ndarray
    feature_names: tuple[str, ...]
    normalization: NormalizationStats | None
    baseline: BreslowBaseline
    diagnostics: FitDiagnostics
    config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if len(self.coefficients) != len(self.feature_names):
            raise ValueError("coefficient vector length must equal the number of features")

    def risk(self, Z) -> np.ndarray:
        """Linear predictor for a matrix of z-scored covariates."""
        return np.asarray(Z, dtype=float) @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_type": "cox",
            "feature_names": list(self.feature_names),
            "coefficients": [float(b) for b in self.coefficients],
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
            "baseline": {"times": list(self.baseline.times), "cumhaz": list(self.baseline.cumhaz)},
            "fit_diagnostics": asdict(self.diagnostics),
            "config": {
                "penalizer": self.config.penalizer,
                "l1_ratio": self.config.l1_ratio,
                "max_iter": self.config.max_iter,
                "tol": self.config.tol,
                "ties_method": self.config.ties_method.value,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        if d.get("model_type") != "cox":
            raise DataError(f"not a Cox model file (model_type={d.get('model_type')!r})")
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported Cox model format_version {d.get('format_version')!r}")
        norm = d.get("normalization")
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            feature_names=tuple(d["feature_names"]),
            normalization=None if norm is None else NormalizationStats.from_dict(norm),
            baseline=BreslowBaseline(tuple(d["baseline"]["times"]), tuple(d["baseline"]["cumhaz"])),
            diagnostics=FitDiagnostics(**d["fit_diagnostics"]),
            config=FitConfig(**d["config"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "CoxModel":
        return cls.from_dict(json.loads(text))


def _penalty(beta, lam, alpha) -> float:
    return lam * (alpha * np.abs(beta).sum() + 0.5 * (1 - alpha) * float(beta @ beta))


def _soft(x, t):
    return math.copysign(max(abs(x) - t, 0.0), x)


def _penalized_quadratic_step(A, g, beta, lam, alpha, sweeps=1000, tol=1e-13):
    """Maximizer of the penalized local quadratic model around ``beta``.

    Minimizes ``1/2 (b-beta)' A (b-beta) - g'(b-beta) + penalty(b)`` with
    ``A = -Hessian``. Pure ridge has a closed form; any L1 part is solved by
    cyclic coordinate descent with soft-thresholding.
    """
    p = len(beta)
    l1 = lam * alpha
    l2 = lam * (1 - alpha)
    rhs = g + A @ beta
    if l1 == 0:
        M = A + l2 * np.eye(p)
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(M, rhs, rcond=None)[0]
    b = beta.copy()
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(p):
            denom = A[j, j] + l2
            if denom <= 0:
                new = 0.0
            else:
                r = rhs[j] - (A[j] @ b - A[j, j] * b[j])
                new = _soft(r, l1) / denom
            biggest = max(biggest, abs(new - b[j]))
            b[j] = new
        if biggest < tol:
            break
    return b


def fit_cox(data: CoxData, config: FitConfig = FitConfig(), coef_bound: float = COEF_NORM_BOUND) -> CoxModel:
    """Penalized Newton-Raphson with step-halving.

    Raises
    ------
    DataError
        No graft-failure events, or a constant covariate column.
    ConvergenceError
        The coefficient norm exceeded ``coef_bound`` (monotone likelihood,
        e.g. perfect separation); a positive penalizer usually fixes this.
    """
    if not data.event.any():
        raise DataError("cannot fit a Cox model without any events")
    const = [n for n, s in zip(data.feature_names, data.X.std(axis=0)) if s == 0]
    if const:
        raise DataError(f"constant covariate column(s): {const}")
    lam, alpha, ties = config.penalizer, config.l1_ratio, config.ties_method
    p = data.X.shape[1]
    beta = np.zeros(p)
    ll, g, H = _derivs(beta, data, ties)
    f = ll - _penalty(beta, lam, alpha)
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        target = _penalized_quadratic_step(-H, g, beta, lam, alpha)
        delta = target - beta
        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step * delta
            ll_c, g_c, H_c = _derivs(cand, data, ties)
            f_c = ll_c - _penalty(cand, lam, alpha)
            if np.isfinite(f_c) and f_c >= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent left along the Newton direction. Near an optimum the
            # step is tiny; a large one means the likelihood flattened out in
            # floating point on its way to infinity.
            if np.linalg.norm(delta) > STALL_STEP_TOL * max(1.0, np.linalg.norm(beta)):
                raise ConvergenceError(
                    f"likelihood stopped increasing at |beta| = {np.linalg.norm(beta):.3g} with a Newton "
                    f"step of {np.linalg.norm(delta):.3g} (monotone likelihood / separation?); "
                    "use a positive penalizer"
                )
            converged = True
            break
        if np.linalg.norm(cand) > coef_bound:
            raise ConvergenceError(
                f"coefficient norm exceeded {coef_bound:g} after {it} iterations "
                "(monotone likelihood / separation?); use a positive penalizer"
            )
        rel = abs(f_c - f) / max(abs(f), 1e-300)
        small_step = np.linalg.norm(delta) <= STALL_STEP_TOL * max(1.0, np.linalg.norm(beta))
        beta, ll, g, H, f = cand, ll_c, g_c, H_c, f_c
        # a flat objective with a large Newton step is a likelihood creeping
        # toward its supremum, not an optimum
        if rel < config.tol and small_step:
            converged = True
            break
    if not converged:
        log.warning("Cox fit did not converge in %d iterations", config.max_iter)
    else:
        # curvature on the active coefficients must stay bounded away from zero;
        # a Hessian that underflowed to nothing marks a likelihood flat at infinity
        active = beta != 0
        if active.any():
            A = -H[np.ix_(active, active)] + lam * (1 - alpha) * np.eye(int(active.sum()))
            if np.linalg.eigvalsh(A).min() <= MIN_CURVATURE:
                raise ConvergenceError(
                    f"the likelihood is flat at |beta| = {np.linalg.norm(beta):.3g} "
                    "(monotone likelihood / separation?); use a positive penalizer"
                )
    return CoxModel(
        coefficients=beta,
        feature_names=data.feature_names,
        normalization=data.normalization,
        baseline=_breslow_from_beta(beta, data),
        diagnostics=FitDiagnostics(it, float(ll), float(f), converged),
        config=config,
    )


def linear_risk(model: CoxModel, covariates) -> float:
    """``beta' z``. Raw :class:`BiomarkerPanel` values are z-scored with the model's stats."""
    if isinstance(covariates, BiomarkerPanel):
        if model.normalization is None:
            raise ValueError("model has no normalization stats; pass z-scores instead")
        raw = []
        for name in model.feature_names:
            v = getattr(covariates, name)
            if v is None:
                raise DataError(f"missing covariate {name!r}")
            raw.append(v)
        z = model.normalization.subset(model.feature_names).transform(raw)
    else:
        z = np.asarray(covariates, dtype=float)
        if z.shape != (len(model.feature_names),):
            raise ValueError(f"expected {len(model.feature_names)} covariates, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DataError("covariates contain missing or non-finite values")
    return float(z @ model.coefficients)


def breslow_baseline(model: CoxModel | np.ndarray, data: CoxData) -> BreslowBaseline:
    """H0(t) = sum over event times t_k <= t of d_k / sum_{R(t_k)} exp(beta' z)."""
    beta = model.coefficients if isinstance(model, CoxModel) else np.asarray(model, dtype=float)
    if not data.event.any():
        raise DataError("baseline hazard needs at least one event")
    return _breslow_from_beta(beta, data)


def predict_survival(model: CoxModel, covariates, t):
    """S(t | z) = exp(-H0(t) exp(beta' z)); ``t`` in the fitting time unit (days)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    lp = linear_risk(model, covariates)
    with np.errstate(over="ignore"):
        s = np.exp(-model.baseline(t_arr) * math.exp(min(lp, 700.0)))
    return float(s) if np.ndim(s) == 0 else s


# --------------------------------------------------------------------------- model selection


class GridSearchResult(NamedTuple):
    best_config: FitConfig
    model: object
    trials: list  # (config, validation score or None, error message or None)


def _default_metric(model, val) -> float:
    from .metrics import mean_tdci

    names = list(model.feature_names)

    def risk_fn(snapshot, t, dt):
        return model.risk(snapshot.z_for(names))

    return mean_tdci(val, risk_fn).mean


def grid_search(
    train,
    val,
    grid: Sequence = COX_GRID,
    metric: Callable | None = None,
    fit: Callable = fit_cox,
    n_jobs: int = 1,
) -> GridSearchResult:
    """Fit every config on ``train`` and keep the best by ``metric(model, val)``.

    The default metric is validation mean TDCI. Ties are broken by smaller
    penalizer, then smaller l1_ratio.
    """
    if not grid:
        raise ValueError("grid must not be empty")
    metric = metric or _default_metric

    def run(cfg):
        try:
            model = fit(train, cfg)
            return cfg, model, float(metric(model, val)), None
        except (GraftSurvError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return cfg, None, None, f"{type(exc).__name__}: {exc}"

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(cfg) for cfg in grid]
    ok = [r for r in results if r[1] is not None and np.isfinite(r[2])]
    if not ok:
        details = "; ".join(f"{_cfg_label(c)} -> {err or 'non-finite score'}" for c, _, _, err in results)
        raise ConvergenceError(f"every grid configuration failed: {details}")
    best = min(ok, key=lambda r: (-r[2], getattr(r[0], "penalizer", 0.0), getattr(r[0], "l1_ratio", 0.0)))
    return GridSearchResult(best[0], best[1], [(c, s, e) for c, _, s, e in results])


def _cfg_label(cfg) -> str:
    if isinstance(cfg, FitConfig):
        return f"penalizer={cfg.penalizer:g},l1_ratio={cfg.l1_ratio:g}"
    return repr(cfg)
