"""Fixed risk scores and restricted-feature Cox variants.

MAS is a linear score on z-scored biomarkers. MELD and ALBI are computed on
raw SRTR units (mg/dL, g/dL). For every score, higher means riskier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .cohort import FEATURES, BiomarkerPanel
from .coxnet import CoxData, CoxModel, FitConfig, fit_cox
from .errors import DataError

MAS_COEFFICIENTS: Mapping[str, float] = {
    "bilirubin": 20.42,
    "albumin": -5.69,
    "creatinine": 2.88,
    "inr": 1.55,
    "alt": 5.05,
    "ast": 2.14,
}

RESTRICTED_SUBSETS: Mapping[str, tuple[str, ...]] = {
    "CoxMEAF": ("bilirubin", "alt", "inr"),
    "CoxMELD": ("bilirubin", "creatinine", "inr"),
    "CoxALBI": ("albumin", "bilirubin"),
}

# unit conversions to SI for ALBI
BILIRUBIN_MG_DL_TO_UMOL_L = 17.1
ALBUMIN_G_DL_TO_G_L = 10.0
ALBI_GRADE_CUTS = (-2.60, -1.39)


def _get(panel, name):
    if isinstance(panel, BiomarkerPanel):
        v = getattr(panel, name)
    else:
        v = panel.get(name)
    if v is None:
        raise DataError(f"missing {name!r}")
    v = float(v)
    if not math.isfinite(v):
        raise DataError(f"{name!r} is not finite")
    return v


def mas_score(z_panel: Mapping[str, float] | Sequence[float]) -> float:
    """MAS on a z-scored six-biomarker panel.

    ``z_panel`` is a mapping by feature name, or a sequence in ``FEATURES`` order.
    """
    if not isinstance(z_panel, Mapping) and not isinstance(z_panel, BiomarkerPanel):
        values = list(z_panel)
        if len(values) != len(FEATURES):
            raise DataError(f"expected {len(FEATURES)} z-values, got {len(values)}")
        z_panel = dict(zip(FEATURES, values))
    total = 0.0
    for name, coef in MAS_COEFFICIENTS.items():
        total += coef * _get(z_panel, name)
    return total


def mas_matrix(Z: np.ndarray, feature_names: Sequence[str] = FEATURES) -> np.ndarray:
    """Vectorized MAS for rows of z-scores; same summation order as :func:`mas_score`."""
    Z = np.asarray(Z, dtype=float)
    total = np.zeros(Z.shape[0])
    for name, coef in MAS_COEFFICIENTS.items():
        total = total + coef * Z[:, list(feature_names).index(name)]
    return total


def _positive(panel, name):
    v = _get(panel, name)
    if v <= 0:
        raise DataError(f"{name} must be > 0, got {v}")
    return v


def meld_score(panel) -> float:
    """Continuous MELD (no rounding, no [6, 40] clamp).

    Bilirubin, INR and creatinine are floored at 1.0; creatinine is capped at 4.0.
    """
    bili = max(_positive(panel, "bilirubin"), 1.0)
    inr = max(_positive(panel, "inr"), 1.0)
    creat = min(max(_positive(panel, "creatinine"), 1.0), 4.0)
    return 3.78 * math.log(bili) + 11.2 * math.log(inr) + 9.57 * math.log(creat) + 6.43


def albi_score(panel) -> tuple[float, int]:
    """ALBI linear predictor and grade (1 best, 3 worst)."""
    bili = _positive(panel, "bilirubin") * BILIRUBIN_MG_DL_TO_UMOL_L
    alb = _positive(panel, "albumin") * ALBUMIN_G_DL_TO_G_L
    score = 0.66 * math.log10(bili) - 0.0852 * alb
    return score, albi_grade(score)


def albi_grade(score: float) -> int:
    lo, hi = ALBI_GRADE_CUTS
    if score <= lo:
        return 1
    if score <= hi:
        return 2
    return 3


def meld_matrix(raw: np.ndarray, feature_names: Sequence[str] = FEATURES) -> np.ndarray:
    names = list(feature_names)
    raw = np.asarray(raw, dtype=float)
    if np.any(raw[:, [names.index("bilirubin"), names.index("inr"), names.index("creatinine")]] <= 0):
        raise DataError("MELD inputs must be > 0")
    bili = np.maximum(raw[:, names.index("bilirubin")], 1.0)
    inr = np.maximum(raw[:, names.index("inr")], 1.0)
    creat = np.clip(raw[:, names.index("creatinine")], 1.0, 4.0)
    return 3.78 * np.log(bili) + 11.2 * np.log(inr) + 9.57 * np.log(creat) + 6.43


def albi_matrix(raw: np.ndarray, feature_names: Sequence[str] = FEATURES) -> np.ndarray:
    names = list(feature_names)
    raw = np.asarray(raw, dtype=float)
    bili = raw[:, names.index("bilirubin")]
    alb = raw[:, names.index("albumin")]
    if np.any(bili <= 0) or np.any(alb <= 0):
        raise DataError("ALBI inputs must be > 0")
    return 0.66 * np.log10(bili * BILIRUBIN_MG_DL_TO_UMOL_L) - 0.0852 * (alb * ALBUMIN_G_DL_TO_G_L)


@dataclass(frozen=True)
class RiskScoreDef:
    """A fixed score. ``uses_z`` selects z-scored (True) or raw (False) input."""

    name: str
    required_features: tuple[str, ...]
    compute: Callable[[np.ndarray, Sequence[str]], np.ndarray]
    uses_z: bool


RISK_SCORES: Mapping[str, RiskScoreDef] = {
    "MAS": RiskScoreDef("MAS", tuple(MAS_COEFFICIENTS), mas_matrix, True),
    "MELD": RiskScoreDef("MELD", ("bilirubin", "creatinine", "inr"), meld_matrix, False),
    "ALBI": RiskScoreDef("ALBI", ("bilirubin", "albumin"), albi_matrix, False),
}


def train_restricted_cox(feature_subset: Sequence[str], data: CoxData, config: FitConfig = FitConfig()) -> CoxModel:
    """Fit a Cox model on a subset of the six biomarkers, e.g. ``RESTRICTED_SUBSETS["CoxALBI"]``."""
    subset = list(feature_subset)
    if not subset:
        raise ValueError("feature subset must not be empty")
    unknown = [f for f in subset if f not in FEATURES]
    if unknown:
        raise ValueError(f"unknown feature(s) {unknown}; choose from {FEATURES}")
    return fit_cox(data.select(subset), config)
