"""Graft-failure risk modelling on longitudinal liver-transplant cohorts.

Submodules: ``cohort`` (data handling), ``coxnet`` (penalized time-varying
Cox), ``forest`` (random survival forest), ``scores`` (MAS, MELD, ALBI),
``metrics`` (concordance, TDCI, bootstrap), ``stats`` (model comparison),
``synth`` (simulated cohorts), ``pipeline`` and ``cli``.
"""
from ._kernels import BACKEND
from .cohort import FEATURES, load_cohort
from .coxnet import CoxModel, FitConfig, fit_cox
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    GraftSurvError,
    SchemaError,
    UndefinedMetricError,
)
from .forest import RSFConfig, RSFModel, fit_rsf
from .metrics import harrell_c, mean_tdci, tdci
from .scores import mas_score

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FEATURES",
    "ConfigError",
    "ConvergenceError",
    "CoxModel",
    "DataError",
    "FitConfig",
    "GraftSurvError",
    "RSFConfig",
    "RSFModel",
    "SchemaError",
    "UndefinedMetricError",
    "fit_cox",
    "fit_rsf",
    "harrell_c",
    "load_cohort",
    "mas_score",
    "mean_tdci",
    "tdci",
]
