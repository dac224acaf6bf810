"""Kernel backend selection.

The compiled extension is used when it was built and importable; set
``GRAFTSURV_PURE_PYTHON=1`` to force the numpy implementations. Both
backends are importable directly for comparison (``python_backend()``,
``compiled_backend()``).
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if _ckernels is not None and os.environ.get("GRAFTSURV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
    _impl = _ckernels
else:
    BACKEND = "python"
    _impl = _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def _wrap(mod):
    def cox_derivatives(start, stop, event, X, beta, efron=True):
        if mod is _pykernels:
            return mod.cox_derivatives(
                _f64(start), _f64(stop), np.asarray(event, bool), _f64(X), _f64(beta), bool(efron)
            )
        return mod.cox_derivatives(_f64(start), _f64(stop), _u8(event), _f64(X), _f64(beta), bool(efron))

    def weighted_concordance(T, event_ok, eligible, risk_rank, W):
        W = np.atleast_2d(_f64(W))
        if mod is _pykernels:
            return mod.weighted_concordance(
                _f64(T), np.asarray(event_ok, bool), np.asarray(eligible, bool),
                np.asarray(risk_rank, np.intp), W,
            )
        return mod.weighted_concordance(
            _f64(T), _u8(event_ok), _u8(eligible), np.ascontiguousarray(risk_rank, dtype=np.intp), W
        )

    def best_logrank_split(Xn, time, event, min_leaf=1):
        if mod is _pykernels:
            return mod.best_logrank_split(_f64(Xn), _f64(time), np.asarray(event, bool), int(min_leaf))
        return mod.best_logrank_split(_f64(Xn), _f64(time), _u8(event), int(min_leaf))

    return SimpleNamespace(
        name="cython" if mod is _ckernels else "python",
        cox_derivatives=cox_derivatives,
        weighted_concordance=weighted_concordance,
        best_logrank_split=best_logrank_split,
    )


_active = _wrap(_impl)
cox_derivatives = _active.cox_derivatives
weighted_concordance = _active.weighted_concordance
best_logrank_split = _active.best_logrank_split


def python_backend():
    return _wrap(_pykernels)


def compiled_backend():
    """The compiled backend, or ``None`` when the extension is unavailable."""
    return None if _ckernels is None else _wrap(_ckernels)
