import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cox_loglik_oracle

from graftsurv.cohort import BiomarkerPanel, NormalizationStats, FEATURES
from graftsurv.coxnet import (
    COX_GRID,
    CoxData,
    CoxModel,
    FitConfig,
    breslow_baseline,
    fit_cox,
    gradient,
    grid_search,
    hessian,
    linear_risk,
    partial_loglik,
    predict_survival,
)
from graftsurv.errors import ConvergenceError, DataError


def random_data(rng, n=25, p=3, counting=True):
    stop = rng.integers(1, 10, n).astype(float)
    start = np.zeros(n)
    if counting:
        start = np.where(rng.random(n) < 0.4, np.floor(stop * rng.random(n)), 0.0)
        start = np.minimum(start, stop - 1)
    event = rng.random(n) < 0.6
    event[0] = True
    return CoxData.from_arrays(stop, event, rng.normal(size=(n, p)), start=start)


@pytest.mark.parametrize("ties", ["efron", "breslow"])
def test_loglik_matches_direct_loops(ties, rng):
    for _ in range(20):
        d = random_data(rng)
        beta = rng.normal(size=3)
        want = cox_loglik_oracle(beta, d.start, d.stop, d.event, d.X, efron=ties == "efron")
        assert partial_loglik(beta, d, ties) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_efron_equals_breslow_without_ties():
    d = CoxData.from_arrays([1, 2, 3, 4, 5], [1, 1, 0, 1, 1], [[0.1], [0.5], [-0.3], [0.2], [1.0]])
    b = np.array([0.4])
    assert partial_loglik(b, d, "efron") == pytest.approx(partial_loglik(b, d, "breslow"), abs=1e-14)


def test_hessian_is_derivative_of_gradient(rng):
    d = random_data(rng, p=4)
    beta = rng.normal(scale=0.3, size=4)
    H = hessian(beta, d)
    h = 1e-6
    fd = np.column_stack([(gradient(beta + h * e, d) - gradient(beta - h * e, d)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(H, fd, atol=1e-6)
    assert np.all(np.linalg.eigvalsh(H) <= 1e-10)


def test_three_subject_efron_equals_breslow():
    # no tied event times, so both methods give the same closed form
    d = CoxData.from_arrays([1, 2, 3], [1, 1, 1], [0, 1, 0])
    for ties in ("efron", "breslow"):
        assert fit_cox(d, FitConfig(ties_method=ties)).coefficients[0] == pytest.approx(math.log(2) / 2, abs=1e-8)


def test_unpenalized_fit_is_stationary(rng):
    d = random_data(rng, n=80, p=3)
    m = fit_cox(d)
    assert m.diagnostics.converged
    assert np.abs(gradient(m.coefficients, d)).max() < 1e-6


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_elastic_net_kkt(alpha, rng):
    d = random_data(rng, n=120, p=5)
    lam = 2.0
    m = fit_cox(d, FitConfig(penalizer=lam, l1_ratio=alpha))
    b = m.coefficients
    g = gradient(b, d) - lam * (1 - alpha) * b
    l1 = lam * alpha
    for j in range(5):
        if b[j] != 0:
            assert g[j] == pytest.approx(l1 * np.sign(b[j]), abs=1e-5)
        else:
            assert abs(g[j]) <= l1 + 1e-6


def test_large_lasso_penalty_zeroes_everything(rng):
    d = random_data(rng, n=60, p=4)
    assert np.all(fit_cox(d, FitConfig(penalizer=1e4, l1_ratio=1.0)).coefficients == 0)


def test_ridge_shrinks_norm(rng):
    d = random_data(rng, n=60, p=4)
    norms = [np.linalg.norm(fit_cox(d, FitConfig(penalizer=lam)).coefficients) for lam in (0, 1, 10, 100)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_separation_raises_convergence_error():
    # the covariate orders the failures perfectly, so beta runs off to infinity
    d = CoxData.from_arrays([1, 2, 3, 4], [1, 1, 1, 1], [3.0, 2.0, 1.0, 0.0])
    with pytest.raises(ConvergenceError):
        fit_cox(d)


def test_no_events_is_data_error():
    d = CoxData.from_arrays([1, 2, 3], [0, 0, 0], [0.0, 1.0, 2.0])
    with pytest.raises(DataError):
        partial_loglik(np.zeros(1), d)


def test_start_not_before_stop_rejected():
    with pytest.raises(DataError):
        CoxData.from_arrays([2.0], [1], [[0.0]], start=[2.0])


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(penalizer=-1)
    with pytest.raises(ValueError):
        FitConfig(l1_ratio=1.5)
    assert len(COX_GRID) == 42


def test_breslow_baseline_by_hand():
    # beta = 0: H0 jumps by d_k / |R(t_k)|
    d = CoxData.from_arrays([1, 2, 2, 4], [1, 1, 1, 0], [0.0, 0.0, 0.0, 0.0])
    H = breslow_baseline(np.zeros(1), d)
    assert H.times == (1.0, 2.0)
    assert H(0.5) == 0.0
    assert H(1.0) == pytest.approx(1 / 4)
    assert H(3.0) == pytest.approx(1 / 4 + 2 / 3)


def test_survival_is_monotone_and_serializes(rng):
    d = random_data(rng, n=60, p=len(FEATURES))
    d = CoxData(d.start, d.stop, d.event, d.X, FEATURES,
                NormalizationStats(FEATURES, (1.0,) * 6, (0.5,) * 6))
    m = fit_cox(d, FitConfig(penalizer=0.1))
    s = predict_survival(m, np.zeros(6), np.arange(0, 12))
    assert s[0] == 1.0 and np.all(np.diff(s) <= 0)
    m2 = CoxModel.from_json(m.to_json())
    assert m2.to_json() == m.to_json()
    panel = BiomarkerPanel(1.5, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert linear_risk(m, panel) == pytest.approx(m.coefficients[0], abs=1e-12)


def test_model_file_type_checked(rng):
    m = fit_cox(random_data(rng))
    bad = m.to_dict() | {"model_type": "rsf"}
    with pytest.raises(DataError):
        CoxModel.from_dict(bad)


def test_grid_search_prefers_better_metric_and_smaller_penalty(rng):
    d = random_data(rng, n=50, p=2)
    grid = [FitConfig(penalizer=1.0), FitConfig(penalizer=0.0), FitConfig(penalizer=0.5)]
    res = grid_search(d, None, grid, metric=lambda m, v: 1.0)
    assert res.best_config.penalizer == 0.0
    res = grid_search(d, None, grid, metric=lambda m, v: -abs(m.config.penalizer - 0.5))
    assert res.best_config.penalizer == 0.5
    assert len(res.trials) == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_loglik_invariant_to_covariate_shift(seed, c):
    # adding a constant to a covariate cancels between numerator and risk set
    d = random_data(np.random.default_rng(seed), n=15, p=2)
    shifted = CoxData(d.start, d.stop, d.event, d.X + np.array([c, 0.0]), d.feature_names)
    beta = np.array([0.3, -0.2])
    assert partial_loglik(beta, shifted) == pytest.approx(partial_loglik(beta, d), abs=1e-9)
