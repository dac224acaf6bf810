import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dataset_from_patients, first_col, random_patients
from oracles import harrell_c_oracle, tdci_oracle

from graftsurv.errors import DataError, UndefinedMetricError
from graftsurv.metrics import (
    DEFAULT_DTS,
    DEFAULT_TS,
    EvalDataset,
    bootstrap_ci,
    evaluate,
    harrell_c,
    mean_tdci,
    resample_indices,
    results_to_csv,
    tdci,
)


def test_harrell_worked_example():
    # pairs (0,1), (0,2), (1,2) are comparable; (1,2) is discordant
    assert harrell_c([1, 2, 3], [1, 1, 0], [3, 1, 2]) == pytest.approx(2 / 3)


def test_harrell_perfect_reverse_and_constant():
    t = np.arange(1, 11, dtype=float)
    e = np.ones(10, bool)
    assert harrell_c(t, e, -t) == 1.0
    assert harrell_c(t, e, t) == 0.0
    assert harrell_c(t, e, np.zeros(10)) == 0.5


def test_harrell_tied_times_are_not_comparable():
    with pytest.raises(UndefinedMetricError):
        harrell_c([2, 2, 2], [1, 1, 1], [1, 2, 3])


def test_harrell_rejects_nan_risk():
    with pytest.raises(DataError):
        harrell_c([1, 2], [1, 1], [0.0, float("nan")])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 8), st.booleans(), st.integers(0, 3)), min_size=2, max_size=30))
def test_harrell_matches_oracle(rows):
    t, e, r = (np.array(c, dtype=float) for c in zip(*rows))
    want = harrell_c_oracle(t, e.astype(bool), r)
    if math.isnan(want):
        with pytest.raises(UndefinedMetricError):
            harrell_c(t, e, r)
    else:
        assert harrell_c(t, e, r) == want


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_tdci_matches_oracle(seed, n):
    pts = random_patients(np.random.default_rng(seed), n)
    ds = dataset_from_patients(pts)
    for t in DEFAULT_TS:
        for dt in DEFAULT_DTS:
            a, b = tdci(ds, first_col, t, dt), tdci_oracle(pts, t, dt)
            assert a == b or (math.isnan(a) and math.isnan(b))


def test_tdci_at_time_zero_with_static_risk_equals_windowed_harrell():
    rng = np.random.default_rng(1)
    n = 40
    days = rng.integers(1, 3000, n)
    ev = rng.random(n) < 0.5
    risk = rng.normal(size=n)
    ds = EvalDataset.from_static(days, ev, "risk", risk)
    got = tdci(ds, lambda s, t, dt: s.static("risk"), 0.0, 100.0)
    assert got == harrell_c(days, ev, risk)


def test_snapshot_carries_last_value_forward():
    pts = [(1000, True, [(0, 1.0), (200, 5.0), (400, 9.0)])]
    ds = dataset_from_patients(pts)
    snap = ds.snapshot(300 / 365.25)
    assert snap.z[:, 0].tolist() == [5.0]
    assert len(ds.snapshot(1000 / 365.25)) == 0  # failed by then


def test_mean_tdci_shape_and_undefined():
    rng = np.random.default_rng(3)
    g = mean_tdci(dataset_from_patients(random_patients(rng, 50)), first_col)
    assert g.values.shape == (4, 4)
    assert g.mean == pytest.approx(np.nanmean(g.values))
    nobody = dataset_from_patients([(100, False, [(0, 1.0)]), (200, False, [(0, 2.0)])])
    with pytest.raises(UndefinedMetricError):
        mean_tdci(nobody, first_col)


def test_bad_risk_length_rejected():
    ds = dataset_from_patients([(400, True, [(0, 1.0)]), (900, False, [(0, 2.0)])])
    with pytest.raises(ValueError):
        tdci(ds, lambda s, t, dt: np.zeros(5), 0.0, 1.0)


def test_resample_streams_are_stable():
    a = resample_indices(50, 3, 7)
    assert np.array_equal(a, resample_indices(50, 3, 7))
    assert not np.array_equal(a, resample_indices(50, 3, 8))
    assert not np.array_equal(a, resample_indices(50, 4, 7))


def test_bootstrap_contains_point_and_matches_weighted_evaluate():
    rng = np.random.default_rng(9)
    ds = dataset_from_patients(random_patients(rng, 70))
    stat = lambda d: mean_tdci(d, first_col).mean  # noqa: E731
    ci = bootstrap_ci(stat, ds, n_resamples=200, seed=5)
    assert ci.lower <= ci.point <= ci.upper
    ev = evaluate(ds, first_col, n_resamples=200, seed=5)
    assert (ev.ci.point, ev.ci.lower, ev.ci.upper) == (ci.point, ci.lower, ci.upper)
    assert np.all(ev.cell_lower[ev.grid.mask] <= ev.grid.values[ev.grid.mask])


def test_bootstrap_requires_enough_resamples():
    ds = dataset_from_patients([(400, True, [(0, 1.0)]), (900, False, [(0, 2.0)])])
    with pytest.raises(ValueError):
        bootstrap_ci(lambda d: 0.5, ds, n_resamples=99)


def test_bootstrap_fails_when_statistic_mostly_undefined():
    # three patients and only one comparable pair: many resamples lose it
    ds = dataset_from_patients([(400, True, [(0, 2.0)]), (900, False, [(0, 1.0)]), (950, False, [(0, 1.5)])])
    with pytest.raises(UndefinedMetricError):
        bootstrap_ci(lambda d: mean_tdci(d, first_col).mean, ds, n_resamples=100)


def test_results_csv_skips_masked_cells():
    rng = np.random.default_rng(11)
    ds = dataset_from_patients(random_patients(rng, 60, horizon_days=1500))
    ev = evaluate(ds, first_col, n_resamples=100)
    lines = results_to_csv([ev]).strip().splitlines()
    assert lines[0] == "model,site,prediction_time,window,tdci,ci_lo,ci_hi"
    assert len(lines) - 1 == int(ev.grid.mask.sum())
    d = ev.to_dict()
    assert d["mean_tdci"] == ev.grid.mean and len(d["tdci"]) == 4
