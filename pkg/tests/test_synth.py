import math

import numpy as np
import pytest

from graftsurv.cohort import FEATURES, EventType, apply_exclusions, default_criteria
from graftsurv.errors import ConfigError, DataError
from graftsurv.metrics import harrell_c
from graftsurv.synth import (
    RAW_FLOOR_FRACTION,
    RegionProfile,
    SimConfig,
    anchor_normalization,
    default_scenario,
    generate_cohort,
    load_truth,
    oracle_risk,
    single_region_scenario,
    truth_to_csv,
    write_truth,
)


def small(seed=0, n=200, **kw):
    return single_region_scenario(n, seed=seed, **kw)


def test_same_seed_same_cohort_and_different_seed_differs():
    a, ta = generate_cohort(small(1))
    b, tb = generate_cohort(small(1))
    c, _ = generate_cohort(small(2))
    assert a == b and ta == tb
    assert a != c


def test_patient_stream_does_not_depend_on_cohort_size():
    a, _ = generate_cohort(small(3, n=20))
    b, _ = generate_cohort(small(3, n=50))
    assert a == b[:20]


def test_records_are_valid_and_floored():
    cfg = small(4, n=300)
    records, truth = generate_cohort(cfg)
    assert len(records) == 300 and set(truth) == {p.patient_id for p in records}
    for p in records:
        assert p.outcome.event_time >= 1
        for f in p.follow_ups:
            assert f.time_since_transplant <= p.outcome.event_time
            for name, v in zip(FEATURES, f.panel.values()):
                assert v >= RAW_FLOOR_FRACTION * cfg.raw_anchors[name][0]
                assert float(f"{v:.6g}") == v
    kinds = {p.outcome.event_type for p in records}
    assert kinds == {EventType.CENSORED, EventType.GRAFT_FAILURE, EventType.COMPETING_DEATH}


def test_true_risk_orders_outcomes():
    records, truth = generate_cohort(small(5, n=800))
    t = np.array([p.outcome.event_time for p in records], float)
    e = np.array([p.outcome.event_type == EventType.GRAFT_FAILURE for p in records])
    lp = np.array([oracle_risk(truth, p.patient_id) for p in records])
    assert harrell_c(t, e, lp) > 0.65
    with pytest.raises(DataError):
        oracle_risk(truth, "nobody")


def test_mean_shift_moves_raw_bilirubin():
    cfg = default_scenario(seed=2, n_per_region=300)
    records, truth = generate_cohort(cfg)
    stats = anchor_normalization(cfg)
    z = {r: [] for r in ("OPTN-1", "EXT")}
    for p in records:
        for f in p.follow_ups:
            z[p.region].append(stats.transform(f.panel.values())[0])
    assert np.mean(z["EXT"]) - np.mean(z["OPTN-1"]) > 2.0
    by_region = {r.region: r for r in truth.values()}
    assert by_region["EXT"].mean_shift and not by_region["OPTN-1"].mean_shift


def test_missing_values_and_ineligible_patients():
    records, _ = generate_cohort(small(6, n=400, missing_rate=0.2, ineligible_fraction=0.25))
    n_missing = sum(v is None for p in records for f in p.follow_ups for v in f.panel.values())
    assert n_missing > 0
    kept, report = apply_exclusions(records, default_criteria())
    assert 0.15 * 400 < 400 - len(kept) < 0.45 * 400


def test_quadratic_hazard_form_is_accepted():
    records, truth = generate_cohort(small(7, n=50, hazard_form="quadratic"))
    assert len(records) == 50


def test_config_validation_messages():
    with pytest.raises(ConfigError, match="autocorrelation"):
        small(rho=1.0)
    with pytest.raises(ConfigError):
        small(h0=0)
    with pytest.raises(ConfigError):
        SimConfig(regions=(RegionProfile("A", 5), RegionProfile("A", 5)))
    with pytest.raises(ConfigError):
        RegionProfile("A", 5, mean_shift={"nope": 1.0})
    with pytest.raises(ConfigError):
        generate_cohort(SimConfig(regions=(RegionProfile("A", 0),)))


def test_config_and_truth_round_trip(tmp_path):
    cfg = default_scenario(seed=9, n_per_region=5)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    _, truth = generate_cohort(cfg)
    path = tmp_path / "truth.csv"
    write_truth(truth, path)
    back = load_truth(path)
    assert back.keys() == truth.keys()
    for k in truth:
        assert back[k].true_lp == pytest.approx(truth[k].true_lp, rel=1e-12)
        assert back[k].mean_shift == truth[k].mean_shift
    assert truth_to_csv(back) == path.read_text()


def test_external_region_hazard_ratio_keeps_event_rates_close():
    records, _ = generate_cohort(default_scenario(seed=3, n_per_region=600))
    rate = {r: np.mean([p.outcome.event_type == EventType.GRAFT_FAILURE for p in records if p.region == r])
            for r in ("OPTN-1", "EXT")}
    assert abs(rate["EXT"] - rate["OPTN-1"]) < 0.15
    assert math.isclose(default_scenario().regions[1].hazard_ratio, math.exp(-3.0))
