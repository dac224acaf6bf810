import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graftsurv.cohort import (
    CSV_COLUMNS,
    FEATURES,
    BiomarkerPanel,
    EventType,
    FollowUpRecord,
    Outcome,
    PatientRecord,
    _largest_remainder,
    apply_exclusions,
    augment,
    cohort_to_csv,
    criteria_from_config,
    default_criteria,
    fit_normalization,
    impute,
    load_cohort,
    min_age,
    normalize,
    split,
    to_counting_process,
    write_cohort,
)
from graftsurv.errors import ConfigError, DataError, SchemaError


def patient(pid, fus, event=(EventType.GRAFT_FAILURE, 900), age=50.0, tcount=1, ocount=1,
            date=dt.date(2010, 1, 1), region="R1"):
    return PatientRecord(
        pid, region, age, tcount, ocount, date,
        tuple(FollowUpRecord(d, BiomarkerPanel(*vals)) for d, vals in fus),
        Outcome(*event),
    )


FULL = (1.0, 1.0, 4.0, 30.0, 30.0, 1.0)


def test_csv_round_trip(tmp_path):
    cohort = [
        patient("a", [(0, FULL), (100, (2.0, None, 3.5, 40.0, 41.0, 1.2))]),
        patient("b", [], event=(EventType.CENSORED, 50)),
        patient("c", [(10, FULL)], event=(EventType.COMPETING_DEATH, 20), region="R2"),
    ]
    path = tmp_path / "c.csv"
    write_cohort(cohort, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    back = load_cohort(path)
    assert back == cohort
    assert cohort_to_csv(back) == path.read_text()


def write_rows(tmp_path, rows, header=CSV_COLUMNS):
    path = tmp_path / "in.csv"
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


ROW = ["p1", "R1", "2010-01-01", 50, 1, 1, 0, 1, 1, 4, 30, 30, 1, 1, 900]


def test_load_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_cohort(write_rows(tmp_path, [ROW[:-1]], CSV_COLUMNS[:-1]))
    bad_lab = ROW.copy()
    bad_lab[7] = -1
    with pytest.raises(DataError, match="bilirubin"):
        load_cohort(write_rows(tmp_path, [bad_lab]))
    with pytest.raises(DataError, match="duplicate"):
        load_cohort(write_rows(tmp_path, [ROW, ROW]))
    late = ROW.copy()
    late[6] = 1000
    with pytest.raises(DataError, match="after event_day"):
        load_cohort(write_rows(tmp_path, [late]))
    other = ROW.copy()
    other[6], other[3] = 5, 51
    with pytest.raises(DataError, match="static"):
        load_cohort(write_rows(tmp_path, [ROW, other]))


def test_load_with_schema(tmp_path):
    header = list(CSV_COLUMNS)
    header[0] = "id"
    cohort = load_cohort(write_rows(tmp_path, [ROW], header), schema={"patient_id": "id"})
    assert cohort[0].patient_id == "p1"


def test_exclusions_count_at_first_failing_criterion():
    cohort = [
        patient("ok", [(0, FULL)]),
        patient("old_date", [(0, FULL)], date=dt.date(1999, 1, 1), age=10),
        patient("young", [(0, FULL)], age=17.9),
        patient("second", [(0, FULL)], tcount=2),
        patient("multi", [(0, FULL)], ocount=2),
        patient("nofu", []),
    ]
    kept, report = apply_exclusions(cohort, default_criteria())
    assert [p.patient_id for p in kept] == ["ok"]
    assert [e for _, e, _ in report.steps] == [1, 1, 1, 1, 1]
    assert report.final_n == 1 and report.to_dict()["initial_n"] == 6
    with pytest.raises(ConfigError):
        apply_exclusions(cohort, [])


def test_criteria_from_config():
    crits = criteria_from_config([{"name": "min_age", "years": 21}, {"name": "date_window", "start": "2005-01-01", "end": "2006-01-01"}])
    assert crits[0].name == min_age(21).name
    with pytest.raises(ConfigError):
        criteria_from_config([{"name": "bogus"}])


def test_split_sizes_and_determinism():
    assert _largest_remainder(10, (0.7, 0.15, 0.15)) == [7, 2, 1]
    cohort = [patient(f"p{i:02d}", [(0, FULL)]) for i in range(40)]
    a = split(cohort, seed=3)
    b = split(list(reversed(cohort)), seed=3)
    assert [[p.patient_id for p in s] for s in a] == [[p.patient_id for p in s] for s in b]
    ids = [p.patient_id for s in a for p in s]
    assert sorted(ids) == sorted(p.patient_id for p in cohort)
    assert [len(s) for s in a] == [28, 6, 6]
    with pytest.raises(ConfigError):
        split(cohort, (0.5, 0.5, 0.5))


@given(st.integers(3, 500), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_largest_remainder_sums_to_n(n, a, b):
    if a + b >= 0.95:
        return
    sizes = _largest_remainder(n, (a, b, 1 - a - b))
    assert sum(sizes) == n
    assert all(abs(s - n * f) < 1 for s, f in zip(sizes, (a, b, 1 - a - b)))


def test_normalization_uses_population_std():
    cohort = [patient("a", [(0, (1.0, 1.0, 3.0, 10.0, 10.0, 1.0)), (5, (3.0, 2.0, 5.0, 30.0, 20.0, 2.0))])]
    stats = fit_normalization(cohort)
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
    z = normalize(cohort, stats)[0].z
    np.testing.assert_allclose(z[:, 0], [-1, 1])
    with pytest.raises(DataError):
        fit_normalization([patient("a", [(0, FULL)])])  # every feature constant


def test_impute_forward_fills_then_falls_back_to_mean():
    cohort = [patient("a", [(0, (None, 1.0, 4.0, 30.0, 30.0, 1.0)), (10, (2.0, None, 4.0, 30.0, 30.0, 1.0)),
                            (20, (None, None, 4.0, 30.0, 30.0, 1.0))])]
    stats = fit_normalization([patient("t", [(0, (1.0, 1.0, 3.0, 10.0, 10.0, 1.0)), (5, (3.0, 2.0, 5.0, 30.0, 20.0, 2.0))])])
    filled = impute(cohort, stats)[0].follow_ups
    assert [f.panel.bilirubin for f in filled] == [2.0, 2.0, 2.0]  # first falls back to the training mean
    assert [f.panel.creatinine for f in filled] == [1.0, 1.0, 1.0]


def test_counting_process_and_augment():
    p = patient("a", [(0, FULL), (100, FULL), (900, FULL)], event=(EventType.GRAFT_FAILURE, 900))
    stats = fit_normalization([patient("t", [(0, (1.0, 1.0, 3.0, 10.0, 10.0, 1.0)), (5, (3.0, 2.0, 5.0, 30.0, 20.0, 2.0))])])
    series = normalize(impute([p], stats), stats)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rows = to_counting_process(series)
        aug = augment(series)
    assert [(r.start, r.stop, r.event) for r in rows] == [(0, 100, EventType.CENSORED), (100, 900, EventType.GRAFT_FAILURE)]
    assert [r.time_to_event for r in aug] == [900, 800]
    assert len(w) == 2  # the day-900 visit is dropped from both layouts


def test_biomarker_panel_validation():
    with pytest.raises(DataError):
        BiomarkerPanel(bilirubin=0.0)
    assert not BiomarkerPanel(1.0).is_complete()
    assert BiomarkerPanel(*FULL).values() == FULL
    assert len(FEATURES) == 6
