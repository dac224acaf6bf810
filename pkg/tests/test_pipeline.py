import pytest

from graftsurv.errors import ConfigError, DataError
from graftsurv.pipeline import RunConfig, StageError, random_scores, run_pipeline
from graftsurv.synth import default_scenario, generate_cohort
from graftsurv.cohort import write_cohort

FAST = dict(penalizers=(0.1,), l1_ratios=(0.0,), rsf_min_samples_split=(13,), rsf_max_depth=(3,),
            rsf_n_estimators=8, n_resamples=100, synth_n_per_region=400)


def test_run_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(models=("Nope",))
    with pytest.raises(ConfigError):
        RunConfig(n_resamples=10)
    with pytest.raises(ConfigError):
        RunConfig(ts=())
    with pytest.raises(ConfigError):
        RunConfig(cohort_paths=(str(tmp_path / "missing.csv"),))
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"sed": 1})
    assert len(RunConfig().cox_grid) == 42 and len(RunConfig().rsf_grid) == 9


def test_stop_after_normalize_writes_only_early_files():
    arts = run_pipeline(RunConfig(**FAST), stop_after="normalize")
    assert "normalization.json" in arts.files and "eval_results.json" not in arts.files


def test_thread_count_does_not_change_outputs():
    a = run_pipeline(RunConfig(**FAST), threads=1)
    b = run_pipeline(RunConfig(**FAST), threads=4)
    assert a.files == b.files


def test_random_scores_are_order_independent():
    a = random_scores(["b", "a", "c"], 3)
    b = random_scores(["c", "a", "b"], 3)
    assert a == b and a != random_scores(["a", "b", "c"], 4)


def test_stage_error_names_the_stage(tmp_path):
    records, _ = generate_cohort(default_scenario(seed=1, n_per_region=2))
    path = tmp_path / "tiny.csv"
    write_cohort(records[:2], path)
    with pytest.raises(StageError) as exc:
        run_pipeline(RunConfig(cohort_paths=(str(path),), **{k: v for k, v in FAST.items() if k != "synth_n_per_region"}),
                     out_dir=tmp_path / "out")
    assert exc.value.stage == "split"
    assert isinstance(exc.value.cause, DataError) and exc.value.exit_code == 2
    assert not (tmp_path / "out").exists()
