"""End-to-end evaluation run: cohort in, models, TDCI tables and comparisons out.

Stages run in a fixed order (exclusions, split, normalization, fitting,
evaluation, comparison). All randomness derives from ``RunConfig.seed`` and
all JSON is written with sorted keys, so a run is a pure function of its
inputs and config regardless of the thread count.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cohort import (
    FEATURES,
    apply_exclusions,
    augment,
    cohort_to_csv,
    criteria_from_config,
    default_criteria,
    fit_normalization,
    impute,
    load_cohort,
    normalize,
    split,
    to_counting_process,
)
from .coxnet import COX_GRID, CoxData, CoxModel, FitConfig, grid_search
from .errors import ConfigError, GraftSurvError
from .forest import RSFConfig, RSFModel, fit_rsf
from .metrics import DEFAULT_DTS, DEFAULT_TS, EvalDataset, EvalResult, evaluate, mean_tdci, results_to_csv
from .scores import RESTRICTED_SUBSETS, RISK_SCORES, train_restricted_cox
from .stats import ScoreMatrix, critical_difference
from .synth import default_scenario, generate_cohort, load_truth, truth_to_csv

FORMAT_VERSION = 1
DEFAULT_RSF_SPLITS = (5, 13, 20)
DEFAULT_RSF_DEPTHS = (3, 6, 9)
BASE_MODELS = ("Cox", "CoxMEAF", "CoxMELD", "CoxALBI", "RSF", "MAS", "MELD", "ALBI")
REFERENCE_MODELS = ("Oracle", "Random")


class StageError(GraftSurvError):
    """A pipeline stage failed; carries the stage name and the original exit code."""

    def __init__(self, stage: str, cause: GraftSurvError):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except GraftSurvError as exc:
        raise StageError(name, exc) from exc


@dataclass
class RunConfig:
    seed: int = 1
    cohort_paths: tuple[str, ...] = ()
    truth_path: str | None = None
    external_regions: tuple[str, ...] = ("EXT",)
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    criteria: tuple[Mapping, ...] | None = None
    penalizers: tuple[float, ...] = (0.0, 0.01, 0.1, 0.2, 0.5, 1.0, 10.0)
    l1_ratios: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
    rsf_min_samples_split: tuple[int, ...] = DEFAULT_RSF_SPLITS
    rsf_max_depth: tuple[int, ...] = DEFAULT_RSF_DEPTHS
    rsf_n_estimators: int = 100
    ts: tuple[float, ...] = DEFAULT_TS
    dts: tuple[float, ...] = DEFAULT_DTS
    n_resamples: int = 1000
    ci_level: float = 0.95
    alpha: float = 0.05
    # None: every base model, plus Oracle and Random when a truth table exists
    models: tuple[str, ...] | None = None
    # used when no cohort file is given
    synth_n_per_region: int = 1000
    synth_hazard_form: str = "linear"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                setattr(self, f.name, tuple(v))
        for name in ("penalizers", "l1_ratios", "rsf_min_samples_split", "rsf_max_depth", "ts", "dts"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if self.models is not None and not self.models:
            raise ConfigError("models must not be empty")
        unknown = set(self.models or ()) - set(BASE_MODELS) - set(REFERENCE_MODELS)
        if unknown:
            raise ConfigError(f"unknown model(s) {sorted(unknown)}; choose from {BASE_MODELS + REFERENCE_MODELS}")
        if self.n_resamples < 100:
            raise ConfigError("n_resamples must be >= 100")
        for p in self.cohort_paths + ((self.truth_path,) if self.truth_path else ()):
            if not Path(p).is_file():
                raise ConfigError(f"input file not found: {p}")

    @property
    def cox_grid(self) -> list[FitConfig]:
        if self.penalizers == (0.0, 0.01, 0.1, 0.2, 0.5, 1.0, 10.0) and self.l1_ratios == (0.0, 0.1, 0.3, 0.5, 0.7, 0.9):
            return list(COX_GRID)
        return [FitConfig(penalizer=p, l1_ratio=a) for p in self.penalizers for a in self.l1_ratios]

    @property
    def rsf_grid(self) -> list[RSFConfig]:
        return [
            RSFConfig(n_estimators=self.rsf_n_estimators, min_samples_split=s, max_depth=d, seed=self.seed)
            for s in self.rsf_min_samples_split
            for d in self.rsf_max_depth
        ]

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config key(s) {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from None


# --------------------------------------------------------------------------- risk functions


def cox_risk_fn(model: CoxModel):
    names = list(model.feature_names)
    return lambda snap, t, dt: model.risk(snap.z_for(names))


def rsf_risk_fn(model: RSFModel):
    names = list(model.feature_names)
    return lambda snap, t, dt: model.risk(snap.z_for(names))


def score_risk_fn(name: str):
    score_def = RISK_SCORES[name]

    def fn(snap, t, dt):
        X = snap.z if score_def.uses_z else snap.raw
        return score_def.compute(X, snap.feature_names)

    return fn


def static_risk_fn(column: str):
    return lambda snap, t, dt: snap.static(column)


# --------------------------------------------------------------------------- helpers


def random_scores(patient_ids: Sequence[str], seed: int) -> dict[str, float]:
    """Uniform scores keyed by id; independent of input order."""
    ids = sorted(patient_ids)
    vals = np.random.default_rng([seed, 0x5EED]).random(len(ids))
    return dict(zip(ids, vals.tolist()))


def prepare(records, stats):
    return normalize(impute(records, stats), stats)


def eval_dataset(series, static=None) -> EvalDataset:
    return EvalDataset.from_series(series, FEATURES, static)


@dataclass
class RunArtifacts:
    """Everything a run produces, as in-memory text keyed by relative path."""

    files: dict[str, str] = field(default_factory=dict)
    results: list[EvalResult] = field(default_factory=list)
    models: dict[str, object] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        written = []
        try:
            for rel, text in sorted(self.files.items()):
                path = out / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
                written.append(path)
        except OSError:
            for p in written:
                p.unlink(missing_ok=True)
            raise
        return written


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_inputs(config: RunConfig, arts: RunArtifacts):
    if config.cohort_paths:
        records = []
        for p in config.cohort_paths:
            records.extend(load_cohort(p))
        truth = load_truth(config.truth_path) if config.truth_path else None
        return records, truth
    sim = default_scenario(seed=config.seed, n_per_region=config.synth_n_per_region, hazard_form=config.synth_hazard_form)
    records, truth = generate_cohort(sim)
    # keep the generated inputs alongside the results
    arts.files["inputs/cohort.csv"] = cohort_to_csv(records)
    arts.files["inputs/truth.csv"] = truth_to_csv(truth)
    arts.files["inputs/sim_config.json"] = _dumps(sim.to_dict())
    return records, truth


STOP_POINTS = ("normalize", "fit", "compare")


def run_pipeline(config: RunConfig, out_dir: str | Path | None = None, threads: int | None = None,
                 log: Callable[[str], None] = lambda s: None, stop_after: str = "compare") -> RunArtifacts:
    """Run the stages up to ``stop_after``; write to ``out_dir`` only if all of them succeed."""
    if stop_after not in STOP_POINTS:
        raise ConfigError(f"stop_after must be one of {STOP_POINTS}")
    threads = threads or os.cpu_count() or 1
    arts = RunArtifacts()
    with stage("load"):
        records, truth = _load_inputs(config, arts)
    models = config.models
    if models is None:
        models = BASE_MODELS + (REFERENCE_MODELS if truth is not None else ())

    with stage("exclusions"):
        crits = criteria_from_config(config.criteria) if config.criteria is not None else default_criteria()
        kept, report = apply_exclusions(records, crits)
        arts.files["exclusions.json"] = report.to_json() + "\n"
        external = set(config.external_regions)
        in_dist = [p for p in kept if p.region not in external]
        ext = [p for p in kept if p.region in external]
        log(f"exclusions: {report.initial_n} -> {report.final_n} patients ({len(ext)} external)")

    with stage("split"):
        train, val, test = split(in_dist, config.split_fractions, config.seed)
        arts.files["splits.json"] = _dumps(
            {
                "format_version": FORMAT_VERSION,
                "train": sorted(p.patient_id for p in train),
                "validation": sorted(p.patient_id for p in val),
                "test": sorted(p.patient_id for p in test),
            }
        )

    with stage("normalize"):
        stats = fit_normalization(train)
        arts.files["normalization.json"] = _dumps({"format_version": FORMAT_VERSION, **stats.to_dict()})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s_train, s_val, s_test, s_ext = (prepare(c, stats) for c in (train, val, test, ext))
            intervals = to_counting_process(s_train)
            aug = augment(s_train)
        static: dict[str, dict[str, float]] = {}
        all_ids = [p.patient_id for p in kept]
        if "Random" in models:
            static["random"] = random_scores(all_ids, config.seed)
        if "Oracle" in models:
            if truth is None:
                raise ConfigError("the Oracle model needs a truth table")
            static["oracle"] = {pid: truth[pid].true_lp for pid in all_ids}
        d_val = eval_dataset(s_val, static)
        cox_train = CoxData.from_intervals(intervals, FEATURES, stats)
    if stop_after == "normalize":
        return _finish(arts, out_dir)

    risk_fns: dict[str, Callable] = {}
    grid_log: dict[str, list] = {}
    with stage("fit"):
        wanted = set(models)
        best_cox_cfg = FitConfig()
        if wanted & {"Cox", "CoxMEAF", "CoxMELD", "CoxALBI"}:
            gs = grid_search(cox_train, d_val, config.cox_grid, n_jobs=threads)
            best_cox_cfg = gs.best_config
            grid_log["Cox"] = [
                {"penalizer": c.penalizer, "l1_ratio": c.l1_ratio, "val_mean_tdci": s, "error": e}
                for c, s, e in gs.trials
            ]
            log(f"cox: best penalizer={best_cox_cfg.penalizer} l1_ratio={best_cox_cfg.l1_ratio}")
            if "Cox" in wanted:
                arts.models["Cox"] = gs.model
        for name, subset in RESTRICTED_SUBSETS.items():
            if name in wanted:
                arts.models[name] = train_restricted_cox(subset, cox_train, best_cox_cfg)
        if "RSF" in wanted:
            def metric(model, val):
                return mean_tdci(val, rsf_risk_fn(model), config.ts, config.dts).mean

            def fit(rows, cfg):
                return fit_rsf(rows, cfg, FEATURES, n_jobs=1)

            gs = grid_search(aug, d_val, config.rsf_grid, metric=metric, fit=fit, n_jobs=threads)
            arts.models["RSF"] = gs.model
            grid_log["RSF"] = [
                {"min_samples_split": c.min_samples_split, "max_depth": c.max_depth, "val_mean_tdci": s, "error": e}
                for c, s, e in gs.trials
            ]
            log(f"rsf: best min_samples_split={gs.best_config.min_samples_split} max_depth={gs.best_config.max_depth}")
        for name in models:
            if name in arts.models:
                m = arts.models[name]
                risk_fns[name] = cox_risk_fn(m) if isinstance(m, CoxModel) else rsf_risk_fn(m)
                arts.files[f"models/{name}.json"] = json.dumps(m.to_dict(), sort_keys=True) + "\n"
            elif name in RISK_SCORES:
                risk_fns[name] = score_risk_fn(name)
            elif name == "Oracle":
                risk_fns[name] = static_risk_fn("oracle")
            elif name == "Random":
                risk_fns[name] = static_risk_fn("random")
        arts.files["grid_search.json"] = _dumps(grid_log)
        rows = [("model", "feature", "coefficient")]
        for name in ("Cox", *RESTRICTED_SUBSETS):
            m = arts.models.get(name)
            if m is not None:
                rows += [(name, f, repr(float(c))) for f, c in zip(m.feature_names, m.coefficients)]
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        arts.files["coefficients.csv"] = buf.getvalue()
    if stop_after == "fit":
        return _finish(arts, out_dir)

    with stage("evaluate"):
        sites: list[tuple[str, EvalDataset]] = []
        test_ds = eval_dataset(s_test, static)
        for region in sorted({s.region for s in s_test}):
            sites.append((region, test_ds.select_regions([region])))
        if len(sites) > 1:
            sites.append(("pooled", test_ds))
        ext_ds = eval_dataset(s_ext, static) if s_ext else None
        for region in sorted({s.region for s in s_ext}):
            sites.append((region, ext_ds.select_regions([region])))
        for site, ds in sites:
            for name in models:
                res = evaluate(ds, risk_fns[name], name, site, config.ts, config.dts,
                               config.n_resamples, config.seed, config.ci_level)
                arts.results.append(res)
                log(f"eval: {name:8s} {site:8s} mean TDCI {res.grid.mean:.4f} "
                    f"[{res.ci.lower:.4f}, {res.ci.upper:.4f}]")
        arts.files["eval_results.json"] = _dumps([r.to_dict() for r in arts.results])
        arts.files["tdci_cells.csv"] = results_to_csv(arts.results)

    with stage("compare"):
        compared = [m for m in models if m not in REFERENCE_MODELS]
        cd_sites = [s for s, _ in sites if s != "pooled"]
        if len(compared) >= 2 and len(cd_sites) >= 2:
            by = {(r.model, r.site): r.grid.mean for r in arts.results}
            mat = ScoreMatrix(np.array([[by[(m, s)] for s in cd_sites] for m in compared]), compared, cd_sites)
            cd = critical_difference(mat, config.alpha)
            arts.files["cd.json"] = cd.to_json() + "\n"
            arts.files["cd.svg"] = cd.to_svg()
        else:
            arts.files["cd.json"] = _dumps(
                {"format_version": FORMAT_VERSION, "skipped": "need at least 2 models and 2 sites"}
            )

    return _finish(arts, out_dir)


def _finish(arts: RunArtifacts, out_dir) -> RunArtifacts:
    if out_dir is not None:
        arts.write(out_dir)
    return arts
