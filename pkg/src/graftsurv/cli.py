"""Command-line entry point: ``graftsurv <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import FEATURES, NormalizationStats, cohort_to_csv, load_cohort
from .coxnet import CoxModel
from .errors import ConfigError, DataError, GraftSurvError, SchemaError
from .forest import RSFModel
from .metrics import evaluate, results_to_csv
from .pipeline import (
    BASE_MODELS,
    RunConfig,
    cox_risk_fn,
    eval_dataset,
    prepare,
    rsf_risk_fn,
    run_pipeline,
    score_risk_fn,
    static_risk_fn,
)
from .scores import RISK_SCORES, albi_score, mas_score, meld_score
from .stats import ScoreMatrix, critical_difference
from .synth import SimConfig, default_scenario, generate_cohort, load_truth, truth_to_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _run_config(args, **overrides) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "input", None):
        base["cohort_paths"] = list(args.input)
    if getattr(args, "truth", None):
        base["truth_path"] = args.truth
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(base)


def load_model(path: str | Path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    kind = d.get("model_type")
    if kind == "cox":
        return CoxModel.from_dict(d)
    if kind == "rsf":
        return RSFModel.from_dict(d)
    raise DataError(f"{path}: unknown model_type {kind!r}")


def _load_stats(path) -> NormalizationStats:
    try:
        return NormalizationStats.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read normalization stats {path}: {exc}") from None


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if args.seed is not None:
            d["seed"] = args.seed
        config = SimConfig.from_dict(d)
    else:
        config = default_scenario(
            seed=1 if args.seed is None else args.seed,
            n_per_region=args.n_per_region,
            hazard_form=args.hazard_form,
        )
    records, truth = generate_cohort(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cohort.csv").write_text(cohort_to_csv(records))
    (out / "truth.csv").write_text(truth_to_csv(truth))
    (out / "sim_config.json").write_text(_dump(config.to_dict()))
    _log(f"wrote {len(records)} patients to {out / 'cohort.csv'}")
    return 0


def cmd_cohort(args) -> int:
    arts = run_pipeline(_run_config(args), args.out_dir, args.threads, _log, stop_after="normalize")
    _log(f"wrote {', '.join(sorted(arts.files))} to {args.out_dir}")
    return 0


def cmd_fit(args) -> int:
    arts = run_pipeline(_run_config(args, models=args.model), args.out_dir, args.threads, _log, stop_after="fit")
    _log(f"wrote {', '.join(sorted(arts.files))} to {args.out_dir}")
    return 0


def _read_panels(path, stats: NormalizationStats | None):
    """Rows of raw panels; missing values are imputed from ``stats`` when given."""
    rows, errors = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in FEATURES if f not in (reader.fieldnames or ())]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        fill = dict(zip(stats.feature_names, stats.mean)) if stats else {}
        for lineno, r in enumerate(reader, start=2):
            rid = r.get("patient_id") or r.get("id") or str(lineno - 1)
            vals, problems = [], []
            for f in FEATURES:
                text = (r.get(f) or "").strip()
                if not text:
                    if f in fill:
                        vals.append(fill[f])
                        continue
                    problems.append(f"{f} missing")
                    continue
                try:
                    v = float(text)
                except ValueError:
                    problems.append(f"{f}={text!r} is not a number")
                    continue
                if not math.isfinite(v) or v <= 0:
                    problems.append(f"{f}={text} must be > 0")
                vals.append(v)
            if problems:
                errors.append(f"{path}:{lineno} ({rid}): " + "; ".join(problems))
            else:
                rows.append((rid, np.array(vals)))
    return rows, errors


def cmd_score(args) -> int:
    stats = _load_stats(args.normalization) if args.normalization else None
    models = [(Path(p).stem, load_model(p)) for p in args.models or ()]
    for name, m in models:
        if isinstance(m, RSFModel) and stats is None:
            raise ConfigError(f"model {name} needs --normalization to z-score panels")
    rows, errors = _read_panels(args.panel, stats)
    fields = ["patient_id", "mas", "meld", "albi", "albi_grade"] + [n for n, _ in models]
    out_lines = []
    for rid, raw in rows:
        panel = dict(zip(FEATURES, raw))
        rec = {"patient_id": rid}
        if stats is not None:
            z = stats.transform(raw[None, :])[0]
            rec["mas"] = mas_score(z)
        else:
            rec["mas"] = ""
        rec["meld"] = meld_score(panel)
        rec["albi"], rec["albi_grade"] = albi_score(panel)
        for name, m in models:
            if isinstance(m, CoxModel):
                norm = m.normalization or stats
                if norm is None:
                    raise ConfigError(f"model {name} has no stored normalization; pass --normalization")
                zf = norm.transform(raw[None, :])[0]
                idx = [list(norm.feature_names).index(f) for f in m.feature_names]
                rec[name] = float(m.risk(zf[idx][None, :])[0])
            else:
                zf = stats.transform(raw[None, :])
                rec[name] = float(m.risk(zf)[0])
        out_lines.append(rec)
    target = Path(args.output)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for rec in out_lines:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    for e in errors:
        _log(f"error: {e}")
    if errors:
        _log(f"{len(errors)} row(s) rejected; {len(out_lines)} scored")
        return DataError.exit_code
    return 0


def cmd_eval(args) -> int:
    config = _run_config(args)
    stats = _load_stats(args.normalization)
    records = []
    for p in args.input:
        records.extend(load_cohort(p))
    records = [r for r in records if r.follow_ups]
    static = {}
    truth = load_truth(args.truth) if args.truth else None
    if truth is not None:
        static["oracle"] = {r.patient_id: truth[r.patient_id].true_lp for r in records}
    ds = eval_dataset(prepare(records, stats), static)
    risk_fns = {}
    for p in args.models or ():
        m = load_model(p)
        risk_fns[Path(p).stem] = cox_risk_fn(m) if isinstance(m, CoxModel) else rsf_risk_fn(m)
    for name in args.scores:
        risk_fns[name] = score_risk_fn(name)
    if truth is not None:
        risk_fns["Oracle"] = static_risk_fn("oracle")
    results = [
        evaluate(ds, fn, name, args.site, config.ts, config.dts, config.n_resamples, config.seed, config.ci_level)
        for name, fn in risk_fns.items()
    ]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_results.json").write_text(_dump([r.to_dict() for r in results]))
    (out / "tdci_cells.csv").write_text(results_to_csv(results))
    for r in results:
        _log(f"{r.model:10s} mean TDCI {r.grid.mean:.4f} [{r.ci.lower:.4f}, {r.ci.upper:.4f}]")
    return 0


def _score_matrix(path: str | Path, exclude) -> ScoreMatrix:
    path = Path(path)
    cells: dict[tuple[str, str], float] = {}
    if path.suffix == ".json":
        for r in json.loads(path.read_text()):
            cells[(r["model"], r["site"])] = float(r["mean_tdci"])
    else:
        with path.open(newline="") as fh:
            for r in csv.DictReader(fh):
                cells[(r["model"], r["dataset"])] = float(r["score"])
    models = sorted({m for m, _ in cells if m not in exclude})
    sites = sorted({s for _, s in cells if s not in exclude})
    try:
        values = np.array([[cells[(m, s)] for s in sites] for m in models])
    except KeyError as exc:
        raise DataError(f"score table has no value for {exc}") from None
    return ScoreMatrix(values, models, sites)


def cmd_compare(args) -> int:
    m = _score_matrix(args.input, set(args.exclude))
    cd = critical_difference(m, args.alpha)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cd.json").write_text(cd.to_json() + "\n")
    (out / "cd.svg").write_text(cd.to_svg())
    _log(f"Friedman {cd.friedman_statistic:.3f} (p = {cd.friedman_p:.4g}); cliques: {[list(c) for c in cd.cliques]}")
    return 0


def cmd_pipeline(args) -> int:
    run_pipeline(_run_config(args), args.out_dir, args.threads, _log)
    _log(f"outputs written to {args.out_dir}")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graftsurv", description="Graft-failure risk models and their evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, inputs=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--out-dir", default="out")
        if inputs:
            sp.add_argument("--input", nargs="+", help="cohort CSV file(s)")
            sp.add_argument("--truth", help="truth table CSV from `synth`")

    sp = sub.add_parser("synth", help="simulate a cohort and its truth table")
    common(sp, inputs=False)
    sp.add_argument("--n-per-region", type=int, default=1000)
    sp.add_argument("--hazard-form", choices=("linear", "quadratic"), default="linear")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("cohort", help="exclusions, split and normalization report")
    common(sp)
    sp.set_defaults(func=cmd_cohort)

    sp = sub.add_parser("fit", help="grid-search and save models")
    common(sp)
    sp.add_argument("--model", nargs="+", choices=[m for m in BASE_MODELS if m not in RISK_SCORES], default=["Cox"])
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("score", help="score biomarker panels")
    common(sp, inputs=False)
    sp.add_argument("--panel", required=True, help="CSV with the six biomarker columns")
    sp.add_argument("--models", nargs="*", help="model JSON files")
    sp.add_argument("--normalization", help="normalization JSON from training")
    sp.add_argument("--output", default="scores.csv")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="mean TDCI with bootstrap intervals on a cohort")
    common(sp)
    sp.add_argument("--models", nargs="*", help="model JSON files")
    sp.add_argument("--scores", nargs="*", default=list(RISK_SCORES), choices=list(RISK_SCORES))
    sp.add_argument("--normalization", required=True)
    sp.add_argument("--site", default="all")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="critical-difference analysis of mean TDCI")
    common(sp, inputs=False)
    sp.add_argument("--input", required=True, help="eval_results.json or CSV with model,dataset,score")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--exclude", nargs="*", default=["Oracle", "Random", "pooled"])
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("pipeline", help="run everything end to end")
    common(sp)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and args.threads < 1:
        _log("error: --threads must be >= 1")
        return 1
    if args.command == "eval" and not args.input:
        _log("error: eval needs --input")
        return 1
    try:
        return args.func(args)
    except GraftSurvError as exc:
        _log(f"error: {exc}")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
