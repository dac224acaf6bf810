import csv
import json
import subprocess
import sys

import pytest

from graftsurv.cli import main

FAST = {
    "penalizers": [0.1, 1.0],
    "l1_ratios": [0.0, 0.5],
    "rsf_min_samples_split": [13],
    "rsf_max_depth": [3],
    "rsf_n_estimators": 10,
    "n_resamples": 100,
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "4", "--n-per-region", "150", "--out-dir", str(d / "syn")]) == 0
    (d / "fast.json").write_text(json.dumps(FAST))
    return d


def common(work, *extra):
    return ["--config", str(work / "fast.json"), "--input", str(work / "syn" / "cohort.csv"),
            "--truth", str(work / "syn" / "truth.csv"), "--threads", "2", *extra]


def test_synth_outputs(work):
    rows = list(csv.DictReader((work / "syn" / "cohort.csv").open()))
    assert {r["region"] for r in rows} == {"OPTN-1", "EXT"}
    assert json.loads((work / "syn" / "sim_config.json").read_text())["seed"] == 4


def test_cohort_command(work):
    out = work / "coh"
    assert main(["cohort", *common(work), "--out-dir", str(out)]) == 0
    assert {p.name for p in out.iterdir()} >= {"exclusions.json", "splits.json", "normalization.json"}
    splits = json.loads((out / "splits.json").read_text())
    assert not set(splits["train"]) & set(splits["test"])


def test_fit_score_eval_compare(work, capsys):
    fit = work / "fit"
    assert main(["fit", *common(work), "--model", "Cox", "RSF", "--out-dir", str(fit)]) == 0
    cox, rsf = fit / "models" / "Cox.json", fit / "models" / "RSF.json"
    assert json.loads(cox.read_text())["model_type"] == "cox"

    panel = work / "panel.csv"
    panel.write_text("patient_id,bilirubin,creatinine,albumin,ast,alt,inr\n"
                     "x1,1.2,1.1,3.9,35,38,1.0\n"
                     "x2,3.0,,3.0,80,90,1.6\n")
    out = work / "scores.csv"
    code = main(["score", "--panel", str(panel), "--models", str(cox), str(rsf),
                 "--normalization", str(fit / "normalization.json"), "--output", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["patient_id"] for r in rows] == ["x1", "x2"]
    assert float(rows[1]["meld"]) > float(rows[0]["meld"])
    assert float(rows[1]["Cox"]) > float(rows[0]["Cox"])

    ev = work / "ev"
    code = main(["eval", *common(work), "--models", str(cox), "--normalization",
                 str(fit / "normalization.json"), "--out-dir", str(ev)])
    assert code == 0
    results = json.loads((ev / "eval_results.json").read_text())
    assert {r["model"] for r in results} == {"Cox", "MAS", "MELD", "ALBI", "Oracle"}

    table = work / "table.csv"
    table.write_text("model,dataset,score\n" + "".join(
        f"{m},{d},{s}\n" for m, base in (("A", 0.8), ("B", 0.7), ("C", 0.6)) for d, s in
        ((f"d{i}", base + 0.01 * i) for i in range(6))))
    assert main(["compare", "--input", str(table), "--out-dir", str(work / "cmp")]) == 0
    cd = json.loads((work / "cmp" / "cd.json").read_text())
    assert cd["mean_ranks"] == {"A": 1.0, "B": 2.0, "C": 3.0}


def test_pipeline_outputs(work):
    out = work / "pipe"
    assert main(["pipeline", *common(work), "--out-dir", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"eval_results.json", "tdci_cells.csv", "cd.json", "cd.svg", "coefficients.csv", "models"} <= names
    results = json.loads((out / "eval_results.json").read_text())
    assert {r["site"] for r in results} == {"OPTN-1", "EXT"}
    assert all(r["ci"]["lower"] <= r["mean_tdci"] <= r["ci"]["upper"] for r in results)
    coef = list(csv.DictReader((out / "coefficients.csv").open()))
    assert {r["model"] for r in coef} >= {"Cox", "CoxMELD"}


def test_score_rejects_bad_rows(work, capsys):
    panel = work / "bad.csv"
    panel.write_text("bilirubin,creatinine,albumin,ast,alt,inr\n-1,1,3,30,30,1\n1,1,3,30,30,1\n")
    assert main(["score", "--panel", str(panel), "--output", str(work / "bad_out.csv")]) == 2
    assert "must be > 0" in capsys.readouterr().err
    assert len(list(csv.DictReader((work / "bad_out.csv").open()))) == 1


def test_error_exit_codes(work, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"regions": [{"label": "A", "n_patients": 5}], "rho": 1.5}))
    assert main(["synth", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "autocorrelation" in capsys.readouterr().err
    assert main(["pipeline", "--input", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]) == 1
    assert main(["pipeline", "--config", str(tmp_path / "nope.json")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["compare", "--input", str(tmp_path / "nope.csv")]) == 1


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "graftsurv.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "graftsurv" in out.stdout
