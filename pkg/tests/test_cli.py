import csv
import json

import pytest

from wdruc.cli import main


@pytest.fixture(scope="module")
def samples(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-samples", "--count", "4", "--seed", "2", "--out", str(d / "train.csv")]) == 0
    assert main(["gen-samples", "--count", "6", "--seed", "3", "--untruncated", "--out", str(d / "eval.csv")]) == 0
    return d


def test_gen_samples_layout(samples):
    with open(samples / "train.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["scenario_id", "reg_unit_id", "period", "error_mw"]
    assert len(rows) == 4 * 24
    assert {r["period"] for r in rows} == {str(t) for t in range(1, 25)}


def test_solve_then_eval(samples, capsys):
    sol = samples / "a.json"
    assert main(["solve", "--model", "awdruc", "--epsilon", "0.01", "--samples", str(samples / "train.csv"),
                 "--out", str(sol)]) == 0
    doc = json.loads(sol.read_text())
    assert doc["model"] == "awdruc" and doc["certified"]
    capsys.readouterr()
    assert main(["eval", "--solution", str(sol), "--scenarios", str(samples / "eval.csv")]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["scenarios"] == 6
    assert ev["mean_cost"] == pytest.approx(ev["fixed_cost"] + ev["second_stage"])
    assert ev["max_cost"] >= ev["mean_cost"]


def test_solve_duc_to_stdout(capsys):
    assert main(["solve", "--model", "duc"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["objective"] > 0 and len(doc["on"][0]) == 24


def test_run_from_config(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("models: [duc, suc]\nsample_sizes: [2]\nseeds: [0]\neval_count: 10\n")
    assert main(["run", "--config", str(cfg), "--output", str(tmp_path / "res")]) == 0
    agg = json.loads(capsys.readouterr().out)
    assert set(agg) == {"duc/S=2", "suc/S=2"}
    assert (tmp_path / "res" / "report.csv").exists() and (tmp_path / "res" / "timings.csv").exists()


@pytest.mark.parametrize("argv", [
    ["solve", "--model", "suc"],
    ["solve", "--model", "awdruc", "--samples", "nope.csv", "--epsilon", "0.1"],
    ["eval", "--solution", "missing.json", "--scenarios", "x.csv"],
    ["gen-samples", "--count", "0", "--out", "x.csv"],
    ["solve", "--model", "duc", "--system", "only.json"],
])
def test_errors_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_epsilon(samples, capsys):
    assert main(["solve", "--model", "ewdruc", "--samples", str(samples / "train.csv")]) == 2
    assert "--epsilon" in capsys.readouterr().err


def test_bad_model_name_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--model", "lp"])
    assert exc.value.code == 2
