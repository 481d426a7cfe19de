import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ude_discover.cli import main as cli_main
from ude_discover.errors import StructuralError
from ude_discover.experiments import (CSV_COLUMNS, E2_SWEEP, EOH_SWEEP,
                                      HORIZON_SWEEP, ExperimentSpec,
                                      ResultRow, emit_results,
                                      read_results_json, rows_to_records,
                                      run_experiment, run_to_files)
from ude_discover.metrics import aggregate

FAST = {"max_epochs": 60}


def small_spec(eid, **kw):
    base = dict(n_trials=2, seed=0, train_overrides=dict(FAST))
    base.update(kw)
    return ExperimentSpec(id=eid, **base)


def test_spec_validation():
    with pytest.raises(StructuralError):
        ExperimentSpec(id="E9-zz")
    with pytest.raises(StructuralError):
        ExperimentSpec(id="E1-rc", n_trials=0)
    with pytest.raises(StructuralError):
        ExperimentSpec(id="E2-rc", sweep_values=())


def test_e1_schema_has_both_regimes():
    res = run_experiment(small_spec("E1-rc"))
    regimes = {r.sweep_value for r in res.rows}
    assert regimes == {"mini-batch", "full-batch"}
    metrics = {r.metric for r in res.rows if r.sweep_value == "mini-batch"}
    assert {"ae_tau", "ae_vs", "rmse_state", "wall_time_s"} <= metrics
    per_regime = {}
    for r in res.rows:
        per_regime.setdefault(r.sweep_value, set()).add(r.metric)
    assert per_regime["mini-batch"] == per_regime["full-batch"]
    assert all(r.stats.n == 2 for r in res.rows)
    assert res.cells_all_failed == []
    assert len(res.trials) == 4


def test_e1_regime_restriction():
    spec = small_spec("E1-sir")
    spec.train_overrides["regime"] = "mini-batch"
    res = run_experiment(spec)
    assert {r.sweep_value for r in res.rows} == {"mini-batch"}


def test_e2_rows_keyed_by_sweep():
    spec = small_spec("E2-rc", sweep_values=(1, 5))
    res = run_experiment(spec)
    assert {r.sweep_value for r in res.rows} == {1, 5}


def test_e3_and_e4_sweep_keys():
    res = run_experiment(small_spec("E3-eoh", sweep_values=(1.0, 2.0)))
    assert {r.sweep_value for r in res.rows} == {1.0, 2.0}
    res = run_experiment(small_spec("E4-horizon", sweep_values=(5, 20)))
    assert {r.sweep_value for r in res.rows} == {5, 20}
    res = run_experiment(small_spec("E4-nonlinear"))
    metrics = {r.metric for r in res.rows}
    assert {"rmse_state", "rmse_beta_series", "rmse_state_rollout",
            "wall_time_s"} <= metrics


def _dummy_rows():
    stats = aggregate([1.0, 2.0, 4.0])
    return [ResultRow("E1-rc", "mini-batch", "ae_tau", stats, 0),
            ResultRow("E2-rc", 10, "wall_time_s", stats, 1),
            ResultRow("E3-linear", None, "ae_a", stats, 0)]


def test_emit_csv_schema(tmp_path):
    path = tmp_path / "rows.csv"
    emit_results(_dummy_rows(), "csv", path)
    with path.open() as fh:
        lines = list(csv.reader(fh))
    assert lines[0] == list(CSV_COLUMNS)
    assert all(len(line) == 10 for line in lines)
    assert lines[3][1] == ""  # empty sweep value


def test_emit_empty_rows_is_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    emit_results([], "csv", path)
    text = path.read_text().strip().splitlines()
    assert text == [",".join(CSV_COLUMNS)]


def test_emit_json_round_trip(tmp_path):
    rows = _dummy_rows()
    path = tmp_path / "rows.json"
    emit_results(rows, "json", path)
    back = read_results_json(path)
    assert back == rows


def test_emit_rejects_unknown_format(tmp_path):
    with pytest.raises(StructuralError):
        emit_results([], "yaml", tmp_path / "x.yaml")


def test_records_have_all_columns():
    for rec in rows_to_records(_dummy_rows()):
        assert tuple(rec.keys()) == CSV_COLUMNS


def test_run_to_files_writes_everything(tmp_path):
    spec = small_spec("E1-sir", save_datasets=True, save_models=True)
    files, dead = run_to_files(spec, tmp_path, "csv")
    assert dead == []
    names = {Path(f).name for f in files}
    assert names == {"E1-sir.csv", "E1-sir-trials.json",
                     "E1-sir-dataset.json", "E1-sir-manifest.json"}
    manifest = json.loads((tmp_path / "E1-sir-manifest.json").read_text())
    assert manifest["experiment_id"] == "E1-sir"
    assert manifest["seed"] == 0
    assert len(manifest["dataset_sha256"]) == 64
    trials = json.loads((tmp_path / "E1-sir-trials.json").read_text())
    assert len(trials) == 4
    assert all("model" in t for t in trials if not t.get("failed"))


def _strip_wall_csv(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh)]
    return [[c for i, c in enumerate(r)] for r in rows
            if r[2] != "wall_time_s" or r == rows[0]]


def test_cli_end_to_end_and_determinism(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    args = ["run", "E1-sir", "--trials", "2", "--seed", "3",
            "--max-epochs", "60", "--format", "csv"]
    assert cli_main(args + ["--out", str(out1)]) == 0
    assert cli_main(args + ["--out", str(out2)]) == 0
    rows1 = _strip_wall_csv(out1 / "E1-sir.csv")
    rows2 = _strip_wall_csv(out2 / "E1-sir.csv")
    assert rows1 == rows2
    m1 = (out1 / "E1-sir-manifest.json").read_text()
    m2 = (out2 / "E1-sir-manifest.json").read_text()
    assert m1.replace(str(out1), "X") == m2.replace(str(out2), "X")


def test_cli_config_file_and_overrides(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"trials": 2, "seed": 5, "max-epochs": 50,
                                "out": str(tmp_path / "from-conf")}))
    rc = cli_main(["run", "E1-sir", "--config", str(conf),
                   "--regime", "mini"])
    assert rc == 0
    assert (tmp_path / "from-conf" / "E1-sir.csv").exists()


def test_cli_bad_config_key(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"no-such-key": 1}))
    rc = cli_main(["run", "E1-rc", "--config", str(conf)])
    assert rc == 1


def test_cli_unwritable_out_is_config_error(tmp_path):
    target = tmp_path / "blocked"
    target.write_text("file, not a directory")
    rc = cli_main(["run", "E1-sir", "--trials", "1", "--max-epochs", "30",
                   "--out", str(target)])
    assert rc == 1


def test_default_sweeps_match_study_grids():
    assert E2_SWEEP == (1, 2, 5, 10, 20, 50, 100)
    assert EOH_SWEEP == (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
    assert HORIZON_SWEEP == (5, 10, 15, 20)


def test_diverged_trials_are_recorded_not_fatal():
    spec = ExperimentSpec(id="E1-rc", n_trials=2, seed=0,
                          train_overrides={"learning_rate": 1e9,
                                           "max_epochs": 30,
                                           "regime": "mini-batch"})
    res = run_experiment(spec)
    assert res.rows == []
    assert res.cells_all_failed == ["mini-batch"]
    assert all(t["failed"] for t in res.trials)
    assert all("diverged" in t["error"] for t in res.trials)


def test_cli_exit_code_two_when_all_trials_fail(tmp_path):
    rc = cli_main(["run", "E1-rc", "--trials", "1", "--seed", "0",
                   "--lr", "1e9", "--max-epochs", "30", "--regime", "mini",
                   "--out", str(tmp_path)])
    assert rc == 2


def test_parallel_jobs_match_sequential():
    kw = dict(n_trials=4, seed=1, train_overrides={"max_epochs": 80})
    seq = run_experiment(ExperimentSpec(id="E1-sir", jobs=1, **kw))
    par = run_experiment(ExperimentSpec(id="E1-sir", jobs=3, **kw))

    def comparable(res):
        return [(r.sweep_value, r.metric, r.stats) for r in res.rows
                if r.metric != "wall_time_s"]

    assert comparable(seq) == comparable(par)
