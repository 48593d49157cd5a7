import json

import numpy as np
import pytest
import yaml

from brmm.batch import decision_score
from brmm.chains import (ProcessingChain, backtransform_affine_analytic, decimation_node,
                         linear_decision_node, standardization_node)
from brmm.cli import ConfigError, ExperimentConfig, main, run_experiment, validate_config
from brmm.core import Dataset
from brmm.dataio import load_csv, load_model, read_results, read_weight_map, save_chain, write_csv

from conftest import random_binary


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def small_csv(tmp_path, rng, n=10, name="d.csv"):
    X, y = random_binary(rng, n, 2, shift=2.0)
    p = tmp_path / name
    write_csv(Dataset(X, y), p)
    return str(p)


def error_payload(err):
    line = [ln for ln in err.splitlines() if ln.startswith("error: ")]
    assert len(line) == 1
    return json.loads(line[0][len("error: "):])


def test_drift_trend_preset(tmp_path, capsys):
    out = tmp_path / "drift.csv"
    assert main(["run", "--preset", "drift_trend", "--out", str(out)]) == 0
    cols, rows = read_results(out)
    assert cols == ("R", "run", "fold", "BA", "ACC")
    ba = {r[0]: float(r[3]) for r in rows}
    assert ba["2.0"] > ba["inf"]
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["best"] == {"R": 2.0} and summary["failures"] == 0


def test_kfold_row_count(tmp_path, rng):
    cfg = {"data": {"csv": small_csv(tmp_path, rng)}, "classifier": {"variant": "csvm"},
           "evaluation": {"protocol": "kfold", "folds": 2, "runs": 1}}
    out = tmp_path / "r.csv"
    assert main(["run", "--config", write_yaml(tmp_path / "c.yaml", cfg), "--out", str(out)]) == 0
    cols, rows = read_results(out)
    assert cols == ("run", "fold", "BA") and len(rows) == 2


def test_grid_rows_and_worker_invariance(tmp_path, rng):
    cfg = {"data": {"csv": small_csv(tmp_path, rng, n=40)},
           "classifier": {"variant": "brmm", "hyperparams": {"C": "__C__", "R": 2.0}},
           "evaluation": {"metrics": ["BA", "AUC", "MCC"], "protocol": "kfold", "folds": 3,
                          "runs": 2},
           "search": {"kind": "grid", "axes": {"C": [0.01, 0.1, 1.0]}}}
    path = write_yaml(tmp_path / "c.yaml", cfg)
    outs = []
    for i, w in enumerate((1, 1, 3)):
        out = tmp_path / f"g{i}.csv"
        assert main(["gridsearch", "--config", path, "--workers", str(w), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    _, rows = read_results(tmp_path / "g0.csv")
    assert len(rows) == 3 * 2 * 3


def test_pattern_search_command(tmp_path, rng, capsys):
    cfg = {"data": {"csv": small_csv(tmp_path, rng, n=30)},
           "classifier": {"variant": "brmm"},
           "evaluation": {"protocol": "kfold", "folds": 3},
           "search": {"settings": {"step_tolerance": 0.3}}}
    out = tmp_path / "p.csv"
    path = write_yaml(tmp_path / "c.yaml", cfg)
    assert main(["patternsearch", "--config", path, "--preset", "C_R", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    cols, rows = read_results(out)
    assert cols[:2] == ("C", "R")
    # three folds per point; revisited points are not evaluated again
    keys = [(r[0], r[1]) for r in rows[::3]]
    assert len(rows) == 3 * len(keys) and len(keys) == len(set(keys))
    assert summary["evaluations"] >= len(keys)
    assert summary["final_step"] < 0.3


def test_gen_writes_two_files(tmp_path, capsys):
    assert main(["gen", "--preset", "drift", "--seed", "3", "--out", str(tmp_path)]) == 0
    train = load_csv(tmp_path / "drift_train.csv")
    test = load_csv(tmp_path / "drift_test.csv")
    assert train.X.shape == test.X.shape == (2000, 2)
    first = (tmp_path / "drift_train.csv").read_bytes()
    assert main(["gen", "--preset", "drift", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "drift_train.csv").read_bytes() == first


def test_fit_and_predict(tmp_path, rng):
    data = small_csv(tmp_path, rng, n=40)
    model_path = tmp_path / "m.yaml"
    cfg = write_yaml(tmp_path / "c.yaml", {"classifier": {"variant": "brmm",
                                                          "hyperparams": {"C": 0.5, "R": 3.0}}})
    assert main(["fit", "--config", cfg, "--data", data, "--out", str(model_path)]) == 0
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model_path), "--data", data, "--out", str(pred)]) == 0
    model = load_model(model_path)
    ds = load_csv(data)
    lines = pred.read_text().splitlines()
    assert lines[0] == "score,prediction,label"
    for x, y, line in zip(ds.X, ds.y, lines[1:]):
        s, p, lab = line.split(",")
        assert abs(float(s) - decision_score(model, x)) <= 1e-12
        assert int(p) == (1 if float(s) > 0 else -1) and int(lab) == int(y)


def test_backtransform_command(tmp_path):
    chain = ProcessingChain((standardization_node(np.arange(8.0), np.full(8, 2.0)),
                             decimation_node(2, 4, 2),
                             linear_decision_node([1.0, -1.0, 0.5, 2.0], 0.25)),
                            input_shape=(4, 2))
    cpath = tmp_path / "chain.yaml"
    save_chain(chain, cpath)
    out = tmp_path / "w.csv"
    assert main(["backtransform", "--chain", str(cpath), "--out", str(out)]) == 0
    exact = backtransform_affine_analytic(chain)
    assert np.array_equal(read_weight_map(out), exact.reshaped())
    assert np.array_equal(read_weight_map(tmp_path / "w.stage1.csv"),
                          exact.stage_weights[1].reshape(4, 2))
    anchor = tmp_path / "x0.csv"
    anchor.write_text(",".join(["1.5"] * 8) + "\n")
    num = tmp_path / "n.csv"
    assert main(["backtransform", "--chain", str(cpath), "--anchor", str(anchor),
                 "--order", "four_point", "--out", str(num)]) == 0
    assert np.allclose(read_weight_map(num), exact.reshaped(), atol=1e-7)


def test_rank_sensors_command(tmp_path):
    w = tmp_path / "w.csv"
    w.write_text("s0,s1\n1.0,-2.0\n0.0,3.0\n")
    out = tmp_path / "rank.csv"
    assert main(["rank-sensors", "--weights", str(w), "--out", str(out)]) == 0
    assert out.read_text() == "rank,sensor,score\n0,0,1.0\n1,1,5.0\n"


def test_config_errors_are_listed(tmp_path, capsys):
    bad = {"data": {"generator": "drift"}, "classifier": {"variant": "svm_plus"},
           "evaluation": {"metrics": ["BA", "kappa"], "folds": 1}, "colour": "red"}
    code = main(["run", "--config", write_yaml(tmp_path / "bad.yaml", bad)])
    assert code != 0
    payload = error_payload(capsys.readouterr().err)
    assert payload["type"] == "config"
    joined = " ".join(payload["errors"])
    for word in ("svm_plus", "kappa", "folds", "colour"):
        assert word in joined


def test_runtime_error_line(tmp_path, capsys):
    code = main(["predict", "--model", str(tmp_path / "none.yaml"), "--data", "x.csv",
                 "--out", str(tmp_path / "p.csv")])
    assert code == 1
    assert error_payload(capsys.readouterr().err)["type"] == "FileNotFoundError"
    assert main(["predict"]) == 2


def test_unbound_placeholder_is_reported():
    doc = {"data": {"generator": "drift"},
           "classifier": {"variant": "brmm", "hyperparams": {"C": "__C__"}}}
    errors = validate_config(doc)
    assert errors == ["placeholder __C__ has no search axis"]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(doc)


def test_run_experiment_is_deterministic(tmp_path, rng):
    doc = {"data": {"csv": small_csv(tmp_path, rng, n=24)}, "classifier": {"variant": "rfda"},
           "evaluation": {"protocol": "kfold", "folds": 3, "runs": 2, "stratified": True,
                          "threshold_optimize": True}}
    cfg = ExperimentConfig.from_mapping(doc)
    a, b = run_experiment(cfg), run_experiment(cfg, workers=2)
    assert a.table.rows == b.table.rows and a.summary == b.summary
