import json

import numpy as np
import pytest
from click.testing import CliRunner

from ggnam.cli import main
from synthetic import planted_structure, write_csv_dataset

FAST = ["--hidden", "4", "--activation", "logistic", "--lr", "0.02", "--max-epochs", "20", "--patience", "5"]


@pytest.fixture
def toy(tmp_path):
    X, y = planted_structure(400, seed=2)
    return write_csv_dataset(tmp_path, X, y)


@pytest.fixture
def toy_clf(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(600, 3))
    y = (X[:, 0] * X[:, 1] + 0.3 * rng.normal(size=600) > 0).astype(float)
    d = tmp_path / "clf"
    d.mkdir()
    return write_csv_dataset(d, X, y, task="binary_classification")


def _invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def test_train_preset_writes_artifacts(tmp_path, toy):
    out = tmp_path / "run"
    r = _invoke("train", "--model", "nam", "--dataset", toy, "--seed", 7, "--out", out, *FAST)
    assert r.exit_code == 0, r.output
    for name in ("config.json", "metrics.json", "model.json", "architecture.txt", "splits/provenance.json"):
        assert (out / name).is_file()
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["model"] == "nam" and cfg["hidden_widths"] == [4]
    records = json.loads((out / "metrics.json").read_text())
    assert {r["split"] for r in records} == {"val", "test"}
    assert all(set(r) == {"metric", "split", "value", "seed", "model"} and r["metric"] == "rmse" for r in records)


def test_train_custom_partition(tmp_path, toy):
    part = tmp_path / "part.json"
    part.write_text(json.dumps({"p": 4, "linear": [1], "groups": [[2], [3, 4]]}))
    out = tmp_path / "run"
    r = _invoke("train", "--partition", part, "--dataset", toy, "--out", out, *FAST)
    assert r.exit_code == 0, r.output
    model = json.loads((out / "model.json").read_text())
    assert model["partition"]["groups"] == [[2], [3, 4]]


def test_missing_manifest_exit_2(tmp_path):
    out = tmp_path / "run"
    r = _invoke("train", "--model", "lalr", "--dataset", tmp_path / "absent.toml", "--out", out)
    assert r.exit_code == 2
    assert sorted(p.name for p in out.iterdir()) == ["error.log"]


def test_unknown_config_key_exit_2(tmp_path, toy):
    cfg = tmp_path / "c.toml"
    cfg.write_text("bogus = 1\n")
    r = _invoke("train", "--config", cfg, "--dataset", toy, "--output-root", tmp_path / "runs")
    assert r.exit_code == 2


def test_config_file_and_flag_precedence(tmp_path, toy):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'dataset = "{toy}"\nmodel = "lalr"\nseed = 3\nmax_epochs = 5\n')
    out = tmp_path / "run"
    r = _invoke("train", "--config", cfg, "--seed", 4, "--out", out)
    assert r.exit_code == 0, r.output
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["seed"] == 4 and echoed["max_epochs"] == 5 and echoed["model"] == "lalr"


def test_data_error_exit_3(tmp_path):
    (tmp_path / "data.csv").write_text("a,target\n1,0\n2,x\n")
    m = tmp_path / "bad.toml"
    m.write_text('path = "data.csv"\ntarget = "target"\ntask = "regression"\n')
    out = tmp_path / "run"
    r = _invoke("train", "--model", "lalr", "--dataset", m, "--out", out)
    assert r.exit_code == 3
    assert (out / "FAILED").is_file() and (out / "error.log").is_file()


def test_divergence_exit_4(tmp_path):
    X = np.random.default_rng(0).normal(size=(100, 2)) * 1e150
    m = write_csv_dataset(tmp_path, X, X[:, 0] * 1e150)
    out = tmp_path / "run"
    with np.errstate(all="ignore"):
        r = _invoke("train", "--model", "lalr", "--dataset", m, "--out", out, "--lr", "1e3", "--max-epochs", "3")
    assert r.exit_code == 4
    assert (out / "FAILED").is_file()


def test_run_dir_never_overwritten(tmp_path, toy):
    out = tmp_path / "run"
    args = ["train", "--model", "lalr", "--dataset", toy, "--out", out, "--max-epochs", "2"]
    assert _invoke(*args).exit_code == 0
    before = (out / "model.json").read_bytes()
    assert _invoke(*args).exit_code == 2
    assert (out / "model.json").read_bytes() == before
    assert (tmp_path / "run-error" / "error.log").is_file()
    assert _invoke(*args, "--force").exit_code == 0


def test_output_root_env(tmp_path, toy):
    root = tmp_path / "envroot"
    r = _invoke("train", "--model", "lalr", "--dataset", toy, "--max-epochs", "2",
                env={"GGNAM_OUTPUT_ROOT": str(root)})
    assert r.exit_code == 0
    (run,) = root.iterdir()
    assert run.name.endswith("-train-seed0")


def test_discover_writes_stage_artifacts(tmp_path, toy):
    out = tmp_path / "run"
    r = _invoke("discover", "--dataset", toy, "--out", out, "--workers", 1, *FAST)
    assert r.exit_code == 0, r.output
    for name in ("config.json", "metrics.json", "model_lalr.json", "model_fcnn.json",
                 "selection_trace.json", "model.json", "architecture.txt"):
        assert (out / name).is_file()
    models = {r["model"] for r in json.loads((out / "metrics.json").read_text())}
    assert models == {"lalr", "fcnn", "ggnam"}


def test_explain_shapes_and_hessian(tmp_path, toy):
    run = tmp_path / "run"
    part = tmp_path / "part.json"
    part.write_text(json.dumps({"linear": [1], "groups": [[2], [3], [4]]}))
    assert _invoke("train", "--partition", part, "--dataset", toy, "--out", run, *FAST).exit_code == 0
    out = tmp_path / "explain"
    r = _invoke("explain", "--model", run / "model.json", "--dataset", toy, "--shapes", "--hessian", "--out", out)
    assert r.exit_code == 0, r.output
    lines = (out / "shapes.csv").read_text().splitlines()
    assert lines[0] == "feature,grid_value,contribution"
    assert {l.split(",")[0] for l in lines[1:]} == {"f2", "f3", "f4"}
    H = np.loadtxt(out / "hessian.csv", delimiter=",", skiprows=1, usecols=range(1, 5))
    off = H[~np.eye(4, dtype=bool)]
    assert off.max() < 1e-6 * H.max()


def test_explain_jmp(tmp_path, toy_clf):
    run = tmp_path / "run"
    assert _invoke("train", "--model", "lalr", "--dataset", toy_clf, "--out", run, "--max-epochs", "2").exit_code == 0
    out = tmp_path / "explain"
    r = _invoke("explain", "--model", run / "model.json", "--dataset", toy_clf, "--jmp", 1, 2, "--out", out)
    assert r.exit_code == 0, r.output
    rows = (out / "jmp_x1_x2.csv").read_text().splitlines()
    assert len(rows) == 11 and len(rows[1].split(",")) == 11


def test_explain_width_mismatch_exit_3(tmp_path, toy, toy_clf):
    run = tmp_path / "run"
    assert _invoke("train", "--model", "lalr", "--dataset", toy, "--out", run, "--max-epochs", "2").exit_code == 0
    r = _invoke("explain", "--model", run / "model.json", "--dataset", toy_clf, "--shapes", "--out", tmp_path / "e")
    assert r.exit_code == 3
