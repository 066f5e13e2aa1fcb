import csv
import json

import pytest

from xtnet.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write(root / "gen.json", {"dataset_id": "syn3", "n_train": 300, "n_test": 60, "seed": 4})
    assert main(["generate", "--config", cfg, "--out-dir", str(root / "data")]) == 0
    return root


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_generate_is_deterministic(data_dir, tmp_path):
    cfg = str(data_dir / "gen.json")
    assert main(["generate", "--config", cfg, "--out-dir", str(tmp_path / "again")]) == 0
    assert manifest(tmp_path / "again")["outputs"] == manifest(data_dir / "data")["outputs"]
    rows = list(csv.DictReader(open(data_dir / "data" / "train.csv")))
    assert len(rows) == 300


def test_obs_fraction_one(tmp_path):
    cfg = write(tmp_path / "g.json", {"n_train": 50, "n_test": 10, "obs_fraction": 1.0})
    assert main(["generate", "--config", cfg, "--out-dir", str(tmp_path / "d"), "--quiet"]) == 0
    origins = {r["origin"] for r in csv.DictReader(open(tmp_path / "d" / "train.csv"))}
    assert origins == {"observational"}


def test_train_writes_trace_and_lambda_overrides(data_dir, tmp_path):
    cfg = write(tmp_path / "t.json", {"data": str(data_dir / "data"),
                                      "train": {"epochs": 3, "loss": {"lambda1": 0.5, "lambda2": 0.0}}})
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    assert len(list(csv.DictReader(open(out / "trace.csv")))) == 3
    m = manifest(out)
    assert m["config"]["train"]["loss"]["lambda1"] == 0.5
    assert m["config"]["train"]["loss"]["lambda2"] == 0.0
    assert m["config"]["train"]["learning_rate"] == 0.01
    # replaying the manifest reproduces every output byte for byte
    assert main(["train", "--config", str(out / "manifest.json"), "--out-dir", str(tmp_path / "re"), "--quiet"]) == 0
    assert manifest(tmp_path / "re")["outputs"] == m["outputs"]

    ev = write(tmp_path / "e.json", {"data": str(data_dir / "data"), "checkpoint": str(out / "model"),
                                     "grid_points": 11, "shuffles": 2})
    assert main(["evaluate", "--config", ev, "--out-dir", str(tmp_path / "ev"), "--policy", "mv_aucc",
                 "--policy", "qini", "--quiet"]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["model"] == "xtnet"
    assert set(report["outcomes"][0]["curve_area"]) == {"mv_aucc", "qini"}


@pytest.mark.parametrize("model", ["multi_head", "interaction_linear"])
def test_train_baselines(data_dir, tmp_path, model):
    cfg = write(tmp_path / "t.json", {"data": str(data_dir / "data"), "train": {"epochs": 1}})
    assert main(["train", "--config", cfg, "--model", model, "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert json.loads((tmp_path / "model.json").read_text())["kind"] == model


def test_evaluate_oracle(data_dir, tmp_path):
    cfg = write(tmp_path / "e.json", {"data": str(data_dir / "data"), "grid_points": 11, "shuffles": 2})
    assert main(["evaluate", "--config", cfg, "--model", "oracle", "--out-dir", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["outcomes"][0]["ranking_error"]["mean"] == 0.0


def test_theorems_pass_and_echo_seed(tmp_path):
    cfg = write(tmp_path / "th.json", {"instances": 40})
    assert main(["theorems", "--config", cfg, "--seed", "9", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["seed"] == 9 and report["passed"]


def test_theorem_threshold_failure_exits_3(tmp_path):
    cfg = write(tmp_path / "th.json", {"instances": 10, "strict_threshold": 0.99, "rho": 1.0})
    assert main(["theorems", "--config", cfg, "--out-dir", str(tmp_path)]) == 3


def test_sweep_requirement_failure_exits_3(tmp_path):
    cfg = write(tmp_path / "s.json", {
        "data": {"n_train": 200, "n_test": 30}, "seeds": [0], "models": ["blr_concat"],
        "train": {"epochs": 1}, "grid_points": 5, "shuffles": 2,
        "require": {"mcmv_aucc:random>oracle": 1}})
    assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path), "--quiet"]) == 3
    report = json.loads((tmp_path / "sweep.json").read_text())
    assert "mcmv_aucc:random>oracle" in report["failed_requirements"]


@pytest.mark.parametrize("argv", [
    [], ["bogus"], ["train", "--model", "forest"], ["evaluate", "--policy", "nope"],
    ["generate", "--config", "/nonexistent.json"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_config_errors_exit_1(tmp_path):
    bad = write(tmp_path / "g.json", {"dataset_id": "syn7"})
    assert main(["generate", "--config", bad, "--out-dir", str(tmp_path)]) == 1
    bad = write(tmp_path / "t.json", {"data": str(tmp_path), "train": {"lr": 1}})
    assert main(["train", "--config", bad, "--out-dir", str(tmp_path)]) == 1
    bad = write(tmp_path / "th.json", {"G": 0.0, "rho": 0.5})
    assert main(["theorems", "--config", bad, "--out-dir", str(tmp_path)]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exits_2(data_dir, tmp_path):
    cfg = write(tmp_path / "t.json", {"data": str(data_dir / "data"),
                                      "train": {"epochs": 1, "optimizer": "sgd", "learning_rate": 1e300,
                                                "grad_clip": None}})
    assert main(["train", "--config", cfg, "--model", "blr_concat", "--out-dir", str(tmp_path), "--quiet"]) == 2
