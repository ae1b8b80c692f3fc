import os

import numpy as np
import pytest

from rgforest.cli import main
from rgforest.dataset import read_dense, read_targets
from rgforest.forest import load
from rgforest.trainer import score

DATA = os.path.join(os.path.dirname(__file__), "data")
TRAIN_X = os.path.join(DATA, "toy_train.x")
TRAIN_Y = os.path.join(DATA, "toy_train.y")
TEST_X = os.path.join(DATA, "toy_test.x")
TEST_Y = os.path.join(DATA, "toy_test.y")

# recorded from a reference run of the pipeline below
REFERENCE_RMSE = 0.192267


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "usage: rgf" in capsys.readouterr().out
    for cmd in ("train", "predict", "eval", "cv", "synth", "gbdt", "bench"):
        assert main([cmd, "--help"]) == 0


def test_unknown_subcommand_exits_two(capsys):
    assert main(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_missing_required_flag():
    assert main(["train", "--data", TRAIN_X]) == 2


def test_train_predict_eval_pipeline(tmp_path, capsys):
    model = str(tmp_path / "m.txt")
    pred = str(tmp_path / "p.txt")
    assert main(["train", "--data", TRAIN_X, "--targets", TRAIN_Y, "--lambda", "0.01",
                 "--max-leaf", "50", "--model-out", model, "--report-every", "25",
                 "--monitor-data", TEST_X, "--monitor-targets", TEST_Y]) == 0
    out = capsys.readouterr().out
    assert "monitor=" in out and "stop=max_leaf" in out
    assert main(["predict", "--model", model, "--data", TEST_X, "--out", pred]) == 0
    assert main(["eval", "--pred", pred, "--targets", TEST_Y]) == 0
    printed = float(capsys.readouterr().out.strip().split("=")[1])
    direct = score(load(model).predict(read_dense(TEST_X)), read_targets(TEST_Y))
    assert printed == pytest.approx(direct, abs=1e-6)
    assert printed == pytest.approx(REFERENCE_RMSE, abs=1e-6)


def test_training_is_byte_deterministic(tmp_path):
    paths = [str(tmp_path / f"m{k}.txt") for k in range(2)]
    for p in paths:
        assert main(["train", "--data", TRAIN_X, "--targets", TRAIN_Y, "--reg", "MinPenSib",
                     "--gamma", "1.5", "--max-leaf", "30", "--model-out", p]) == 0
    with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
        assert a.read() == b.read()


def test_errors_are_one_line(tmp_path, capsys):
    assert main(["predict", "--model", str(tmp_path / "missing"), "--data", TEST_X,
                 "--out", str(tmp_path / "p")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("rgf predict: error:") and "\n" not in err
    bad = tmp_path / "bad.y"
    bad.write_text("1.0\nabc\n")
    assert main(["eval", "--pred", str(bad), "--targets", TEST_Y]) == 1
    assert "bad.y:2:" in capsys.readouterr().err
    assert main(["train", "--data", TRAIN_X, "--targets", TRAIN_Y, "--lambda", "0",
                 "--model-out", str(tmp_path / "m")]) == 1


def test_synth_writes_files(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--q", "2", "--num-trees", "3", "--dim", "3", "--n-train", "20",
                 "--n-test", "10", "--seed", "1", "--out-dir", str(out)]) == 0
    X = read_dense(str(out / "train.x"))
    assert X.shape == (20, 3)
    assert read_targets(str(out / "test.y")).shape == (10,)


def test_gbdt_subcommand(tmp_path, capsys):
    model = str(tmp_path / "g.txt")
    assert main(["gbdt", "--data", TRAIN_X, "--targets", TRAIN_Y, "--variant", "fc",
                 "--tree-leaves", "4", "--num-trees", "5", "--model-out", model]) == 0
    assert "trees=6" in capsys.readouterr().out
    assert len(load(model)) == 6


def test_cv_with_grid_file(tmp_path, capsys):
    grid = tmp_path / "grid.cfg"
    grid.write_text("# lambda sweep\nlambda=1,max_leaf=20\nlambda=0.01,max_leaf=20\n")
    model = str(tmp_path / "best.txt")
    assert main(["cv", "--data", TRAIN_X, "--targets", TRAIN_Y, "--grid", str(grid),
                 "--folds", "2", "--model-out", model]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[-1].startswith("best: lambda=")
    scores = [float(l.split()[0]) for l in lines[:2]]
    best = lines[-1].split("best: ")[1]
    assert best == ["lambda=1,max_leaf=20", "lambda=0.01,max_leaf=20"][int(np.argmin(scores))]
    assert os.path.exists(model)
    grid.write_text("lambda=1,depth=3\n")
    assert main(["cv", "--data", TRAIN_X, "--targets", TRAIN_Y, "--grid", str(grid)]) == 1


def test_bench_small(tmp_path, capsys):
    csv = tmp_path / "b.csv"
    assert main(["bench", "--q", "2", "--runs", "1", "--n-train", "60", "--n-test", "50",
                 "--max-leaf", "20", "--lambdas", "0.1", "--regs", "L2", "--gbdt-k-max", "10",
                 "--csv", str(csv)]) == 0
    rows = csv.read_text().strip().splitlines()
    assert rows[0] == "method,reg,q,run,selected_params,test_rmse,leaves,train_seconds"
    assert len(rows) == 3
