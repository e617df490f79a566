import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from noforge.cli import main
from noforge.data import PreparedSplit, ScalingStats, read_dataset, read_sample, split_dataset
from noforge.imaging import central_slices, read_pgm, slice_images
from noforge.models import load_checkpoint, toy_config
from noforge.training import evaluate

GRID = "8x8x4"


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(directory):
    d = Path(directory)
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", "--n", 12, "--grid", GRID, "--seed", 7, "--out", root / "data") == 0
    for kind in ("fno", "deeponet"):
        assert run("train", "--model", kind, "--data", root / "data", "--epochs", 2, "--seed", 1,
                   "--batch-size", 2, "--out", root / f"run_{kind}") == 0
    return root


# -- generate -----------------------------------------------------------------------
def test_generate_count_and_layout(workspace):
    m = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(m["samples"]) == 12 and m["grid"] == [8, 8, 4]
    assert (workspace / "data" / "config.json").exists()
    assert len(read_dataset(workspace / "data")) == 12


def test_generate_rerun_is_byte_identical(workspace, tmp_path):
    out = tmp_path / "d"
    assert run("generate", "--n", 5, "--grid", GRID, "--seed", 3, "--out", out) == 0
    first = snapshot(out)
    assert run("generate", "--n", 5, "--grid", GRID, "--seed", 3, "--out", out, "--force") == 0
    assert snapshot(out) == first


def test_generate_refuses_non_empty_out(workspace, tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "keep.txt").write_text("mine")
    assert run("generate", "--n", 2, "--grid", GRID, "--out", out) == 1
    assert [p.name for p in out.iterdir()] == ["keep.txt"]


def test_generate_full_grid_shape(tmp_path):
    assert run("generate", "--n", 1, "--grid", "80x80x44", "--out", tmp_path / "p") == 0
    assert read_dataset(tmp_path / "p")[0].grid == (80, 80, 44)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"n": 3, "grid": "4x4x4", "seed": 9}))
    assert run("generate", "--config", cfg, "--n", 2, "--out", tmp_path / "d") == 0
    resolved = json.loads((tmp_path / "d" / "config.json").read_text())
    assert resolved["n"] == 2 and resolved["seed"] == 9 and resolved["grid"] == [4, 4, 4]


DOCS = Path(__file__).resolve().parents[1] / "docs" / "configs"


@pytest.mark.parametrize("command", ["generate", "train", "evaluate", "benchmark", "predict", "report"])
def test_docs_config_examples_list_every_option(command):
    from noforge.cli import build_parser
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    known = {a.dest for a in sub._actions} - {"help", "config", "force"}
    example = json.loads((DOCS / f"{command}.json").read_text())
    assert set(example) == known


# -- exit codes ----------------------------------------------------------------------
def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("generate", "--grid", "8x8", "--out", tmp_path / "a") == 1
    assert run("generate", "--n", 0, "--out", tmp_path / "b") == 1
    assert run("train", "--data", tmp_path) == 1
    with pytest.raises(SystemExit) as exc:
        run("train", "--model", "transformer")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err


def test_data_errors_exit_2(workspace, tmp_path):
    assert run("train", "--model", "fno", "--data", tmp_path / "missing", "--out", tmp_path / "r") == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert run("predict", "--checkpoint", bad, "--data", workspace / "data", "--sample", "syn0000",
               "--out", tmp_path / "p") == 2
    assert run("predict", "--checkpoint", workspace / "run_fno" / "best.ckpt", "--data", workspace / "data",
               "--sample", "nobody", "--out", tmp_path / "q") == 2


def test_numerical_failure_exits_3(workspace, tmp_path, capsys):
    code = run("train", "--model", "fno", "--data", workspace / "data", "--epochs", 3, "--lr", 1e30,
               "--out", tmp_path / "r")
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


# -- train ---------------------------------------------------------------------------
def test_train_outputs(workspace):
    run_dir = workspace / "run_fno"
    names = {p.name for p in run_dir.iterdir()}
    assert {"best.ckpt", "history.csv", "config.json", "scaling"} <= names
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["train_config"]["lr"] == 1e-3 and cfg["train_config"]["weight_decay"] == 1e-5
    assert cfg["train_config"]["plateau_factor"] == 0.5 and cfg["train_config"]["plateau_patience"] == 10
    assert cfg["split_sizes"] == [9, 1, 2]
    assert cfg["param_count"] == toy_config("fno", (8, 8, 4)).closed_form_param_count()
    rows = (run_dir / "history.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,lr" and len(rows) == 3


def test_train_zero_epochs(workspace, tmp_path):
    assert run("train", "--model", "ffno", "--data", workspace / "data", "--epochs", 0,
               "--out", tmp_path / "r") == 0
    assert (tmp_path / "r" / "history.csv").read_text() == "epoch,train_loss,val_loss,lr\n"
    assert load_checkpoint(tmp_path / "r" / "best.ckpt").kind == "ffno"


def test_train_is_deterministic(workspace, tmp_path):
    args = ("train", "--model", "fno", "--data", workspace / "data", "--epochs", 2, "--seed", 1,
            "--batch-size", 2, "--out", tmp_path / "r", "--force")
    assert run(*args) == 0
    first = snapshot(tmp_path / "r")
    assert run(*args) == 0
    assert snapshot(tmp_path / "r") == first
    ref = snapshot(workspace / "run_fno")
    for name in ("best.ckpt", "history.csv", "scaling/scaling.json"):
        assert first[name] == ref[name]


# -- evaluate ------------------------------------------------------------------------
def test_evaluate_outputs_and_determinism(workspace, tmp_path):
    args = ("evaluate", "--checkpoint", workspace / "run_fno" / "best.ckpt", "--data", workspace / "data",
            "--split", "test", "--n-images", 2, "--out", tmp_path / "e")
    assert run(*args) == 0
    first = snapshot(tmp_path / "e")
    assert run(*args, "--force") == 0
    assert snapshot(tmp_path / "e") == first
    with open(tmp_path / "e" / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["direction", "model", "mae", "mse", "rmse", "accuracy"]
    assert rows[0]["direction"] == "real" and rows[0]["model"] == "fno"
    assert float(rows[0]["rmse"]) ** 2 == pytest.approx(float(rows[0]["mse"]), rel=1e-6)
    pgms = sorted(p.name for p in (tmp_path / "e").glob("*.pgm"))
    assert len(pgms) == 2 * 9
    shapes = {"axial": (8, 8), "coronal": (8, 4), "sagittal": (8, 4)}
    for name in pgms:
        plane = name.split("_")[-2]
        assert read_pgm(tmp_path / "e" / name).shape == shapes[plane]
    assert (tmp_path / "e" / "slices.csv").read_text().startswith("sample,plane,kind,row,col,value\n")


def test_evaluate_rejects_mismatched_grid(workspace, tmp_path):
    assert run("generate", "--n", 6, "--grid", "4x4x4", "--out", tmp_path / "d") == 0
    assert run("evaluate", "--checkpoint", workspace / "run_fno" / "best.ckpt", "--data", tmp_path / "d",
               "--out", tmp_path / "e") == 2


def test_perfect_predictor_error_image_is_black(rng):
    y = rng.standard_normal((3, 8, 8, 4))
    mask = np.ones((1, 8, 8, 4))
    imgs = slice_images(y, y.copy(), mask)
    for plane in ("axial", "coronal", "sagittal"):
        assert not imgs[(plane, "error")][1].any()
        np.testing.assert_array_equal(imgs[(plane, "target")][1], imgs[(plane, "prediction")][1])
    assert {k: v.shape for k, v in central_slices(y[0]).items()} == {"axial": (8, 8), "coronal": (8, 4),
                                                                     "sagittal": (8, 4)}


# -- predict --------------------------------------------------------------------------
@pytest.mark.parametrize("kind", ["fno", "deeponet"])
def test_predict_matches_in_process_evaluate(workspace, tmp_path, kind):
    ckpt = workspace / f"run_{kind}" / "best.ckpt"
    cfg = json.loads((workspace / f"run_{kind}" / "config.json").read_text())
    records = read_dataset(workspace / "data")
    _, _, test = split_dataset(records, tuple(cfg["ratios"]), cfg["split_seed"])
    sid = test[0].subject_id
    assert run("predict", "--checkpoint", ckpt, "--data", workspace / "data", "--sample", sid,
               "--physical-units", "--out", tmp_path / "p") == 0
    got = np.fromfile(tmp_path / "p" / f"{sid}_pred_real_scaled.f32", dtype="<f4").reshape(3, 8, 8, 4)
    stats = ScalingStats.load(workspace / f"run_{kind}" / "scaling")
    split = PreparedSplit(test, stats)
    _, pred = evaluate(load_checkpoint(ckpt), split, "real", batch_size=1)
    np.testing.assert_array_equal(got, pred[0])
    rec = read_sample(workspace / "data", sid)
    assert not got[:, rec.mask[0] == 0].any()
    phys = np.fromfile(tmp_path / "p" / f"{sid}_pred_real.f32", dtype="<f4").reshape(3, 8, 8, 4)
    assert not phys[:, rec.mask[0] == 0].any()


# -- benchmark and report ---------------------------------------------------------------
def test_benchmark_table(workspace, tmp_path):
    assert run("benchmark", "--data", workspace / "data", "--iters", 10, "--warmup", 1,
               "--out", tmp_path / "b") == 0
    with open(tmp_path / "b" / "benchmark.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["model"] for r in rows] == ["fno", "ffno", "mgfno", "deeponet"]
    for r in rows:
        rate = float(r["iters_per_second"])
        assert rate > 0 and np.isfinite(rate)
        assert int(r["parameters"]) == toy_config(r["model"], (8, 8, 4)).closed_form_param_count()
    assert run("benchmark", "--data", workspace / "data", "--models", "fno,bogus", "--out", tmp_path / "c") == 1


def test_report_merges_rows(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    header = "direction,model,mae,mse,rmse,accuracy\n"
    a.write_text(header + "real,deeponet,1,1,1,0.5\nreal,fno,2,4,2,0.1\n")
    b.write_text(header + "imag,ffno,3,9,3,0.2\n")
    assert run("report", a, b, "--out", tmp_path / "r") == 0
    lines = (tmp_path / "r" / "report.csv").read_text().splitlines()
    assert lines == [header.strip(), "imag,ffno,3,9,3,0.2", "real,fno,2,4,2,0.1", "real,deeponet,1,1,1,0.5"]
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    assert run("report", tmp_path / "bad.csv", "--out", tmp_path / "s") == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "noforge.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("noforge ")
