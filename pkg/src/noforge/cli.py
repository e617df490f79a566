"""Command-line entry point: generate, train, evaluate, benchmark, predict, report.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure. Every command writes its fully resolved configuration
as ``config.json`` next to its outputs and refuses to write into a
non-empty output location unless ``--force`` is given.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (PreparedSplit, ScalingStats, generate_synthetic_dataset, read_dataset, read_manifest,
                   read_sample, split_dataset, unscale_displacement, write_dataset)
from .data.container import write_tensor_file
from .data.synthetic import DEFAULT_FOV
from .errors import (CorruptCheckpoint, CorruptData, EmptyMask, IncompatibleCheckpoint, InvalidConfig,
                     InvalidInput, InvalidShape, IOFailure, NonFiniteGradient, NonFiniteLoss, ShapeMismatch, UnknownSample)
from .imaging import write_slice_set
from .models import MODEL_KINDS, build_model, config_from_dict, load_checkpoint, full_config, toy_config
from .training import TrainConfig, evaluate, throughput_benchmark, train
from .training.metrics import predict_split

log = logging.getLogger("noforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (CorruptData, CorruptCheckpoint, IncompatibleCheckpoint, UnknownSample, IOFailure,
               InvalidInput, EmptyMask, ShapeMismatch)

METRICS_HEADER = ["direction", "model", "mae", "mse", "rmse", "accuracy"]
BENCH_HEADER = ["model", "iters_per_second", "parameters"]

# defaults for every command; a --config JSON file may override them and flags override both
DEFAULTS = {
    "generate": {"n": 64, "grid": "16x16x8", "seed": 0, "fov": DEFAULT_FOV},
    "train": {"target": "real", "epochs": 100, "seed": 0, "batch_size": 4, "lr": 1e-3,
              "weight_decay": 1e-5, "plateau_factor": 0.5, "patience": 10, "min_lr": 0.0,
              "grad_clip": None, "preset": "toy", "model_config": None, "split_seed": 0,
              "ratios": [0.7, 0.1, 0.2]},
    "evaluate": {"split": "test", "n_images": 2, "physical_units": False, "batch_size": 1},
    "benchmark": {"models": ",".join(MODEL_KINDS), "iters": 10, "warmup": 2, "batch_size": 1,
                  "preset": "toy", "seed": 0},
    "predict": {"physical_units": False},
    "report": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"grid must look like WxHxD, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"grid must look like WxHxD, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"noforge {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON file of option values (flags take precedence)")
        sp.add_argument("--force", action="store_true", help="allow writing into a non-empty output")
        if out_required:
            sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--grid", help="WxHxD, e.g. 16x16x8")
    g.add_argument("--seed", type=int)
    g.add_argument("--fov", type=float, help="field of view along the longest axis, metres")

    t = sub.add_parser("train", help="train one model on one displacement target")
    common(t)
    t.add_argument("--model", choices=MODEL_KINDS)
    t.add_argument("--data")
    t.add_argument("--target", choices=("real", "imag"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float, dest="weight_decay")
    t.add_argument("--plateau-factor", type=float, dest="plateau_factor")
    t.add_argument("--patience", type=int)
    t.add_argument("--min-lr", type=float, dest="min_lr")
    t.add_argument("--grad-clip", type=float, dest="grad_clip", help="global-norm gradient clip (off by default)")
    t.add_argument("--preset", choices=("toy", "full"), help="architecture preset")
    t.add_argument("--model-config", dest="model_config", help="JSON file overriding architecture fields")
    t.add_argument("--split-seed", type=int, dest="split_seed")

    e = sub.add_parser("evaluate", help="metrics CSV and slice images for a split")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--split", choices=("train", "val", "test"))
    e.add_argument("--n-images", type=int, dest="n_images")
    e.add_argument("--physical-units", action="store_const", const=True, dest="physical_units")
    e.add_argument("--batch-size", type=int, dest="batch_size")

    b = sub.add_parser("benchmark", help="forward-pass throughput and parameter counts")
    common(b)
    b.add_argument("--data")
    b.add_argument("--models", help="comma-separated model kinds")
    b.add_argument("--iters", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--batch-size", type=int, dest="batch_size")
    b.add_argument("--preset", choices=("toy", "full"))
    b.add_argument("--seed", type=int)

    r = sub.add_parser("predict", help="predict the displacement of one sample")
    common(r)
    r.add_argument("--checkpoint")
    r.add_argument("--data")
    r.add_argument("--sample")
    r.add_argument("--physical-units", action="store_const", const=True, dest="physical_units")

    rp = sub.add_parser("report", help="merge metrics CSVs into one comparison table")
    common(rp)
    rp.add_argument("inputs", nargs="*", help="metrics CSV files")
    return p


def resolve(args) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if k in ("config", "command", "verbose") or v is None:
            continue
        if k == "inputs" and not v:
            continue
        if k == "force" and not v and "force" in cfg:
            continue
        cfg[k] = v
    cfg["command"] = args.command
    cfg.setdefault("force", False)
    return cfg


def require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError(f"{cfg['command']}: missing required option(s): " +
                         ", ".join("--" + k.replace("_", "-") for k in missing))


def prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {out}: {exc}") from exc
    return out


def audit(cfg) -> dict:
    """Resolved options as recorded next to outputs (``--force`` is not a setting)."""
    return {k: v for k, v in cfg.items() if k != "force"}


def write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def fmt(x: float) -> str:
    return f"{x:.9g}"


# -- model configuration ---------------------------------------------------------
def model_config_for(kind: str, preset: str, grid, overrides=None):
    if preset == "toy":
        cfg = toy_config(kind, grid)
    else:
        cfg = full_config(kind)
        if kind == "mgfno":
            cfg = config_from_dict(kind, {**cfg.to_dict(), "grid": list(grid)})
        else:
            cfg.grid = tuple(grid)
    if overrides:
        merged = {**cfg.to_dict(), **overrides}
        if kind in ("fno", "ffno", "deeponet"):
            merged.setdefault("grid", list(grid))
        cfg = config_from_dict(kind, merged)
    if tuple(cfg.grid) != tuple(grid):
        raise InvalidConfig(f"model grid {cfg.grid} does not match dataset grid {tuple(grid)}")
    return cfg


def run_splits(records, cfg):
    return split_dataset(records, tuple(cfg["ratios"]), cfg["split_seed"])


def _load_run(checkpoint):
    """Model, run configuration and scaling stats stored next to a checkpoint."""
    ckpt = Path(checkpoint)
    model = load_checkpoint(ckpt)
    run_cfg_path = ckpt.parent / "config.json"
    try:
        run_cfg = json.loads(run_cfg_path.read_text())
    except (OSError, ValueError) as exc:
        raise CorruptData(f"run configuration {run_cfg_path} is unreadable: {exc}") from None
    stats = ScalingStats.load(ckpt.parent / "scaling")
    return model, run_cfg, stats


def _check_grid(model, grid):
    if tuple(model.config.grid) != tuple(grid):
        raise IncompatibleCheckpoint(f"checkpoint grid {tuple(model.config.grid)} != dataset grid {tuple(grid)}")


# -- commands --------------------------------------------------------------------
def cmd_generate(cfg) -> int:
    require(cfg, "out")
    grid = parse_grid(cfg["grid"])
    out = prepare_out(cfg["out"], cfg["force"])
    records = generate_synthetic_dataset(int(cfg["n"]), grid, int(cfg["seed"]), float(cfg["fov"]))
    write_dataset(out, records, grid)
    write_json(out / "config.json", {**audit(cfg), "grid": list(grid)})
    print(f"wrote {len(records)} samples on grid {'x'.join(map(str, grid))} to {out}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    require(cfg, "model", "data", "out")
    records = read_dataset(cfg["data"])
    grid = tuple(read_manifest(cfg["data"])["grid"])
    overrides = None
    if cfg.get("model_config"):
        mc = cfg["model_config"]
        if isinstance(mc, dict):
            overrides = mc
        else:
            try:
                overrides = json.loads(Path(mc).read_text())
            except (OSError, ValueError) as exc:
                raise UsageError(f"cannot read model config {mc}: {exc}") from None
    mcfg = model_config_for(cfg["model"], cfg["preset"], grid, overrides)
    tcfg = TrainConfig(epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]), seed=int(cfg["seed"]),
                       target=cfg["target"], lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
                       plateau_factor=float(cfg["plateau_factor"]), plateau_patience=int(cfg["patience"]),
                       min_lr=float(cfg["min_lr"]),
                       grad_clip=None if cfg["grad_clip"] is None else float(cfg["grad_clip"]))
    out = prepare_out(cfg["out"], cfg["force"])
    tr, va, te = run_splits(records, cfg)
    stats = ScalingStats.from_records(tr)
    stats.save(out / "scaling")
    model = build_model(cfg["model"], mcfg, seed=tcfg.seed)
    resolved = {**audit(cfg), "model_config": mcfg.to_dict(), "train_config": tcfg.to_dict(),
                "dataset_grid": list(grid), "split_sizes": [len(tr), len(va), len(te)],
                "param_count": model.param_count()}
    write_json(out / "config.json", resolved)
    result = train(model, PreparedSplit(tr, stats), PreparedSplit(va, stats), tcfg, out)
    print(f"{cfg['model']} ({cfg['target']}): best val masked-MSE {fmt(result.best_val)} "
          f"at epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    require(cfg, "checkpoint", "data", "out")
    model, run_cfg, stats = _load_run(cfg["checkpoint"])
    records = read_dataset(cfg["data"])
    _check_grid(model, read_manifest(cfg["data"])["grid"])
    splits = dict(zip(("train", "val", "test"), run_splits(records, run_cfg)))
    recs = splits[cfg["split"]]
    target = run_cfg.get("target", "real")
    out = prepare_out(cfg["out"], cfg["force"])
    prepared = PreparedSplit(recs, stats)
    row, pred = evaluate(model, prepared, target, int(cfg["batch_size"]), bool(cfg["physical_units"]),
                         split_name=cfg["split"])
    write_csv(out / "metrics.csv", METRICS_HEADER,
              [[target, model.kind, fmt(row.mae), fmt(row.mse), fmt(row.rmse), fmt(row.accuracy)]])
    csv_rows = []
    for i in range(min(int(cfg["n_images"]), len(recs))):
        y = unscale_displacement(prepared.targets[target][i], stats)
        p = unscale_displacement(pred[i], stats)
        write_slice_set(out, prepared.ids[i], y, p, prepared.mask[i], csv_rows)
    try:
        (out / "slices.csv").write_text("\n".join(["sample,plane,kind,row,col,value"] + csv_rows) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write slices.csv: {exc}") from exc
    write_json(out / "config.json", {**audit(cfg), "target": target, "model": model.kind,
                                     "metric_space": "physical" if cfg["physical_units"] else "scaled",
                                     "accuracy_definition": "accuracy (rel-L1)"})
    print(f"{model.kind} {target} {cfg['split']}: mae {fmt(row.mae)} mse {fmt(row.mse)} "
          f"rmse {fmt(row.rmse)} accuracy (rel-L1) {fmt(row.accuracy)}")
    return EXIT_OK


def cmd_benchmark(cfg) -> int:
    require(cfg, "data", "out")
    kinds = [k.strip() for k in str(cfg["models"]).split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if not kinds or bad:
        raise UsageError(f"--models must list kinds from {MODEL_KINDS}; got {cfg['models']!r}")
    if int(cfg["iters"]) < 10:
        raise UsageError("--iters must be >= 10")
    records = read_dataset(cfg["data"])
    grid = tuple(read_manifest(cfg["data"])["grid"])
    n = max(1, min(int(cfg["batch_size"]), len(records)))
    if n < 2 and "deeponet" in kinds:
        n = min(2, len(records))
    stats = ScalingStats.from_records(records)
    batch = PreparedSplit(records[:n], stats).batch(list(range(n)))
    out = prepare_out(cfg["out"], cfg["force"])
    rows, detail = [], []
    for kind in kinds:
        model = build_model(kind, model_config_for(kind, cfg["preset"], grid), seed=int(cfg["seed"]))
        res = throughput_benchmark(model, batch, int(cfg["warmup"]), int(cfg["iters"]))
        rows.append([kind, fmt(res.iters_per_second), str(res.parameters)])
        detail.append([kind, fmt(res.iters_per_second), fmt(res.std), str(res.parameters), str(n)])
        print(f"{kind:9s} {res.iters_per_second:10.3f} it/s (std {res.std:.3f})  {res.parameters} params")
    write_csv(out / "benchmark.csv", BENCH_HEADER, rows)
    write_csv(out / "benchmark_detail.csv", ["model", "iters_per_second", "std", "parameters", "batch"], detail)
    write_json(out / "config.json", {**audit(cfg), "dataset_grid": list(grid), "batch": n})
    return EXIT_OK


def cmd_predict(cfg) -> int:
    require(cfg, "checkpoint", "data", "sample", "out")
    model, run_cfg, stats = _load_run(cfg["checkpoint"])
    rec = read_sample(cfg["data"], cfg["sample"])
    _check_grid(model, rec.grid)
    target = run_cfg.get("target", "real")
    out = prepare_out(cfg["out"], cfg["force"])
    split = PreparedSplit([rec], stats)
    pred = predict_split(model, split, target, batch_size=1)[0]
    files = {"scaled": f"{rec.subject_id}_pred_{target}_scaled.f32"}
    write_tensor_file(out / files["scaled"], pred)
    if cfg["physical_units"]:
        phys = unscale_displacement(pred, stats) * split.mask[0]
        files["physical"] = f"{rec.subject_id}_pred_{target}.f32"
        write_tensor_file(out / files["physical"], phys)
    write_json(out / "config.json", {**audit(cfg), "target": target, "model": model.kind,
                                     "shape": [3] + list(rec.grid), "files": files})
    print(f"wrote prediction for {rec.subject_id} to {out}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    require(cfg, "out")
    inputs = cfg.get("inputs") or []
    if not inputs:
        raise UsageError("report needs at least one metrics CSV")
    rows = {}
    for path in inputs:
        try:
            with open(path, newline="") as f:
                reader = csv.DictReader(f)
                if reader.fieldnames != METRICS_HEADER:
                    raise CorruptData(f"{path}: expected columns {METRICS_HEADER}")
                for r in reader:
                    rows[(r["direction"], r["model"])] = [r[k] for k in METRICS_HEADER]
        except OSError as exc:
            raise IOFailure(f"cannot read {path}: {exc}") from exc
    out = prepare_out(cfg["out"], cfg["force"])
    order = {k: i for i, k in enumerate(MODEL_KINDS)}
    keys = sorted(rows, key=lambda k: (k[0], order.get(k[1], len(order)), k[1]))
    write_csv(out / "report.csv", METRICS_HEADER, [rows[k] for k in keys])
    write_json(out / "config.json", audit(cfg))
    print(f"merged {len(keys)} rows into {out / 'report.csv'}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "benchmark": cmd_benchmark, "predict": cmd_predict, "report": cmd_report}


@contextlib.contextmanager
def thread_limit():
    """Cap BLAS threads with ``NOFORGE_THREADS`` when set."""
    value = os.environ.get("NOFORGE_THREADS")
    if not value:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, int(value))):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        with thread_limit():
            return COMMANDS[args.command](cfg)
    except (UsageError, InvalidConfig, InvalidShape) as exc:
        print(f"noforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteGradient, NonFiniteLoss) as exc:
        print(f"noforge {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"noforge {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
