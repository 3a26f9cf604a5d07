"""Command-line entry point: ``splatfield <command> ...``.

Every command that produces files builds them in a temporary sibling
directory (or temporary file) and renames on success, so a failed run
leaves nothing behind. Errors print one ``error: ...`` line to stderr and
exit with status 2 (bad input) or 1 (runtime failure).

Environment overrides: ``SPLATFIELD_OUTPUT_DIR`` (default run directory)
and ``SPLATFIELD_THREADS`` (thread cap for numerical libraries).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager, nullcontext

import numpy as np

from . import __version__
from .burgers import OracleMismatch, generate_burgers
from .config import ConfigError, RunConfig, load_config, parse_config, resolve_pde
from .data import (
    DatasetError, FieldDataset, generate_rosenbrock, generate_taylor_green, grid_dataset,
    grid_subsample, load_dataset, metrics_record, save_dataset, spatial_average,
)
from .field import FieldError, init_from_grid, load_field, save_field
from .physics import LayoutError, NonFiniteLoss
from .splatting import predict, predict_unnormalized
from .theory import RateExperiment, run_rate_experiment
from .training import train

log = logging.getLogger("splatfield")

INPUT_ERRORS = (ConfigError, DatasetError, FieldError, LayoutError, FileNotFoundError, ValueError)


# -- run directories ------------------------------------------------------------

@contextmanager
def run_directory(target: str):
    """Yield a temporary directory that replaces ``target`` on success."""
    target = os.path.abspath(target)
    parent = os.path.dirname(target)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-" + os.path.basename(target) + "-", dir=parent)
    handler = logging.FileHandler(os.path.join(tmp, "run.log"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    level = root.level
    root.addHandler(handler)
    root.setLevel(min(level, logging.INFO) if level else logging.INFO)

    def detach():
        root.removeHandler(handler)
        root.setLevel(level)
        handler.close()

    try:
        yield tmp
    except BaseException:
        detach()
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    detach()
    if os.path.exists(target):
        old = target + ".old"
        shutil.rmtree(old, ignore_errors=True)
        os.replace(target, old)
        os.replace(tmp, target)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, target)


def _write_json(path, obj):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _output_dir(args, cfg: RunConfig | None = None, default: str = "runs/latest") -> str:
    return (getattr(args, "out_dir", None) or (cfg.output_dir if cfg else None)
            or os.environ.get("SPLATFIELD_OUTPUT_DIR") or default)


def _thread_limit(n):
    if n is None:
        env = os.environ.get("SPLATFIELD_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"SPLATFIELD_THREADS must be an integer, got {env!r}") from None
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# -- datasets -------------------------------------------------------------------

def generate(kind: str, params: dict) -> FieldDataset:
    params = dict(params)
    params.pop("kind", None)
    if kind == "rosenbrock":
        return generate_rosenbrock(**params)
    if kind in ("taylor_green", "taylor-green"):
        return generate_taylor_green(**params)
    if kind == "burgers":
        return generate_burgers(**params)
    raise ConfigError(f"unknown generator {kind!r}")


def build_datasets(cfg: RunConfig) -> tuple[FieldDataset, FieldDataset]:
    """(training set, reference set). The reference is the dataset before
    any downsampling, so it doubles as the super-resolution target."""
    ds_cfg = cfg.dataset
    if ds_cfg["generate"] is not None:
        full = generate(ds_cfg["generate"]["kind"], ds_cfg["generate"])
    elif ds_cfg["path"] is not None:
        full = load_dataset(ds_cfg["path"], cfg.layout)
    else:
        raise ConfigError("dataset.path or dataset.generate is required")
    train_ds = full
    if ds_cfg["downsample"] is not None:
        d = ds_cfg["downsample"]
        train_ds = spatial_average(train_ds, int(d.get("factor", 2)), int(d.get("passes", 1)))
    if ds_cfg["subsample"] is not None:
        train_ds = grid_subsample(train_ds, ds_cfg["subsample"])
    return train_ds, full


def _parse_grid(text: str):
    """'lo:hi:n,lo:hi:n' -> list of 1D axes."""
    axes = []
    for part in text.split(","):
        try:
            lo, hi, n = part.split(":")
            axes.append(np.linspace(float(lo), float(hi), int(n)))
        except ValueError:
            raise ConfigError(f"bad grid axis {part!r}; expected lo:hi:n") from None
    return axes


# -- commands -------------------------------------------------------------------

def run_training(cfg: RunConfig, out_dir: str) -> dict:
    """Generate/load data, train, and write the full run directory."""
    train_ds, full = build_datasets(cfg)
    pde = resolve_pde(cfg, train_ds.physics)
    pde.check(train_ds.q, train_ds.p)
    field0 = init_from_grid(train_ds, cfg.init, cfg.z_threshold)
    with run_directory(out_dir) as tmp:
        with open(os.path.join(tmp, "config.yaml"), "w") as fh:
            fh.write(cfg.dump())
        log.info("training on %d points with %d initial Gaussians (pde=%s)", train_ds.K, field0.n, pde.kind)
        start = time.perf_counter()
        field, report = train(train_ds, field0, pde, cfg.train)
        report.checkpoint = "checkpoint.txt"
        save_field(field, os.path.join(tmp, "checkpoint.txt"))
        report.write(tmp)
        predictor = predict if cfg.train.normalized else predict_unnormalized
        metrics = {
            "train": metrics_record(predictor(field, train_ds.coords), train_ds.values, train_ds.mask),
            "reference": metrics_record(predictor(field, full.coords), full.values, full.mask),
            "final_loss": report.summary(),
            "n_gaussians": field.n,
            "seconds": time.perf_counter() - start,
        }
        _write_json(os.path.join(tmp, "metrics.json"), metrics)
        log.info("done: reference relative L2 %.6g", metrics["reference"]["relative_l2"])
    return metrics


def _overrides(args) -> dict:
    table = {
        "epochs": "train.epochs", "learning_rate": "train.learning_rate", "lam": "train.lambda",
        "batch_size": "train.batch_size", "seed": "seed", "z_threshold": "z_threshold",
        "densification_threshold": "density.densification_threshold",
        "split_clone_threshold": "density.split_clone_threshold",
        "merging_threshold": "density.merging_threshold",
        "densification_interval": "density.interval", "gaussians": "init.count",
        "threads": "threads", "time_budget": "train.time_budget",
    }
    out = {dotted: getattr(args, name) for name, dotted in table.items()
           if getattr(args, name, None) is not None}
    if getattr(args, "freeze_positions", False):
        out["train.freeze_positions"] = True
    if getattr(args, "no_density_control", False):
        out["train.density_control"] = False
    if getattr(args, "unnormalized", False):
        out["train.normalized"] = False
    return out


def cmd_train(args) -> int:
    overrides = _overrides(args)
    cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
    with _thread_limit(cfg.threads):
        metrics = run_training(cfg, _output_dir(args, cfg))
    print(json.dumps({"reference_relative_l2": metrics["reference"]["relative_l2"],
                      "n_gaussians": metrics["n_gaussians"]}))
    return 0


def cmd_fit_function(args) -> int:
    overrides = {
        "dataset.generate": {"kind": "rosenbrock", "nx": args.grid, "ny": args.grid},
        "train.freeze_positions": not args.move_positions,
        "train.density_control": args.density_control,
    }
    overrides.update({k: v for k, v in _overrides(args).items()
                      if k not in ("train.freeze_positions", "train.density_control")})
    cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
    with _thread_limit(cfg.threads):
        metrics = run_training(cfg, _output_dir(args, cfg, "runs/fit-function"))
    print(json.dumps({"relative_l2": metrics["reference"]["relative_l2"],
                      "n_gaussians": metrics["n_gaussians"]}))
    return 0


def cmd_predict(args) -> int:
    field = load_field(args.checkpoint)
    if args.coords:
        query = load_dataset(args.coords)
        coords = query.coords
        grid_shape, names, time_axis = query.grid_shape, query.coord_names, query.time_axis
    elif args.grid:
        axes = _parse_grid(args.grid)
        grid = grid_dataset(axes, lambda c: np.zeros((c.shape[0], 1)))
        coords, grid_shape, names, time_axis = grid.coords, grid.grid_shape, None, None
    else:
        raise ConfigError("predict needs --coords FILE or --grid lo:hi:n,...")
    if coords.shape[1] != field.q:
        raise LayoutError(f"query points have {coords.shape[1]} coordinates, field has q={field.q}")
    values = (predict_unnormalized if args.unnormalized else predict)(field, coords)
    out = FieldDataset(coords, values, grid_shape=grid_shape, time_axis=time_axis,
                       coord_names=names, value_names=None)
    save_dataset(out, args.out)
    print(json.dumps({"points": int(coords.shape[0]), "out": args.out}))
    return 0


def cmd_eval(args) -> int:
    field = load_field(args.checkpoint)
    truth = load_dataset(args.truth)
    if truth.q != field.q or truth.p != field.p:
        raise LayoutError(f"truth has (q, p)=({truth.q}, {truth.p}), field has ({field.q}, {field.p})")
    pred = (predict_unnormalized if args.unnormalized else predict)(field, truth.coords)
    metrics = metrics_record(pred, truth.values, truth.mask)
    if args.out:
        _write_json(args.out, metrics)
    print(json.dumps(metrics))
    return 0


def cmd_downsample(args) -> int:
    ds = load_dataset(args.input)
    out = spatial_average(ds, args.factor, args.passes)
    save_dataset(out, args.out)
    print(json.dumps({"points_in": ds.K, "points_out": out.K, "out": args.out}))
    return 0


def cmd_generate(args) -> int:
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"bad --param {item!r}; expected key=value")
        params[key] = float(value) if any(c in value for c in ".e") else int(value)
    ds = generate(args.kind, params)
    save_dataset(ds, args.out)
    print(json.dumps({"points": ds.K, "out": args.out}))
    return 0


def cmd_rate_check(args) -> int:
    kw = {}
    if args.config:
        import yaml
        with open(args.config) as fh:
            kw = yaml.safe_load(fh) or {}
        if not isinstance(kw, dict):
            raise ConfigError("rate-check config must be a mapping", 1, args.config)
        if "n_values" in kw:
            kw["n_values"] = tuple(int(n) for n in kw["n_values"])
        unknown = set(kw) - set(RateExperiment.__dataclass_fields__) - {"target"}
        if unknown or "target" in kw:
            raise ConfigError(f"unknown rate-check key(s): {', '.join(sorted(unknown | ({'target'} & set(kw))))}")
    for name in ("trials", "seed", "c", "noise"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    exp = RateExperiment(**kw)
    with _thread_limit(args.threads):
        result = run_rate_experiment(exp)
    out_dir = _output_dir(args, None, "runs/rate-check")
    payload = result.to_dict() | {"expected_slope": exp.exponent}
    with run_directory(out_dir) as tmp:
        with open(os.path.join(tmp, "rate.csv"), "w") as fh:
            fh.write("N,mean_rmse,std_rmse\n")
            for row in result.rows():
                fh.write(f"{row['N']},{row['mean_rmse']!r},{row['std_rmse']!r}\n")
        _write_json(os.path.join(tmp, "rate.json"), payload)
    print(json.dumps({"slope": result.slope, "slope_stderr": result.slope_stderr,
                      "exact_fit": result.exact_fit}))
    return 0


# -- parser ---------------------------------------------------------------------

def _training_flags(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out-dir", help="run directory (default: config output_dir, "
                   "$SPLATFIELD_OUTPUT_DIR, then runs/...)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lambda", dest="lam", type=float, help="PDE loss weight")
    p.add_argument("--batch-size", type=int, help="0 means full batch")
    p.add_argument("--seed", type=int)
    p.add_argument("--gaussians", type=int, help="initial Gaussian count")
    p.add_argument("--z-threshold", type=float)
    p.add_argument("--densification-threshold", type=float)
    p.add_argument("--split-clone-threshold", type=float)
    p.add_argument("--merging-threshold", type=float)
    p.add_argument("--densification-interval", type=int)
    p.add_argument("--time-budget", type=float, help="stop after this many seconds")
    p.add_argument("--threads", type=int)
    p.add_argument("--unnormalized", action="store_true", help="use the unnormalized sum")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatfield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a field from a config file")
    _training_flags(p)
    p.add_argument("--freeze-positions", action="store_true")
    p.add_argument("--no-density-control", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-function", help="fit the Rosenbrock function (ablation defaults)")
    _training_flags(p)
    p.add_argument("--grid", type=int, default=70, help="data points per axis")
    p.add_argument("--move-positions", action="store_true", help="also train Gaussian centres")
    p.add_argument("--density-control", action="store_true", help="enable split/clone/merge")
    p.set_defaults(func=cmd_fit_function)

    p = sub.add_parser("predict", help="evaluate a checkpoint on query points")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--coords", help="dataset file whose coordinates are queried")
    p.add_argument("--grid", help="tensor grid lo:hi:n,lo:hi:n,... (write --grid=-1:1:50,... when lo is negative)")
    p.add_argument("--out", required=True)
    p.add_argument("--unnormalized", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="compare a checkpoint with a truth dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="write metrics JSON here")
    p.add_argument("--unnormalized", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("downsample", help="spatially average a gridded dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("kind", choices=["rosenbrock", "taylor-green", "burgers"])
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("rate-check", help="empirical convergence-rate experiment")
    p.add_argument("--config", help="YAML with RateExperiment fields")
    p.add_argument("--out-dir")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--c", type=float, help="bandwidth constant")
    p.add_argument("--noise", type=float)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_rate_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OracleMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
