"""YAML run configuration: schema, defaults, validation with line numbers.

Every default matches the reference hyperparameters: learning rate 1e-2,
10,000 epochs, full batch, PDE weight 1.0, densification threshold 2.0,
split/clone threshold 2e-4, merging threshold 0.9, density control every
100 epochs, z-threshold 1e-4.

Schema (all sections optional)::

    seed: 0
    output_dir: runs/example
    z_threshold: 1.0e-4
    threads: null
    dataset:
      path: data.csv            # or `generate`, not both
      generate: {kind: rosenbrock, nx: 100, ny: 100}
      layout: {coords: [x, y], values: [u], time: null, velocity: [], pressure: null,
               mask: null, length: null, velocity_scale: null}
      downsample: {factor: 2, passes: 1}   # train on block averages
      subsample: [4, 2]                    # or on every k-th grid line per axis
    pde: {kind: none, re: null, nu: null, spatial_dims: 2}
    init: {kind: grid, count: 400, counts: null, stride: 10}
    train: {learning_rate: 1.0e-2, epochs: 10000, batch_size: 0, lambda: 1.0,
            freeze_positions: false, density_control: true, normalized: true,
            time_budget: null}
    density: {densification_threshold: 2.0, split_clone_threshold: 2.0e-4,
              merging_threshold: 0.9, interval: 100}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .data import Layout
from .density import DensifyConfig
from .field import DEFAULT_Z_THRESHOLD, InitSpec
from .physics import PdeSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "config"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


_NUM = (int, float)

# key -> (accepted types, default); None in the types tuple means nullable
SCHEMA = {
    "seed": ((int,), 0),
    "output_dir": ((str, None), None),
    "z_threshold": (_NUM, DEFAULT_Z_THRESHOLD),
    "threads": ((int, None), None),
    "dataset": {
        "path": ((str, None), None),
        "generate": ((dict, None), None),
        "layout": {
            "coords": ((list, None), None),
            "values": ((list, None), None),
            "time": ((str, None), None),
            "velocity": ((list,), []),
            "pressure": ((str, None), None),
            "mask": ((list, None), None),
            "length": ((int, float, None), None),
            "velocity_scale": ((int, float, None), None),
        },
        "downsample": ((dict, None), None),
        "subsample": ((list, None), None),
    },
    "pde": {
        "kind": ((str,), "none"),
        "re": ((int, float, None), None),
        "nu": ((int, float, None), None),
        "spatial_dims": ((int,), 2),
    },
    "init": {
        "kind": ((str,), "grid"),
        "count": ((int,), 400),
        "counts": ((list, None), None),
        "stride": ((int,), 10),
    },
    "train": {
        "learning_rate": (_NUM, 1e-2),
        "epochs": ((int,), 10_000),
        "batch_size": ((int,), 0),
        "lambda": (_NUM, 1.0),
        "freeze_positions": ((bool,), False),
        "density_control": ((bool,), True),
        "normalized": ((bool,), True),
        "time_budget": ((int, float, None), None),
    },
    "density": {
        "densification_threshold": (_NUM, 2.0),
        "split_clone_threshold": (_NUM, 2.0e-4),
        "merging_threshold": (_NUM, 0.9),
        "interval": ((int,), 100),
    },
}

GENERATORS = {
    "rosenbrock": {"nx", "ny", "lo", "hi"},
    "taylor_green": {"nx", "ny", "nt", "t_max", "nu"},
    "burgers": {"nx", "nt", "nu", "t_max", "tolerance"},
}


def defaults(schema=SCHEMA) -> dict:
    out = {}
    for key, spec in schema.items():
        out[key] = defaults(spec) if isinstance(spec, dict) else copy.deepcopy(spec[1])
    return out


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers using the YAML node tree."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if root is not None:
        walk(root, ())
    return lines


def _typecheck(value, types) -> bool:
    if value is None:
        return None in types
    if isinstance(value, bool):
        return bool in types
    return any(t is not None and isinstance(value, t) for t in types)


def _merge(schema, raw, path, lines, source) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{'.'.join(path) or 'top level'} must be a mapping", lines.get(path), source)
    out = {}
    for key in raw:
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(f"unknown key {'.'.join(path + (key,))!r} (expected one of: {known})",
                              lines.get(path + (key,)), source)
    for key, spec in schema.items():
        sub = path + (key,)
        if isinstance(spec, dict):
            out[key] = _merge(spec, raw.get(key) or {}, sub, lines, source)
            continue
        types, default = spec
        value = raw.get(key, copy.deepcopy(default))
        if not _typecheck(value, types):
            names = "/".join("null" if t is None else t.__name__ for t in types)
            raise ConfigError(f"{'.'.join(sub)} must be {names}, got {value!r}", lines.get(sub), source)
        out[key] = float(value) if types is _NUM else value
    return out


@dataclass
class RunConfig:
    """Validated configuration for one run."""

    raw: dict
    pde: PdeSpec | None
    init: InitSpec
    train: TrainConfig
    layout: Layout
    z_threshold: float
    seed: int
    output_dir: str | None
    threads: int | None

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    def effective(self) -> dict:
        """The fully defaulted configuration, suitable for re-loading."""
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.effective(), sort_keys=False)


def parse_config(text: str = "", overrides: dict | None = None, source: str = "config") -> RunConfig:
    """Validate YAML text (plus dotted-path ``overrides``) into a RunConfig."""
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
        lines = _line_index(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    for dotted, value in (overrides or {}).items():
        node = raw
        *head, last = dotted.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = value
    merged = _merge(SCHEMA, raw, (), lines, source)
    return _build(merged, lines, source)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, overrides, str(path))


def _build(cfg: dict, lines, source) -> RunConfig:
    def fail(msg, *path):
        if len(path) == 1 and isinstance(cfg.get(path[0]), dict):
            # point at the offending key when the message names one
            named = [k for k in cfg[path[0]] if k in msg and (path[0], k) in lines]
            if named:
                path = (path[0], named[0])
        raise ConfigError(msg, lines.get(tuple(path)), source)

    ds = cfg["dataset"]
    if ds["path"] is not None and ds["generate"] is not None:
        fail("give either dataset.path or dataset.generate, not both", "dataset", "generate")
    if ds["generate"] is not None:
        gen = ds["generate"]
        kind = gen.get("kind")
        if kind not in GENERATORS:
            fail(f"dataset.generate.kind must be one of {sorted(GENERATORS)}", "dataset", "generate", "kind")
        extra = set(gen) - GENERATORS[kind] - {"kind"}
        if extra:
            fail(f"unknown {kind} parameter(s): {', '.join(sorted(extra))}", "dataset", "generate")
    if ds["downsample"] is not None:
        extra = set(ds["downsample"]) - {"factor", "passes"}
        if extra:
            fail(f"unknown downsample key(s): {', '.join(sorted(extra))}", "dataset", "downsample")

    lay = ds["layout"]
    layout = Layout(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in lay.items()})

    p = cfg["pde"]
    try:
        if p["kind"] == "none":
            pde = PdeSpec.none()
        elif p["kind"] == "steady_ns2d":
            pde = PdeSpec.steady_ns2d(p["re"]) if p["re"] is not None else None
        elif p["kind"] == "unsteady_ns":
            pde = PdeSpec.unsteady_ns(p["re"], p["spatial_dims"]) if p["re"] is not None else None
        elif p["kind"] == "burgers":
            pde = PdeSpec.burgers(p["nu"]) if p["nu"] is not None else None
        else:
            pde = PdeSpec(p["kind"])
    except ValueError as exc:
        fail(str(exc), "pde", "kind")

    i = cfg["init"]
    t = cfg["train"]
    d = cfg["density"]
    try:
        init = InitSpec(i["kind"], i["count"], tuple(i["counts"]) if i["counts"] else None, i["stride"])
    except ValueError as exc:
        fail(str(exc), "init")
    for key in ("densification_threshold", "split_clone_threshold", "interval"):
        if not d[key] > 0:
            fail(f"density.{key} must be positive", "density", key)
    if not 0 < d["merging_threshold"] <= 1:
        fail("density.merging_threshold must lie in (0, 1]", "density", "merging_threshold")
    try:
        dens = DensifyConfig(d["densification_threshold"], d["split_clone_threshold"],
                             d["merging_threshold"], d["interval"])
    except ValueError as exc:
        fail(str(exc), "density")
    try:
        train = TrainConfig(
            learning_rate=t["learning_rate"], epochs=t["epochs"], batch_size=t["batch_size"],
            lam=t["lambda"], densify=dens, seed=cfg["seed"], freeze_positions=t["freeze_positions"],
            density_control=t["density_control"], normalized=t["normalized"],
            time_budget=t["time_budget"],
        )
    except ValueError as exc:
        fail(str(exc), "train")
    if not cfg["z_threshold"] >= 0:
        fail("z_threshold must be >= 0", "z_threshold")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        fail("threads must be >= 1", "threads")
    return RunConfig(cfg, pde, init, train, layout, cfg["z_threshold"], cfg["seed"],
                     cfg["output_dir"], cfg["threads"])


def resolve_pde(cfg: RunConfig, physics: dict) -> PdeSpec:
    """The configured PDE, filling Re or nu from dataset metadata when omitted."""
    if cfg.pde is not None:
        return cfg.pde
    p = cfg.raw["pde"]
    kind = p["kind"]
    if kind == "burgers":
        if "nu" not in physics:
            raise ConfigError("pde.nu missing and the dataset carries no viscosity")
        return PdeSpec.burgers(physics["nu"])
    if "re" not in physics:
        raise ConfigError("pde.re missing and the dataset carries no Reynolds number")
    if kind == "steady_ns2d":
        return PdeSpec.steady_ns2d(physics["re"])
    return PdeSpec.unsteady_ns(physics["re"], p["spatial_dims"])
