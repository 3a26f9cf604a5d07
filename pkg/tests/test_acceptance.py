"""End-to-end acceptance experiments, one test per criterion.

Each test prints an ``ACCEPTANCE <n> PASS|FAIL`` line (repeated in the
terminal summary) and fails when its criterion is not met.
"""

import dataclasses
import functools
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from splatfield.burgers import generate_burgers
from splatfield.calculus import loss_param_gradient, spatial_jacobian, spatial_second_diag
from splatfield.data import (
    generate_rosenbrock, generate_taylor_green, grid_subsample, relative_l2, spatial_average,
)
from splatfield.field import apply, flatten, init_from_grid
from splatfield.physics import NonFiniteLoss, PdeSpec, total_loss
from splatfield.splatting import predict, predict_unnormalized
from splatfield.theory import RateExperiment, run_rate_experiment
from splatfield.training import TrainConfig, train

from conftest import random_field

pytestmark = pytest.mark.slow

HERE = os.path.dirname(os.path.abspath(__file__))


# -- 1. Rosenbrock ladder ---------------------------------------------------------

ROSENBROCK_GRID = 70
LADDER = (16, 100, 400, 600)


def test_rosenbrock_convergence(acceptance):
    ds = generate_rosenbrock(ROSENBROCK_GRID, ROSENBROCK_GRID)
    cfg = TrainConfig(freeze_positions=True, density_control=False)
    norm, unnorm, seconds = {}, {}, []
    for n in LADDER:
        for normalized, table in ((True, norm), (False, unnorm)):
            if not normalized and n < 100:
                continue
            t0 = time.perf_counter()
            f, _ = train(ds, init_from_grid(ds, n), None, dataclasses.replace(cfg, normalized=normalized))
            seconds.append(time.perf_counter() - t0)
            pred = (predict if normalized else predict_unnormalized)(f, ds.coords)
            table[n] = relative_l2(pred, ds.values)
    up_to_400 = [norm[n] for n in LADDER if n <= 400]
    checks = {
        "monotone 16..400": all(b <= a for a, b in zip(up_to_400, up_to_400[1:])),
        "N=400 normalized <= 0.5%": norm[400] <= 0.005,
        "N=400 unnormalized >= 2%": unnorm[400] >= 0.02,
        "ratio >= 5x for N >= 100": all(unnorm[n] >= 5 * norm[n] for n in LADDER if n >= 100),
        "N=600 below N=16": norm[600] < norm[16],
        "each run <= 10 min": max(seconds) <= 600,
    }
    detail = ("normalized " + ", ".join(f"N={n}: {100 * e:.3f}%" for n, e in norm.items())
              + "; unnormalized " + ", ".join(f"N={n}: {100 * e:.3f}%" for n, e in unnorm.items())
              + f"; slowest run {max(seconds):.0f}s; failed: {[k for k, v in checks.items() if not v]}")
    acceptance(1, "Rosenbrock convergence", all(checks.values()), detail)


# -- 2. Burgers super-resolution ---------------------------------------------------

BURGERS_STRIDES = (2, 1)
BURGERS_EPOCHS = 1000


def test_burgers_super_resolution(acceptance):
    t0 = time.perf_counter()
    truth = generate_burgers(256, 100)          # raises unless both oracles agree to 1e-4
    coarse = grid_subsample(truth, BURGERS_STRIDES)
    spec = PdeSpec.burgers(truth.physics["nu"])
    f, _ = train(coarse, init_from_grid(coarse, 400), spec, TrainConfig(epochs=BURGERS_EPOCHS))
    err = relative_l2(predict(f, truth.coords), truth.values)
    seconds = time.perf_counter() - t0
    ok = err <= 0.02 and seconds <= 900 and truth.physics["oracle_gap"] <= 1e-4
    acceptance(2, "Burgers super-resolution", ok,
               f"oracle gap {truth.physics['oracle_gap']:.1e}, {coarse.K} training points, "
               f"error {100 * err:.3f}% (limit 2%), {seconds:.0f}s")


# -- 3, 7, 8. Taylor-Green ------------------------------------------------------------

TG_EPOCHS = 3000
TG_SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def _tg_data():
    fine = generate_taylor_green(32, 32, 5)
    return fine, spatial_average(fine, 2)


@functools.lru_cache(maxsize=None)
def _tg_run(seed: int, lam: float, normalized: bool = True):
    """(velocity error or None if the loss went non-finite, report, seconds)."""
    fine, coarse = _tg_data()
    spec = PdeSpec.unsteady_ns(fine.physics["re"], 2)
    cfg = TrainConfig(epochs=TG_EPOCHS, lam=lam, seed=seed, normalized=normalized)
    t0 = time.perf_counter()
    try:
        f, report = train(coarse, init_from_grid(coarse, 400), spec, cfg)
    except NonFiniteLoss:
        return None, None, time.perf_counter() - t0
    pred = (predict if normalized else predict_unnormalized)(f, fine.coords)
    return relative_l2(pred[:, :2], fine.values[:, :2]), report, time.perf_counter() - t0


def test_taylor_green_physics(acceptance):
    with_pde = {s: _tg_run(s, 1.0) for s in TG_SEEDS}
    without = {s: _tg_run(s, 0.0) for s in TG_SEEDS}
    seconds = sum(r[2] for r in with_pde.values()) + sum(r[2] for r in without.values())
    ok = (all(with_pde[s][0] is not None and with_pde[s][0] <= 0.05 for s in TG_SEEDS)
          and all(without[s][0] is None or without[s][0] >= with_pde[s][0] for s in TG_SEEDS)
          and seconds <= 1200)
    detail = "; ".join(f"seed {s}: lambda=1 {100 * with_pde[s][0]:.3f}%, lambda=0 "
                       + ("non-finite" if without[s][0] is None else f"{100 * without[s][0]:.3f}%")
                       for s in TG_SEEDS)
    acceptance(3, "Taylor-Green physics pipeline", ok, detail + f"; {seconds:.0f}s")


def test_unnormalized_ablation(acceptance):
    base, _, _ = _tg_run(0, 1.0)
    err, _, _ = _tg_run(0, 1.0, normalized=False)
    ok = err is None or err >= 3 * base
    detail = ("unnormalized loss went non-finite" if err is None else
              f"unnormalized {100 * err:.3f}% vs normalized {100 * base:.3f}% "
              f"(ratio {err / base:.2f}, need >= 3)")
    acceptance(7, "unnormalized ablation direction", ok, detail)


def test_density_control_stability(acceptance):
    _, report, _ = _tg_run(0, 1.0)
    counts = np.array(report.counts)
    start = int(0.3 * len(counts))
    ref = counts[start]
    ok = bool(np.all(counts[start:] <= 2 * ref) and np.all(counts <= 50 * counts[0]))
    acceptance(8, "density-control stability", ok,
               f"initial {counts[0]}, at 30% {ref}, max after {counts[start:].max()}, final {counts[-1]}")


# -- 4. convergence rate -----------------------------------------------------------

def test_convergence_rate(acceptance):
    t0 = time.perf_counter()
    exp = RateExperiment()
    res = run_rate_experiment(exp)
    seconds = time.perf_counter() - t0
    ok = (exp.q == 1 and exp.beta == 2 and exp.trials >= 20
          and tuple(exp.n_values) == tuple(2**k for k in range(7, 15))
          and res.slope is not None and abs(res.slope + 0.4) <= 0.15 and seconds <= 300)
    acceptance(4, "convergence rate", ok,
               f"slope {res.slope:.4f} +- {res.slope_stderr:.4f} (target -0.4 +- 0.15), {seconds:.0f}s")


# -- 5. derivatives ----------------------------------------------------------------

def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def _spec_for(q, p):
    if q == 2 and p == 1:
        return PdeSpec.burgers(0.05)
    if q == 2 and p >= 3:
        return PdeSpec.steady_ns2d(20.0)
    if q == 4 and p >= 4:
        return PdeSpec.unsteady_ns(5.0, 3)
    return PdeSpec.none()


def test_derivative_correctness(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {"jacobian": 0.0, "second": 0.0, "gradient": 0.0}
    n_cfg = 0
    for q in (1, 2, 4):
        for p in (1, 3, 4):
            for _ in range(6):
                f = random_field(rng, q, p, 6, spread=0.6, log_h=(-0.4, 0.2))
                x = rng.uniform(-0.5, 0.5, q)
                for normalized, pred in ((True, predict), (False, predict_unnormalized)):
                    J = np.empty((p, q))
                    H = np.empty((p, q))
                    for j in range(q):
                        e = np.zeros(q)
                        e[j] = 1e-6
                        J[:, j] = (pred(f, x + e) - pred(f, x - e)) / 2e-6
                        e[j] = 1e-4
                        H[:, j] = (pred(f, x + e) - 2 * pred(f, x) + pred(f, x - e)) / 1e-8
                    worst["jacobian"] = max(worst["jacobian"], _rel(spatial_jacobian(f, x, normalized), J))
                    worst["second"] = max(worst["second"], _rel(spatial_second_diag(f, x, normalized), H))
                X = rng.uniform(-0.5, 0.5, (5, q))
                Y = rng.normal(size=(5, p))
                spec = _spec_for(q, p)
                theta = flatten(f)
                fd = np.empty_like(theta)
                for i in range(theta.size):
                    e = np.zeros_like(theta)
                    e[i] = 1e-6
                    fd[i] = (total_loss(apply(f, theta + e), X, Y, spec, 0.7)[0]
                             - total_loss(apply(f, theta - e), X, Y, spec, 0.7)[0]) / 2e-6
                worst["gradient"] = max(worst["gradient"], _rel(loss_param_gradient(f, X, Y, spec, lam=0.7), fd))
                n_cfg += 1
    seconds = time.perf_counter() - t0
    ok = (n_cfg >= 50 and worst["jacobian"] <= 1e-4 and worst["gradient"] <= 1e-4
          and worst["second"] <= 1e-3 and seconds <= 120)
    acceptance(5, "derivative correctness", ok,
               f"{n_cfg} configurations, worst relative error: Jacobian {worst['jacobian']:.1e}, "
               f"second diagonal {worst['second']:.1e}, parameter gradient {worst['gradient']:.1e}; {seconds:.0f}s")


# -- 6. property suites --------------------------------------------------------------

def test_property_suites(acceptance):
    t0 = time.perf_counter()
    out = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "--hypothesis-show-statistics",
         os.path.join(HERE, "test_properties.py")],
        capture_output=True, text=True, cwd=os.path.dirname(HERE),
    )
    seconds = time.perf_counter() - t0
    tail = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr.strip()[-200:]
    examples = [int(line.split()[1]) for line in out.stdout.splitlines()
                if "passing examples" in line and line.strip().startswith("-")]
    ok = out.returncode == 0 and bool(examples) and min(examples) >= 200 and seconds <= 300
    acceptance(6, "property suites", ok,
               f"{tail}; fewest passing examples per property {min(examples) if examples else 'n/a'}; {seconds:.0f}s")
