"""Time the compiled and NumPy splatting kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--sizes 400x2500,2500x10000] [--repeat 5]

Each size is NxK (Gaussians x query points) in q=3 with p=3 channels,
the shape of a 2D+time Navier-Stokes fit. Reports the best of ``repeat``
runs for the forward pass (values, Jacobian, second diagonal) and the
backward pass, plus the largest disagreement between backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from splatfield import kernels


def make_inputs(n: int, k: int, q: int = 3, p: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    spacing = n ** (-1.0 / q)
    mu = rng.uniform(0, 1, (n, q))
    log_h = np.log(spacing) + rng.normal(0, 0.2, (n, q))
    values = rng.normal(size=(n, p))
    X = rng.uniform(0, 1, (k, q))
    grads = rng.normal(size=(k, p)), rng.normal(size=(k, p, q)), rng.normal(size=(k, p, q))
    return mu, log_h, values, X, grads


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(n: int, k: int, repeat: int, z_threshold: float = 1e-4) -> list[dict]:
    mu, log_h, values, X, (gv, gJ, gH) = make_inputs(n, k)
    rows, ref = [], {}
    for name in ("numpy", "cython"):
        try:
            be = kernels.get_backend(name)
        except (ImportError, ValueError):
            continue
        tf, fwd = best_of(lambda: be.forward(mu, log_h, values, X, z_threshold, True, 2), repeat)
        tb, bwd = best_of(lambda: be.backward(mu, log_h, values, X, z_threshold, True, gv, gJ, gH), repeat)
        if not ref:
            ref = {"fwd": fwd, "bwd": bwd}
            diff = 0.0
        else:
            diff = max(float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a))))
                       for a, b in zip(ref["fwd"] + ref["bwd"], fwd + bwd))
        rows.append({"backend": name, "N": n, "K": k, "forward_ms": 1e3 * tf,
                     "backward_ms": 1e3 * tb, "max_rel_diff": diff})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100x1000,400x2500,1000x5000,2500x10000")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'backend':>8} {'N':>6} {'K':>7} {'forward ms':>11} {'backward ms':>12} {'speedup':>8} {'max rel diff':>13}")
    for size in args.sizes.split(","):
        n, k = (int(s) for s in size.lower().split("x"))
        rows = bench(n, k, args.repeat)
        base = rows[0]["forward_ms"] + rows[0]["backward_ms"]
        for r in rows:
            speed = base / (r["forward_ms"] + r["backward_ms"])
            print(f"{r['backend']:>8} {r['N']:>6} {r['K']:>7} {r['forward_ms']:>11.2f} "
                  f"{r['backward_ms']:>12.2f} {speed:>7.2f}x {r['max_rel_diff']:>13.2e}")


if __name__ == "__main__":
    main()
