"""Timing comparison of the numba and numpy kernel backends.

Runs the hot kernels on training- and oracle-shaped workloads under the
active backend, then (when called without --inner) re-invokes itself in
a subprocess with AIMLAB_DISABLE_NUMBA=1 and prints both columns side
by side.  JIT compilation happens before any timer starts.

Usage:
    python benchmarks/bench_kernels.py            # comparison table
    python benchmarks/bench_kernels.py --inner    # one backend, JSON
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from aimlab import kernels
from aimlab.baselines import dp_optimal_trajectory
from aimlab.config import SimConfig
from aimlab.mdp import N_FEATURES, scheduled_lead_positions
from aimlab.networks import Mlp


def bench(fn, repeats: int) -> float:
    """Best-of-three mean seconds per call over ``repeats`` calls."""
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def run_suite() -> dict:
    kernels.warmup()
    rng = np.random.default_rng(0)
    net = Mlp((N_FEATURES, 64, 64, 3), seed=0)
    X1 = rng.uniform(-1.0, 1.0, size=(1, N_FEATURES))
    X64 = rng.uniform(-1.0, 1.0, size=(64, N_FEATURES))
    actions = rng.integers(0, 3, size=64)
    targets = rng.normal(size=64)

    cfg = SimConfig()
    t_sched = 26.0
    steps = int(round(t_sched / cfg.dt))
    lead = scheduled_lead_positions(cfg.control_length - 35.0, cfg.v_max,
                                    t_sched - 1.0, steps + 1, cfg)
    # One untimed call so lazy allocations do not skew the first sample.
    dp_optimal_trajectory(cfg, t_sched, cfg.v_max, lead)

    return {
        "backend": kernels.backend(),
        "mlp_values_b1": bench(lambda: net.values(X1), 2000),
        "mlp_values_b64": bench(lambda: net.values(X64), 2000),
        "mlp_loss_grad_b64": bench(
            lambda: net.loss_grad(X64, actions, targets), 500),
        "dp_solve_26s": bench(
            lambda: dp_optimal_trajectory(cfg, t_sched, cfg.v_max, lead), 1),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--inner", action="store_true",
                        help="run one backend and print JSON")
    args = parser.parse_args()

    if args.inner:
        print(json.dumps(run_suite()))
        return 0

    here = run_suite()
    env = dict(os.environ, AIMLAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, os.path.abspath(__file__),
                          "--inner"], capture_output=True, text=True,
                         env=env, check=True)
    other = json.loads(out.stdout)
    if here["backend"] == other["backend"]:
        print("numba unavailable; both runs used the numpy backend")

    names = [k for k in here if k != "backend"]
    width = max(len(n) for n in names)
    print(f"{'kernel':<{width}}  {here['backend']:>12}  "
          f"{other['backend'] + ' (flag)':>14}  speedup")
    for name in names:
        a, b = here[name], other[name]
        print(f"{name:<{width}}  {a * 1e6:>10.1f}us  {b * 1e6:>12.1f}us  "
              f"{b / a:>6.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
