"""Independent checkers for the package's core guarantees.

Each function here verifies a component against a *different* method
than the component itself uses, so shared bugs cannot hide:

* ``enumerate_min_cost_crossing`` brute-forces every action sequence of
  a small crossing instance through the simulator update and returns
  the exact minimum trajectory cost, as a ground truth for the dynamic
  programming solver.
* ``run_dp_enumeration_suite`` compares that ground truth against the
  DP solver on randomized small instances where every position is a
  dyadic rational, so agreement must be exact to the last bit.
* ``run_schedule_safety_suite`` fuzzes the schedulers with random
  queue layouts, loads, service policies and rescheduling splits and
  counts pairwise separation violations (expected: zero).
* ``run_gradient_suite`` checks analytic network gradients against
  central finite differences over random architectures.
* ``run_convergence_suite`` runs tabular multi-discount updates with a
  diminishing step size to the independently computed backup-operator
  fixed point and measures contraction ratios of random value pairs.

The suites are what the acceptance tests and the command line's
``verify`` command call; keeping them importable makes the properties
cheap to rerun after any change.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np

from .baselines import (
    CONTACT_PAD,
    constant_action_positions,
    dp_optimal_trajectory,
)
from .config import SimConfig
from .kinematics import XEPS
from .learning import (
    DiscountVector,
    contraction_ratios,
    gamma_prime,
    q_fixed_point,
    random_micro_mdp,
    run_tabular_convergence,
    tabular_lr,
)
from .networks import Mlp, gradient_check
from .scheduling import (
    QueuedVehicle,
    build_transition_matrix,
    fcfs_schedule,
    four_leg_two_lane_layout,
    multi_lane_polling,
    verify_schedule,
)

MAX_ENUM_STEPS = 16


def enumerate_min_cost_crossing(cfg: SimConfig, t_sched: float,
                                entry_speed: float | None = None,
                                leader_positions: np.ndarray | None = None,
                                leader_length: float | None = None,
                                require_top_speed: bool = True,
                                chunk_size: int = 1_000_000):
    """Exact minimum position-sum crossing cost by exhaustive search.

    Walks all 3**M action sequences (M = scheduled step count) through
    the clamped kinematic update, keeps those that stay upstream of the
    stop line until step M, cross exactly at step M at the lattice top
    speed, and never get closer than ``leader_length`` behind the
    leader front positions.  Returns (cost, actions) for the cheapest
    valid sequence or None when none is valid.  Feasibility rules and
    the cost (sum over steps 0..M of max(x, 0)) mirror the DP solver;
    the search itself shares none of its machinery.

    Sequences are processed in vectorized chunks; M is capped at
    ``MAX_ENUM_STEPS`` to keep the search tractable.
    """
    v0 = cfg.v_max if entry_speed is None else float(entry_speed)
    if not 0.0 <= v0 <= cfg.v_max + 1e-9:
        raise ValueError(f"entry speed {v0} outside [0, v_max]")
    v0 = min(v0, cfg.v_max)
    if t_sched <= 0.0:
        raise ValueError(f"schedule time {t_sched} must be positive")
    if leader_length is None:
        leader_length = cfg.vehicle_length
    M = int(round(t_sched / cfg.dt))
    if M < 1:
        return None
    if M > MAX_ENUM_STEPS:
        raise ValueError(f"{M} steps means 3**{M} sequences; enumeration "
                         f"is capped at {MAX_ENUM_STEPS} steps")
    L = cfg.control_length
    if leader_positions is not None:
        leader_positions = np.asarray(leader_positions, dtype=np.float64)
        if leader_positions.shape[0] < M + 1:
            raise ValueError("leader positions must cover every step "
                             "through the crossing step")
        if leader_positions[0] + leader_length > L + 1e-9:
            raise ValueError("leader overlaps the entry position")

    dv = cfg.dv
    n_up = int(math.floor((cfg.v_max - v0) / dv + 1e-9))
    v_top = v0 + n_up * dv

    total = 3 ** M
    # pow3[m-1] is the digit weight of the action taken at step m.
    pow3 = 3 ** np.arange(M - 1, -1, -1, dtype=np.int64)
    best_cost = math.inf
    best_index = -1
    for start in range(0, total, chunk_size):
        idx = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        v = np.full(idx.shape, v0, dtype=np.float64)
        x = np.full(idx.shape, L, dtype=np.float64)
        cost = np.full(idx.shape, max(L, 0.0), dtype=np.float64)
        ok = np.ones(idx.shape, dtype=bool)
        for m in range(1, M + 1):
            a = (idx // pow3[m - 1]) % 3 - 1
            v = np.clip(v + a * dv, 0.0, cfg.v_max)
            x = x - v * cfg.dt
            cost += np.maximum(x, 0.0)
            if m < M:
                ok &= x > XEPS
            else:
                ok &= x <= XEPS
                if require_top_speed:
                    ok &= v >= v_top - 1e-9
            if leader_positions is not None:
                rear = leader_positions[m] + leader_length
                if rear > 0.0:
                    ok &= x >= rear + CONTACT_PAD - 1e-9
        if ok.any():
            masked = np.where(ok, cost, np.inf)
            j = int(np.argmin(masked))
            if masked[j] < best_cost:
                best_cost = float(masked[j])
                best_index = int(idx[j])
    if best_index < 0:
        return None
    actions = [int((best_index // int(w)) % 3) - 1 for w in pow3]
    return best_cost, actions


def tiny_lattice_config() -> SimConfig:
    """Small crossing instance whose positions are all dyadic rationals.

    dt, the speed change per step, the speed limit and the region
    length are all powers of two (times small integers), so every
    reachable speed and position is exactly representable and the DP
    solver and the exhaustive search must agree bit for bit.
    """
    return SimConfig(dt=0.5, v_max=8.0, a_max=2.0, control_length=40.0,
                     intersection_width=8.0, vehicle_length=5.0,
                     vehicle_width=2.0)


def run_dp_enumeration_suite(n_instances: int = 60, seed: int = 0) -> dict:
    """Compare the DP solver with exhaustive search on random instances.

    Draws entry speeds, schedule lengths and optional constant-action
    leaders on the dyadic tiny config; checks that both methods agree
    on feasibility and, when feasible, that the minimum costs are
    exactly equal (== on floats).  Returns counts and any mismatches.
    """
    cfg = tiny_lattice_config()
    root = np.random.SeedSequence((seed, 0x0E))
    feasible = 0
    infeasible = 0
    cost_mismatches: list[dict] = []
    feasibility_mismatches: list[dict] = []
    for i, child in enumerate(root.spawn(n_instances)):
        rng = np.random.default_rng(child)
        v0 = float(rng.choice([5.0, 6.0, 7.0, 8.0]))
        # Mostly 10..13 steps; the last instance stretches to 14.
        M = 14 if i == n_instances - 1 else int(rng.integers(10, 14))
        t_sched = M * cfg.dt
        leader_positions = None
        if rng.uniform() < 0.4:
            lead_x0 = float(rng.choice(np.arange(14.0, 36.0, 2.0)))
            lead_v0 = float(rng.choice([0.0, 2.0, 4.0, 6.0, 8.0]))
            lead_a = int(rng.integers(-1, 2))
            leader_positions = constant_action_positions(
                lead_x0, lead_v0, lead_a, M + 1, cfg)
        sol = dp_optimal_trajectory(cfg, t_sched, v0, leader_positions)
        enum = enumerate_min_cost_crossing(cfg, t_sched, v0, leader_positions)
        case = {"instance": i, "v0": v0, "steps": M,
                "leader": leader_positions is not None}
        if (sol is None) != (enum is None):
            feasibility_mismatches.append(
                dict(case, dp_feasible=sol is not None,
                     enum_feasible=enum is not None))
            continue
        if sol is None:
            infeasible += 1
            continue
        feasible += 1
        if sol.cost != enum[0]:
            cost_mismatches.append(
                dict(case, dp_cost=sol.cost, enum_cost=enum[0]))
    return {
        "instances": n_instances,
        "feasible": feasible,
        "infeasible": infeasible,
        "cost_mismatches": cost_mismatches,
        "feasibility_mismatches": feasibility_mismatches,
    }


def _group_by_queue(vehicles: list[QueuedVehicle]) -> dict:
    queues: dict = {}
    for v in vehicles:
        queues.setdefault(v.queue, []).append(v)
    return queues


def run_schedule_safety_suite(n_instances: int = 1000, seed: int = 0) -> dict:
    """Fuzz the schedulers and count pairwise separation violations.

    Each instance draws a random load on the standard two-lane
    four-leg layout, a random serving policy, and with probability one
    half splits the load into an already-finalized first batch and a
    rescheduled second batch, then verifies the combined schedule
    against the separation matrix.  A safe implementation yields zero
    violations everywhere.
    """
    layout = four_leg_two_lane_layout()
    cfg = SimConfig()
    matrix = build_transition_matrix(layout, cfg)
    root = np.random.SeedSequence((seed, 0x5C))
    violations = 0
    scheduled = 0
    bad_instances: list[int] = []
    for i, child in enumerate(root.spawn(n_instances)):
        rng = np.random.default_rng(child)
        n_veh = int(rng.integers(1, 26))
        vehicles = []
        t = 0.0
        for j in range(n_veh):
            q = layout.queues[int(rng.integers(0, len(layout.queues)))]
            t += float(rng.exponential(2.0))
            earliest = t + float(rng.uniform(10.0, 40.0))
            vehicles.append(QueuedVehicle(f"v{j:03d}", q, earliest, t))
        policy = ("exhaustive", "gated", "k_limited")[int(rng.integers(0, 3))]
        k = int(rng.integers(1, 4))
        split = int(rng.integers(0, n_veh + 1)) if rng.uniform() < 0.5 else n_veh
        first, second = vehicles[:split], vehicles[split:]
        entries = []
        if first:
            if rng.uniform() < 0.25:
                entries.extend(fcfs_schedule(first, matrix, now=0.0))
            else:
                entries.extend(multi_lane_polling(
                    _group_by_queue(first), matrix, now=0.0,
                    policy=policy, k=k))
        if second:
            fixed = [replace(e, finalized=True) for e in entries]
            entries.extend(multi_lane_polling(
                _group_by_queue(second), matrix, now=0.0,
                policy=policy, k=k, finalized=fixed))
        found = verify_schedule(entries, matrix)
        violations += len(found)
        scheduled += len(entries)
        if found:
            bad_instances.append(i)
    return {
        "instances": n_instances,
        "vehicles_scheduled": scheduled,
        "violations": violations,
        "bad_instances": bad_instances,
    }


def run_gradient_suite(n_nets: int = 100, seed: int = 0,
                       h: float = 1e-4) -> dict:
    """Finite-difference gradient audit over random architectures.

    Central differences legitimately disagree with the one-sided
    analytic subgradient when a rectifier pre-activation sits within
    the probe step of its kink, so each network's input batch is
    redrawn until every hidden pre-activation clears a margin of
    ``10 * h``.  With standard-normal inputs a redraw is rarely
    needed, but over a hundred networks the unguarded probability of
    straddling a kink somewhere is a few percent, which is exactly
    the failure this guard removes.  Returns the worst relative error
    over all networks.
    """
    root = np.random.SeedSequence((seed, 0x6D))
    margin = 10.0 * h
    worst = 0.0
    for i, child in enumerate(root.spawn(n_nets)):
        rng = np.random.default_rng(child)
        depth = int(rng.integers(1, 3))
        sizes = ((int(rng.integers(3, 9)),)
                 + tuple(int(rng.integers(4, 33)) for _ in range(depth))
                 + (int(rng.integers(2, 5)),))
        net = Mlp(sizes, seed=i)
        net.flat += rng.uniform(-0.05, 0.05, net.n_params)
        batch = int(rng.integers(1, 9))
        for _ in range(200):
            x = rng.normal(size=(batch, sizes[0]))
            if all(np.abs(z).min() > margin
                   for z in net.pre_activations(x)):
                break
        else:
            raise RuntimeError(
                f"no kink-clear input batch found for network {i}")
        actions = rng.integers(0, sizes[-1], size=batch)
        targets = rng.normal(size=batch)
        rel = float(gradient_check(net, x, actions, targets, h=h))
        worst = max(worst, rel)
    return {"n_nets": n_nets, "h": h, "max_rel_err": worst}


GAMMA_PRIME_GRID = (0.5, 0.9, 0.99)
CONVERGENCE_SWEEPS = {0.5: 300, 0.9: 600, 0.99: 3000}


def run_convergence_suite(seed: int = 0, c: float = 10_000.0,
                          n_pairs: int = 1000) -> dict:
    """Tabular convergence and contraction audit per discount level.

    For each outer discount gamma' the suite builds a random compact
    decision process with discount vector (0.6 gamma', gamma'), runs
    systematic sweeps with the step-size family c/(c+visits), and
    reports the final max-norm error to the backup fixed point plus
    the largest contraction ratio over random value-table pairs.
    """
    root = np.random.SeedSequence((seed, 0xC0))
    out: dict = {}
    for gp, child in zip(GAMMA_PRIME_GRID, root.spawn(len(GAMMA_PRIME_GRID))):
        rng = np.random.default_rng(child)
        mdp = random_micro_mdp(rng)
        discounts = DiscountVector(0.6 * gp, gp)
        q_star = q_fixed_point(mdp, discounts)
        errors = run_tabular_convergence(
            mdp, discounts, CONVERGENCE_SWEEPS[gp], tabular_lr(c),
            q_star=q_star)
        ratios = contraction_ratios(mdp, discounts, n_pairs, rng)
        out[gp] = {
            "gamma_prime": gamma_prime(mdp, discounts),
            "sweeps": CONVERGENCE_SWEEPS[gp],
            "final_error": float(errors[-1]),
            "max_ratio": float(ratios.max()),
            "n_pairs": n_pairs,
        }
    return out


def time_calls(fn, n_calls: int, warmup: int = 3) -> list[float]:
    """Per-call wall-clock durations of fn() after warmup calls."""
    if n_calls < 1:
        raise ValueError("need at least one timed call")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(n_calls):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return samples
