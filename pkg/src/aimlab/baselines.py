"""Reference trajectory controllers.

Three non-learned decision rules used as baselines and oracles:

* ``dp_optimal_trajectory``: exact minimum-cost trajectory by dynamic
  programming on a speed lattice.  Speeds reachable from the entry speed
  under +-a_max*dt changes form a lattice v_top - k*dv; the cumulative
  slowdown P = sum of k pins the position exactly, so states are (step,
  k, P) and the cost (the sum of positions, i.e. the normalized
  trajectory cost before dividing by the region length) is computed
  without float drift.  Acceleration past the lattice top and braking
  below its lowest positive point are excluded so that every planned
  transition replays exactly through the simulator's clamped update.
  Returns None when no lattice trajectory crosses on schedule.
* ``heuristic_action``: a rule-based controller that keeps the remaining
  distance inside the feasibility envelope [d_min, d_max] of discrete
  speed profiles that cross at the scheduled step at full speed,
  preferring faster actions, with gap-based safety overrides.
* ``tldqn_action``: thresholded lexicographic action selection over two
  value heads (cruise values gate a candidate set, trajectory values
  decide inside it).

The DP solve runs on the active kernel backend (see kernels module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import SimConfig
from .kinematics import XEPS, VehicleState, min_crossing_steps, step_vehicle
from .mdp import GAP_HIGH, GAP_LOW, TIME_NORM


@dataclass(frozen=True)
class DpSolution:
    """Optimal lattice trajectory: per-step actions, the replayed
    (t, x, v, action) samples including spawn, and the position-sum cost
    in meters (divide by the region length for the normalized cost)."""

    actions: list[int]
    trajectory: list[tuple[float, float, float, int]]
    cost: float


# Minimum planned clearance behind a leader, in meters.  The optimal
# position-sum trajectory rides the gap constraint for long stretches, and
# at exactly zero clearance float roundoff in a replay can land a hair
# below zero and read as a collision; one micrometer of slack absorbs
# that without affecting any cost at physical scale.
CONTACT_PAD = 1e-6


def constant_action_positions(x0: float, v0: float, action: int, n_steps: int,
                              cfg: SimConfig) -> np.ndarray:
    """Positions at steps 0..n_steps for a vehicle holding one action."""
    state = VehicleState(id="lead", x=x0, v=v0)
    out = np.zeros(n_steps + 1)
    out[0] = x0
    for m in range(1, n_steps + 1):
        state = step_vehicle(state, action, cfg)
        out[m] = state.x
    return out


def dp_optimal_trajectory(cfg: SimConfig, t_sched: float,
                          entry_speed: float | None = None,
                          leader_positions: np.ndarray | None = None,
                          leader_length: float | None = None) -> DpSolution | None:
    """Minimum position-sum trajectory crossing at the scheduled step.

    The vehicle spawns at the region entry at ``entry_speed`` (default
    the speed limit), must stay strictly upstream of the stop line until
    the step nearest ``t_sched``, cross exactly then at the lattice top
    speed, and stay behind ``leader_positions`` (front-bumper positions
    per step, at least one entry past the crossing step when given) by
    ``leader_length``.  Returns None when the schedule is infeasible.
    """
    v0 = cfg.v_max if entry_speed is None else float(entry_speed)
    if not 0.0 <= v0 <= cfg.v_max + 1e-9:
        raise ValueError(f"entry speed {v0} outside [0, v_max]")
    v0 = min(v0, cfg.v_max)
    if t_sched <= 0.0:
        raise ValueError(f"schedule time {t_sched} must be positive")
    if leader_length is None:
        leader_length = cfg.vehicle_length

    dt = cfg.dt
    dv = cfg.dv
    L = cfg.control_length
    M = int(round(t_sched / dt))
    if M < 1:
        return None
    if leader_positions is not None:
        leader_positions = np.asarray(leader_positions, dtype=np.float64)
        if leader_positions.shape[0] < M + 1:
            raise ValueError("leader positions must cover every step "
                             "through the crossing step")
        if leader_positions[0] + leader_length > L + 1e-9:
            raise ValueError("leader overlaps the entry position")
    if min_crossing_steps(L, v0, cfg) > M:
        return None

    n_up = int(math.floor((cfg.v_max - v0) / dv + 1e-9))
    v_top = v0 + n_up * dv
    k0 = n_up
    K = int(math.floor(v_top / dv + 1e-9))
    vtop_dt = v_top * dt
    unit = dv * dt

    low_p = np.zeros(M + 1, dtype=np.int64)
    for m in range(1, M + 1):
        base = L - m * vtop_dt
        low = 0
        if m < M:
            # Stay strictly upstream: x(m, P) > XEPS.
            low = int(math.floor((XEPS - base) / unit + 1e-12)) + 1
        if leader_positions is not None:
            rear = leader_positions[m] + leader_length
            if rear > 0.0:
                need = int(math.ceil((rear + CONTACT_PAD - base) / unit
                                     - 1e-9))
                low = max(low, need)
        low_p[m] = max(low, 0)
    p_cross_max = int(math.floor(
        (XEPS - (L - M * vtop_dt)) / unit + 1e-12))
    if p_cross_max < 0:
        return None

    val, act = kernels.dp_table(M, K, k0, low_p, p_cross_max, L, vtop_dt, unit)
    lo = int(max(low_p[M], 0))
    hi = min(p_cross_max, K * M)
    if lo > hi:
        return None
    row = val[0, lo:hi + 1]
    best = int(np.argmin(row))
    if not np.isfinite(row[best]):
        return None

    k, p = 0, lo + best
    actions: list[int] = []
    for m in range(M, 0, -1):
        a = int(act[m, k, p])
        actions.append(a)
        k, p = k + a, p - k
    if (k, p) != (k0, 0):
        raise RuntimeError("lattice walk did not return to the entry state")
    actions.reverse()

    state = VehicleState(id="dp", x=L, v=v0, length=cfg.vehicle_length)
    trajectory = [(0.0, L, v0, 0)]
    for m, a in enumerate(actions, start=1):
        state = step_vehicle(state, a, cfg)
        trajectory.append((m * dt, state.x, state.v, a))
        if m < M and state.x <= XEPS:
            raise RuntimeError("replayed trajectory crossed early")
    if state.x > XEPS:
        raise RuntimeError("replayed trajectory failed to cross on schedule")
    cost = sum(max(x, 0.0) for (_, x, _, _) in trajectory)
    return DpSolution(actions, trajectory, cost)


# ---------------------------------------------------------------------------
# Feasibility-envelope heuristic
# ---------------------------------------------------------------------------

def _max_distance(v: float, n: int, cfg: SimConfig) -> float:
    """Distance covered in n steps accelerating hard then cruising."""
    d = 0.0
    for _ in range(n):
        v = min(v + cfg.dv, cfg.v_max)
        d += v * cfg.dt
    return d


def _min_distance_end_fast(v: float, n: int, cfg: SimConfig) -> float:
    """Least distance over n steps that still ends at the speed limit:
    hold the lowest speed whose full-throttle tail still reaches v_max
    by the last step (brake if recoverable, else coast if recoverable,
    else accelerate).  When v_max is out of reach entirely this
    degenerates to the full-throttle distance."""
    d = 0.0
    for m in range(n):
        left = n - m - 1
        braked = max(v - cfg.dv, 0.0)
        if braked + left * cfg.dv >= cfg.v_max - 1e-12:
            v = braked
        elif v + left * cfg.dv >= cfg.v_max - 1e-12:
            pass  # braking now could not recover; coasting still can
        else:
            v = min(v + cfg.dv, cfg.v_max)
        d += v * cfg.dt
    return d


def heuristic_action(v: float, x: float, t_remaining: float, gap: float,
                     cfg: SimConfig) -> int:
    """Rule-based trajectory action from raw (unnormalized) state.

    Safety first: brake inside the danger gap, never accelerate inside
    the comfort gap.  Otherwise pick the fastest action that keeps the
    remaining distance within the envelope of speed profiles that cross
    at the scheduled step at full speed; when the schedule is already
    unmeetable, chase it (late -> accelerate, early -> brake).
    """
    if gap <= GAP_LOW:
        return -1
    n = int(round(t_remaining / cfg.dt))
    allowed = (0, -1) if gap < GAP_HIGH else (1, 0, -1)
    if n <= 0 or x <= XEPS:
        return allowed[0]
    feasible = []
    late = True
    for a in allowed:
        v1 = min(max(v + a * cfg.dv, 0.0), cfg.v_max)
        x1 = x - v1 * cfg.dt
        if x1 <= XEPS:
            # Crossing this step: acceptable only if it is the scheduled one.
            if n == 1:
                feasible.append(a)
            else:
                late = False
            continue
        d_max = _max_distance(v1, n - 1, cfg)
        if d_max < x1 - 1e-9:
            continue  # cannot reach the line in time with this action
        late = False
        d_min = _min_distance_end_fast(v1, n - 1, cfg)
        if d_min > x1 + 1e-9:
            continue  # would arrive early no matter what
        feasible.append(a)
    if feasible:
        return feasible[0]
    return allowed[0] if late else allowed[-1]


def heuristic_action_from_obs(obs: np.ndarray, cfg: SimConfig) -> int:
    """Drive the rule-based controller from a normalized observation.

    Undoes the feature scaling of the environment observation (speed by
    v_max, distances by the region length, time by the schedule
    normalizer), so the heuristic can stand in wherever a learned
    policy's ``action_values`` would be consulted.
    """
    v = float(obs[0]) * cfg.v_max
    x = float(obs[1]) * cfg.control_length
    t_remaining = float(obs[2]) * TIME_NORM
    gap = float(obs[4]) * cfg.control_length
    return heuristic_action(v, x, t_remaining, gap, cfg)


# ---------------------------------------------------------------------------
# Thresholded lexicographic two-net rule
# ---------------------------------------------------------------------------

def tldqn_values(q_cruise: np.ndarray, q_trajectory: np.ndarray,
                 tau: float = 0.1) -> np.ndarray:
    """Trajectory values masked to the cruise-acceptable candidate set.

    Candidates are actions whose cruise value is within tau*|max| of the
    cruise maximum; all others are -inf, so an argmax of the result is
    the lexicographic choice (ties to the lowest index).
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    m = float(np.max(q_cruise))
    threshold = m - tau * abs(m)
    return np.where(q_cruise >= threshold - 1e-12, q_trajectory, -np.inf)


def tldqn_action(q_cruise: np.ndarray, q_trajectory: np.ndarray,
                 tau: float = 0.1) -> int:
    return int(np.argmax(tldqn_values(q_cruise, q_trajectory, tau)))
