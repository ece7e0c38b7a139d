"""Discrete-time longitudinal kinematics for a single intersection approach.

Vehicles drive toward the intersection along a one-dimensional lane.
Position ``x`` is the distance to the stop line, so ``x`` decreases over
time and the vehicle enters the intersection when ``x`` reaches zero.
Control is bang-bang: the action is -1 (full brake), 0 (coast) or +1
(full throttle), applied for one step of ``dt`` seconds with semi-implicit
Euler integration:

    v' = clip(v + action * a_max * dt, 0, v_max)
    x' = x - v' * dt

The module also provides Poisson arrival sampling, a reproducible
random-action lead-vehicle behavior, rear-end collision detection and the
trajectory CSV log format.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .config import SimConfig

# Crossing threshold: x <= XEPS counts as having entered the intersection.
# Absorbs float residue (e.g. 90 steps at v_max covering exactly 400 m).
XEPS = 1e-9

ACTIONS = (-1, 0, 1)


@dataclass
class VehicleState:
    """A vehicle in the control region.

    ``x`` is the distance in meters from the front bumper to the stop
    line.  ``lane`` is an opaque hashable lane key.  ``accel`` stores the
    last applied action for observers that need it.
    """

    id: str
    x: float
    v: float
    lane: object = 0
    length: float = 5.0
    entered_at: float = 0.0
    accel: int = 0

    def __post_init__(self) -> None:
        if self.v < 0.0:
            raise ValueError(f"vehicle {self.id}: speed must be non-negative")
        if self.length <= 0.0:
            raise ValueError(f"vehicle {self.id}: length must be positive")


def step_vehicle(s: VehicleState, action: int, cfg: SimConfig) -> VehicleState:
    """Advance one vehicle by one time step.

    Returns a new state; the input is not mutated.
    """
    if action not in (-1, 0, 1):
        raise ValueError(f"action must be -1, 0 or +1, got {action!r}")
    v = s.v + action * cfg.a_max * cfg.dt
    if v < 0.0:
        v = 0.0
    elif v > cfg.v_max:
        v = cfg.v_max
    return replace(s, x=s.x - v * cfg.dt, v=v, accel=action)


def gap_to_leader(follower: VehicleState, leader: VehicleState) -> float:
    """Bumper-to-bumper distance between two vehicles in the same lane.

    Negative values mean the vehicles overlap (a rear-end collision).
    """
    if follower.lane != leader.lane:
        raise ValueError(
            f"gap is undefined across lanes ({follower.lane!r} vs {leader.lane!r})")
    return follower.x - leader.x - leader.length


def detect_rear_end_collisions(lane: Sequence[VehicleState]) -> list[bool]:
    """Check each adjacent pair of a lane ordered front to back.

    ``lane`` must be sorted by increasing ``x`` (the lead vehicle first).
    Returns one flag per adjacent pair; True marks an overlapping pair.
    """
    flags = []
    for lead, follow in zip(lane, lane[1:]):
        if follow.x < lead.x:
            raise ValueError("lane must be ordered front to back (ascending x)")
        flags.append(gap_to_leader(follow, lead) < 0.0)
    return flags


@dataclass
class ArrivalProcess:
    """Poisson arrivals on a set of lanes.

    ``rate`` is the per-lane arrival rate in vehicles per second.
    """

    rate: float
    horizon: float
    rng_seed: int = 0
    lanes: tuple = (0,)

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValueError("arrival rate must be non-negative")
        if self.horizon <= 0.0:
            raise ValueError("arrival horizon must be positive")
        self.lanes = tuple(self.lanes)


def sample_arrivals(p: ArrivalProcess) -> list[tuple[object, float]]:
    """Draw (lane, time) arrival events over the horizon, sorted by time.

    Inter-arrival gaps per lane are exponential with mean 1/rate; lanes are
    independent streams derived from the process seed.
    """
    if p.rate == 0.0:
        return []
    root = np.random.SeedSequence(p.rng_seed)
    events: list[tuple[object, float]] = []
    for child, lane in zip(root.spawn(len(p.lanes)), p.lanes):
        rng = np.random.default_rng(child)
        t = 0.0
        while True:
            t += rng.exponential(1.0 / p.rate)
            if t >= p.horizon:
                break
            events.append((lane, t))
    events.sort(key=lambda e: e[1])
    return events


@dataclass
class LeadBehavior:
    """Human-like lead vehicle: a fresh uniform random action per window.

    The action for window ``w`` is a pure function of (seed, w), so two
    queries for the same window always agree and replays are exact.
    """

    rng_seed: int = 0
    decision_period: float = 2.0

    def __post_init__(self) -> None:
        if self.decision_period <= 0.0:
            raise ValueError("decision_period must be positive")
        self._cache: dict[int, int] = {}


def lead_policy_action(b: LeadBehavior, t: float) -> int:
    """Action of the lead behavior at time ``t`` (seconds)."""
    if t < 0.0:
        raise ValueError("time must be non-negative")
    window = int(t / b.decision_period)
    a = b._cache.get(window)
    if a is None:
        rng = np.random.default_rng(np.random.SeedSequence((b.rng_seed, window)))
        a = int(rng.integers(0, 3)) - 1
        b._cache[window] = a
    return a


def min_crossing_steps(x: float, v: float, cfg: SimConfig) -> int:
    """Fewest steps in which a vehicle at (x, v) can reach the stop line.

    Assumes full throttle until v_max and cruising after that, which is
    the distance-optimal policy for this kinematic model.
    """
    if x <= XEPS:
        return 0
    dv = cfg.dv
    # Steps with headroom to accelerate before the speed clamp binds.
    k_full = int(np.floor((cfg.v_max - v) / dv + 1e-12))
    dist = 0.0
    speed = v
    m = 0
    # Closed form is possible but the ramp is at most v_max/dv steps long;
    # the loop is exact and runs at most ~60 iterations at defaults.
    while m < k_full:
        speed += dv
        dist += speed * cfg.dt
        m += 1
        if dist >= x - XEPS:
            return m
    if speed < cfg.v_max:
        speed = cfg.v_max
        dist += speed * cfg.dt
        m += 1
        if dist >= x - XEPS:
            return m
    remaining = x - XEPS - dist
    m += int(np.ceil(remaining / (cfg.v_max * cfg.dt)))
    return m


def earliest_arrival(x: float, v: float, now: float, cfg: SimConfig) -> float:
    """Earliest stop-line arrival time reachable from (x, v) at time now."""
    return now + min_crossing_steps(x, v, cfg) * cfg.dt


TRAJECTORY_FIELDS = ("time_s", "vehicle_id", "lane", "x_m", "v_mps", "action")


def write_trajectory_csv(path: str, rows: Iterable[tuple]) -> None:
    """Write trajectory samples as CSV.

    Each row is (time_s, vehicle_id, lane, x_m, v_mps, action).  Floats are
    written with repr precision so a reload reproduces them exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_FIELDS)
        for time_s, vehicle_id, lane, x_m, v_mps, action in rows:
            w.writerow([repr(float(time_s)), vehicle_id, lane,
                        repr(float(x_m)), repr(float(v_mps)), int(action)])


def read_trajectory_csv(path: str) -> list[dict]:
    """Load a trajectory CSV back into a list of sample dicts."""
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "time_s": float(row["time_s"]),
                "vehicle_id": row["vehicle_id"],
                "lane": row["lane"],
                "x_m": float(row["x_m"]),
                "v_mps": float(row["v_mps"]),
                "action": int(row["action"]),
            })
    return out
