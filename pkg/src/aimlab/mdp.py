"""Two-objective MDP for schedule-tracking trajectory control.

An agent vehicle approaches the stop line and must cross it at an assigned
time T_s at full speed while staying safely behind whatever drives ahead.
Each step yields a two-component reward vector:

* ``r1`` (trajectory): a per-step position penalty -x/L that pushes the
  vehicle toward the intersection, plus a terminal bonus 10 + 3*v for
  crossing within one step of T_s (or -10 for any other ending);
* ``r2`` (cruise): +0.1 for keeping a comfortable headway (6 m < gap <
  20 m), -0.1 when tailgating (gap <= 6 m), 0 when far (gap >= 20 m) and
  -400 for a rear-end collision.

Observations hold six features: own speed, distance to the stop line,
time remaining to T_s, lead speed, bumper gap and the leader's last
acceleration command.  When no leader is present, a phantom leader at
full speed, L meters ahead and coasting fills the slot.

The ``VeEpisode`` environment is the two-vehicle training setup: a lead
vehicle that is either human-like (random action every 2 s) or autonomous
(a fixed deterministic trajectory: coasting, or pacing itself to its own
scheduled slot), and the agent spawning at the control-region entry with
a schedule drawn from U[20, 32] seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import SimConfig
from .kinematics import (
    XEPS,
    LeadBehavior,
    VehicleState,
    earliest_arrival,
    gap_to_leader,
    lead_policy_action,
    step_vehicle,
)

# Episode outcomes.
REACHED_ON_TIME = "reached_on_time"
MISSED_SCHEDULE = "missed_schedule"
CRASHED = "crashed"
TIMEOUT = "timeout"
OUTCOMES = (REACHED_ON_TIME, MISSED_SCHEDULE, CRASHED, TIMEOUT)

# Cruise reward shape.
GAP_LOW = 6.0
GAP_HIGH = 20.0
CRASH_PENALTY = -400.0

# time_remaining is normalized by the largest schedule seen in training.
TIME_NORM = 32.0

N_FEATURES = 6


@dataclass(frozen=True)
class Observation:
    """Raw (unnormalized) view of the world from one vehicle."""

    self_speed: float
    dist: float
    time_remaining: float
    lead_speed: float
    gap: float
    lead_accel: float

    def normalized(self, cfg: SimConfig) -> np.ndarray:
        """Scale features to roughly unit range.

        Speeds divide by v_max, distances by the control length and the
        leader acceleration by a_max.  time_remaining divides by 32 s and
        saturates at +-1: beyond half a minute out, the schedule is not
        yet actionable and the agent is effectively in pure cruise mode.
        """
        t = min(max(self.time_remaining, -TIME_NORM), TIME_NORM)
        out = np.array([
            self.self_speed / cfg.v_max,
            self.dist / cfg.control_length,
            t / TIME_NORM,
            self.lead_speed / cfg.v_max,
            self.gap / cfg.control_length,
            self.lead_accel / cfg.a_max,
        ])
        if not np.all(np.isfinite(out)):
            raise ValueError("observation features must be finite")
        return out


def observe(
    follower: VehicleState,
    leader: Optional[VehicleState],
    t_sched: float,
    now: float,
    cfg: SimConfig,
) -> Observation:
    """Build the agent observation, substituting a phantom leader if alone."""
    if leader is None:
        lead_speed, gap, lead_accel = cfg.v_max, cfg.control_length, 0.0
    else:
        lead_speed = leader.v
        gap = gap_to_leader(follower, leader)
        lead_accel = float(leader.accel)
    return Observation(
        self_speed=follower.v,
        dist=follower.x,
        time_remaining=t_sched - now,
        lead_speed=lead_speed,
        gap=gap,
        lead_accel=lead_accel,
    )


def reward_r1_step(x: float, cfg: SimConfig) -> float:
    """Per-step trajectory penalty: distance still to cover, scaled by L."""
    x = min(max(x, 0.0), cfg.control_length)
    return -x / cfg.control_length


def reward_r1_end(outcome: str, v_final: float, cfg: SimConfig) -> float:
    """Terminal trajectory reward.

    Crossing within one step of the schedule earns 10 + 3*v_final; every
    other ending (early, late, crash, never crossing) earns -10.
    """
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    if outcome == REACHED_ON_TIME:
        return 10.0 + 3.0 * v_final
    return -10.0


def reward_r2(gap: float, crashed: bool = False) -> float:
    """Cruise reward from the bumper gap."""
    if crashed:
        return CRASH_PENALTY
    if gap <= GAP_LOW:
        return -0.1
    if gap < GAP_HIGH:
        return 0.1
    return 0.0


LEADER_KINDS = ("human", "autonomous")


def scheduled_lead_action(state: VehicleState, t_lead: float, now: float,
                          cfg: SimConfig) -> int:
    """Just-in-time pacing rule for an autonomous lead vehicle.

    Brake while the earliest feasible arrival still beats the assigned
    slot, otherwise full throttle.  The rule rides the boundary where a
    full-throttle finish lands exactly on ``t_lead``, so the vehicle
    sheds speed early (stopping mid-approach when the slack is large)
    and crosses the line near the speed limit within about a step of
    its slot.  Deterministic in (state, t_lead, now), which keeps
    episodes exactly replayable and leader trajectories precomputable.
    """
    if state.x <= XEPS:
        return 0
    if earliest_arrival(state.x, state.v, now, cfg) < t_lead - 1e-9:
        return -1
    return 1


def scheduled_lead_positions(x0: float, v0: float, t_lead: float,
                             n_steps: int, cfg: SimConfig) -> np.ndarray:
    """Front-bumper positions of a schedule-pacing leader, len n_steps+1.

    Rolls ``scheduled_lead_action`` forward from (x0, v0).  Positions
    keep integrating past the stop line (growing negative), which makes
    downstream gap constraints vacuous once the leader has left.
    """
    state = VehicleState(id="lead", x=x0, v=v0)
    out = np.empty(n_steps + 1, dtype=np.float64)
    out[0] = x0
    for k in range(n_steps):
        action = scheduled_lead_action(state, t_lead, k * cfg.dt, cfg)
        state = step_vehicle(state, action, cfg)
        out[k + 1] = state.x
    return out


class VeEpisode:
    """Two-vehicle episode: scripted leader, agent-controlled follower.

    The follower must cross at ``t_sched``.  The episode ends on crossing,
    on a rear-end collision, or one step past the schedule.  A hard cap at
    t_sched + 5 s bounds rollouts regardless.

    An autonomous leader coasts at its entry speed unless ``lead_sched``
    assigns it a slot of its own, in which case it paces itself with
    ``scheduled_lead_action`` the way a platoon of controlled vehicles
    would queue for consecutive slots.
    """

    def __init__(
        self,
        cfg: SimConfig,
        t_sched: float,
        follower: VehicleState,
        leader: Optional[VehicleState],
        leader_kind: str = "human",
        behavior: Optional[LeadBehavior] = None,
        lead_sched: Optional[float] = None,
    ):
        if leader_kind not in LEADER_KINDS:
            raise ValueError(f"unknown leader kind {leader_kind!r}")
        if leader_kind == "human" and leader is not None and behavior is None:
            raise ValueError("human leader needs a LeadBehavior")
        if lead_sched is not None and leader_kind != "autonomous":
            raise ValueError("lead_sched applies to autonomous leaders only")
        self.cfg = cfg
        self.t_sched = float(t_sched)
        self._f0 = follower
        self._l0 = leader
        self.leader_kind = leader_kind
        self.behavior = behavior
        self.lead_sched = None if lead_sched is None else float(lead_sched)
        self.max_steps = int(math.ceil((self.t_sched + 5.0) / cfg.dt)) + 2
        self.reset()

    def reset(self) -> np.ndarray:
        self.follower = self._f0
        self.leader = self._l0
        self.k = 0
        self.terminal = False
        self.outcome: Optional[str] = None
        self.crossing_time: Optional[float] = None
        # (t, x, v, action) samples, starting with the spawn state
        self.trajectory: list[tuple[float, float, float, int]] = [
            (0.0, self.follower.x, self.follower.v, 0)]
        return self.observation().normalized(self.cfg)

    @property
    def now(self) -> float:
        return self.k * self.cfg.dt

    def observation(self) -> Observation:
        return observe(self.follower, self.leader, self.t_sched, self.now, self.cfg)

    def leader_action(self) -> int:
        if self.leader is None:
            return 0
        if self.leader_kind == "autonomous":
            if self.lead_sched is None:
                return 0
            return scheduled_lead_action(self.leader, self.lead_sched,
                                         self.now, self.cfg)
        return lead_policy_action(self.behavior, self.now)

    def step(self, action: int):
        """Advance one step.

        Returns (normalized_obs, (r1, r2), terminal, info).  Both vehicles
        move simultaneously: actions are chosen against the pre-step state.
        """
        if self.terminal:
            raise RuntimeError("episode is over; call reset()")
        cfg = self.cfg
        lead_action = self.leader_action()
        new_leader = (step_vehicle(self.leader, lead_action, cfg)
                      if self.leader is not None else None)
        new_follower = step_vehicle(self.follower, action, cfg)
        self.k += 1
        t = self.now

        crashed = False
        if new_leader is not None:
            gap = gap_to_leader(new_follower, new_leader)
            crashed = gap < 0.0
        if new_leader is not None and not crashed and new_leader.x <= XEPS:
            new_leader = None  # leader entered the intersection and is gone

        self.follower = new_follower
        self.leader = new_leader
        self.trajectory.append((t, new_follower.x, new_follower.v, int(action)))

        crossed = new_follower.x <= XEPS
        outcome = None
        if crashed:
            outcome = CRASHED
        elif crossed:
            self.crossing_time = t
            on_time = abs(t - self.t_sched) <= cfg.dt + 1e-9
            outcome = REACHED_ON_TIME if on_time else MISSED_SCHEDULE
        elif t > self.t_sched + cfg.dt + 1e-9:
            outcome = TIMEOUT

        r1 = reward_r1_step(new_follower.x, cfg)
        if new_leader is not None:
            r2 = reward_r2(gap_to_leader(new_follower, new_leader), crashed=crashed)
        else:
            r2 = reward_r2(cfg.control_length, crashed=crashed)

        if outcome is not None:
            self.terminal = True
            self.outcome = outcome
            r1 += reward_r1_end(outcome, new_follower.v, cfg)
        elif self.k >= self.max_steps:  # unreachable safety bound
            self.terminal = True
            self.outcome = TIMEOUT
            r1 += reward_r1_end(TIMEOUT, new_follower.v, cfg)

        info = {"t": t, "outcome": self.outcome, "crossing_time": self.crossing_time}
        return (self.observation().normalized(cfg), (r1, r2), self.terminal, info)


def make_ve_episode(
    cfg: SimConfig,
    seed: int,
    leader_kind: str = "human",
    t_sched: Optional[float] = None,
    entry_speed: Optional[float] = None,
    leader_gap: Optional[float] = None,
    leader_speed: Optional[float] = None,
    lead_sched: Optional[float] = None,
) -> VeEpisode:
    """Sample a two-vehicle episode.

    Unless pinned by the keyword overrides: the schedule is U[20, 32] s,
    the agent enters at x = L with speed U[0.5, 1] * v_max, and the leader
    starts 10 to 60 m of bumper gap ahead at a speed drawn the same way.
    ``lead_sched`` hands an autonomous leader a slot of its own to pace to.
    """
    rng = np.random.default_rng(np.random.SeedSequence((0x5E, seed)))
    if t_sched is None:
        t_sched = float(rng.uniform(20.0, 32.0))
    if entry_speed is None:
        entry_speed = float(rng.uniform(0.5 * cfg.v_max, cfg.v_max))
    if leader_gap is None:
        leader_gap = float(rng.uniform(10.0, 60.0))
    if leader_speed is None:
        leader_speed = float(rng.uniform(0.5 * cfg.v_max, cfg.v_max))
    follower = VehicleState(id="agent", x=cfg.control_length, v=entry_speed,
                            lane=0, length=cfg.vehicle_length)
    leader = VehicleState(id="lead", x=cfg.control_length - leader_gap - cfg.vehicle_length,
                          v=leader_speed, lane=0, length=cfg.vehicle_length)
    behavior = LeadBehavior(rng_seed=int(rng.integers(0, 2**31)))
    return VeEpisode(cfg, t_sched, follower, leader,
                     leader_kind=leader_kind, behavior=behavior,
                     lead_sched=lead_sched)


def write_episode_trace(path: str, records: list[dict]) -> None:
    """Write one step record per line as JSON.

    Records carry t, obs (6 normalized features), action, r1, r2,
    terminal and outcome (null until the episode ends).
    """
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_episode_trace(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
