"""Trajectory/cruise MDP tests: rewards, observations, episode endings."""

import numpy as np
import pytest

from aimlab.config import SimConfig
from aimlab.kinematics import XEPS, VehicleState
from aimlab.mdp import (
    CRASHED,
    MISSED_SCHEDULE,
    REACHED_ON_TIME,
    TIMEOUT,
    VeEpisode,
    make_ve_episode,
    observe,
    read_episode_trace,
    reward_r1_end,
    reward_r1_step,
    reward_r2,
    scheduled_lead_action,
    scheduled_lead_positions,
    write_episode_trace,
)

CFG = SimConfig()
V_MAX = CFG.v_max


def test_r1_step_values():
    assert reward_r1_step(100.0, CFG) == pytest.approx(-0.25)
    assert reward_r1_step(400.0, CFG) == pytest.approx(-1.0)
    assert reward_r1_step(0.0, CFG) == 0.0
    # clamped outside the region
    assert reward_r1_step(-3.0, CFG) == 0.0
    assert reward_r1_step(500.0, CFG) == pytest.approx(-1.0)


def test_r1_end_values():
    assert reward_r1_end(REACHED_ON_TIME, V_MAX, CFG) == pytest.approx(10.0 + 3.0 * V_MAX)
    assert reward_r1_end(REACHED_ON_TIME, 10.0, CFG) == pytest.approx(40.0)
    assert reward_r1_end(MISSED_SCHEDULE, 10.0, CFG) == -10.0
    assert reward_r1_end(TIMEOUT, 0.0, CFG) == -10.0
    assert reward_r1_end(CRASHED, 5.0, CFG) == -10.0
    with pytest.raises(ValueError):
        reward_r1_end("nope", 0.0, CFG)


def test_r2_values_and_boundaries():
    assert reward_r2(10.0) == pytest.approx(0.1)
    assert reward_r2(3.0) == pytest.approx(-0.1)
    assert reward_r2(25.0) == 0.0
    assert reward_r2(6.0) == pytest.approx(-0.1)   # boundary goes to the penalty
    assert reward_r2(20.0) == 0.0                  # boundary goes to neutral
    assert reward_r2(10.0, crashed=True) == -400.0


def test_observation_with_leader():
    f = VehicleState(id="f", x=300.0, v=20.0, lane=0)
    l = VehicleState(id="l", x=280.0, v=15.0, lane=0, length=5.0, accel=-1)
    obs = observe(f, l, t_sched=24.0, now=4.0, cfg=CFG)
    assert obs.self_speed == 20.0
    assert obs.dist == 300.0
    assert obs.time_remaining == pytest.approx(20.0)
    assert obs.lead_speed == 15.0
    assert obs.gap == pytest.approx(15.0)
    assert obs.lead_accel == -1.0


def test_observation_phantom_leader():
    f = VehicleState(id="f", x=300.0, v=20.0, lane=0)
    obs = observe(f, None, t_sched=24.0, now=4.0, cfg=CFG)
    assert obs.lead_speed == pytest.approx(V_MAX)
    assert obs.gap == pytest.approx(400.0)
    assert obs.lead_accel == 0.0


def test_normalization():
    f = VehicleState(id="f", x=200.0, v=0.5 * V_MAX, lane=0)
    l = VehicleState(id="l", x=160.0, v=V_MAX, lane=0, length=5.0, accel=1)
    obs = observe(f, l, t_sched=16.0, now=0.0, cfg=CFG)
    vec = obs.normalized(CFG)
    assert vec == pytest.approx([0.5, 0.5, 0.5, 1.0, 35.0 / 400.0, 0.5])
    # far-future schedules saturate instead of leaving the training range
    far = observe(f, l, t_sched=100.0, now=0.0, cfg=CFG)
    assert far.normalized(CFG)[2] == 1.0


def _solo_episode(t_sched, v0=V_MAX):
    follower = VehicleState(id="agent", x=400.0, v=v0, lane=0)
    return VeEpisode(CFG, t_sched, follower, leader=None, leader_kind="autonomous")


def test_full_speed_crossing_exactly_on_time():
    env = _solo_episode(t_sched=18.0)
    env.reset()
    total_r1 = 0.0
    while not env.terminal:
        _, (r1, r2), done, info = env.step(0)
        total_r1 += r1
        assert r2 == 0.0  # phantom leader keeps the gap at L
    assert env.outcome == REACHED_ON_TIME
    assert env.crossing_time == pytest.approx(18.0, abs=CFG.dt)
    assert len(env.trajectory) == 91  # spawn sample + 90 steps
    # step penalties come from post-step positions (spawn sample excluded),
    # plus the on-time terminal bonus at v_max
    assert total_r1 == pytest.approx(
        sum(-x / 400.0 for (_, x, _, _) in env.trajectory[1:] if x > 0.0)
        + 10.0 + 3.0 * V_MAX)


def test_full_speed_crossing_early_is_missed():
    env = _solo_episode(t_sched=25.0)
    env.reset()
    while not env.terminal:
        _, (r1, _), done, info = env.step(0)
    assert env.outcome == MISSED_SCHEDULE
    assert env.crossing_time == pytest.approx(18.0, abs=CFG.dt)
    assert r1 <= -10.0  # ends with the miss penalty


def test_stationary_vehicle_times_out_one_step_past_schedule():
    env = _solo_episode(t_sched=2.0, v0=0.0)
    env.reset()
    steps = 0
    while not env.terminal:
        _, (r1, _), done, _ = env.step(-1)
        steps += 1
    assert env.outcome == TIMEOUT
    # terminal once t exceeds T_s + dt: first k with 0.2k > 2.2 is k=12
    assert steps == 12
    assert r1 == pytest.approx(-1.0 - 10.0)


def test_tailgating_crash_ends_episode():
    follower = VehicleState(id="agent", x=400.0, v=V_MAX, lane=0)
    leader = VehicleState(id="lead", x=390.0, v=0.0, lane=0, length=5.0)
    env = VeEpisode(CFG, 30.0, follower, leader, leader_kind="autonomous")
    env.reset()
    r2 = None
    while not env.terminal:
        _, (_, r2), _, _ = env.step(1)
    assert env.outcome == CRASHED
    assert r2 == -400.0


def test_comfort_band_reward_while_following():
    follower = VehicleState(id="agent", x=400.0, v=10.0, lane=0)
    leader = VehicleState(id="lead", x=385.0, v=10.0, lane=0, length=5.0)
    env = VeEpisode(CFG, 30.0, follower, leader, leader_kind="autonomous")
    env.reset()
    _, (r1, r2), _, _ = env.step(0)  # both coast, gap stays 10 m
    assert r2 == pytest.approx(0.1)
    assert r1 == pytest.approx(-(400.0 - 2.0) / 400.0)


def test_leader_exits_and_becomes_phantom():
    follower = VehicleState(id="agent", x=100.0, v=0.0, lane=0)
    leader = VehicleState(id="lead", x=1.0, v=20.0, lane=0, length=5.0)
    env = VeEpisode(CFG, 30.0, follower, leader, leader_kind="autonomous")
    env.reset()
    obs, _, _, _ = env.step(0)
    assert env.leader is None
    assert obs[4] == pytest.approx(1.0)  # gap slot back at L


def test_make_ve_episode_is_reproducible_and_in_range():
    for seed in range(30):
        e1 = make_ve_episode(CFG, seed)
        e2 = make_ve_episode(CFG, seed)
        assert e1.t_sched == e2.t_sched
        assert e1.follower.v == e2.follower.v
        assert e1.leader.x == e2.leader.x
        assert 20.0 <= e1.t_sched <= 32.0
        assert 0.5 * V_MAX <= e1.follower.v <= V_MAX
        gap0 = e1.follower.x - e1.leader.x - e1.leader.length
        assert 10.0 <= gap0 <= 60.0
        assert e1.follower.x == 400.0


def test_make_ve_episode_distinct_across_seeds():
    assert len({make_ve_episode(CFG, s).t_sched for s in range(20)}) == 20


def test_human_leader_episode_runs_and_rewards_bounded():
    env = make_ve_episode(CFG, seed=4, leader_kind="human")
    obs = env.reset()
    rng = np.random.default_rng(0)
    while not env.terminal:
        obs, (r1, r2), done, _ = env.step(int(rng.integers(-1, 2)))
        assert -11.0 <= r1 <= 10.0 + 3.0 * V_MAX
        assert r2 in (-400.0, -0.1, 0.0, 0.1) or r2 == pytest.approx(0.1)
        assert np.all(np.isfinite(obs))
    assert env.outcome in (REACHED_ON_TIME, MISSED_SCHEDULE, CRASHED, TIMEOUT)


def test_scheduled_lead_action_brakes_when_early_and_chases_when_late():
    # 100 m at full speed arrives in 4.6 s; a slot at 10 s means braking,
    # a slot at 3 s is already missed so the rule chases at full throttle.
    state = VehicleState(id="lead", x=100.0, v=V_MAX)
    assert scheduled_lead_action(state, 10.0, 0.0, CFG) == -1
    assert scheduled_lead_action(state, 3.0, 0.0, CFG) == 1
    # Past the stop line the rule goes inert.
    gone = VehicleState(id="lead", x=0.0, v=V_MAX)
    assert scheduled_lead_action(gone, 10.0, 0.0, CFG) == 0


@pytest.mark.parametrize("t_lead", [19.0, 24.0, 30.5])
def test_scheduled_leader_crosses_near_slot_at_top_speed(t_lead):
    from aimlab.kinematics import step_vehicle
    state = VehicleState(id="lead", x=365.0, v=V_MAX)
    k = 0
    while state.x > XEPS:
        a = scheduled_lead_action(state, t_lead, k * CFG.dt, CFG)
        state = step_vehicle(state, a, CFG)
        k += 1
        assert k < 400
    assert abs(k * CFG.dt - t_lead) <= CFG.dt + 1e-9
    assert state.v == pytest.approx(V_MAX)


def test_scheduled_lead_positions_match_episode_leader_bitwise():
    t_sched, gap = 26.0, 30.0
    lead_x0 = CFG.control_length - gap - CFG.vehicle_length
    pos = scheduled_lead_positions(lead_x0, V_MAX, t_sched - 1.5, 60, CFG)
    follower = VehicleState(id="agent", x=CFG.control_length, v=V_MAX, lane=0)
    leader = VehicleState(id="lead", x=lead_x0, v=V_MAX, lane=0,
                          length=CFG.vehicle_length)
    env = VeEpisode(CFG, t_sched, follower, leader,
                    leader_kind="autonomous", lead_sched=t_sched - 1.5)
    env.reset()
    for k in range(1, 61):
        env.step(-1)  # follower hangs back; leader is what we watch
        assert env.leader is not None
        assert env.leader.x == pos[k]


def test_lead_sched_rejects_human_leader():
    from aimlab.kinematics import LeadBehavior
    follower = VehicleState(id="agent", x=400.0, v=10.0, lane=0)
    leader = VehicleState(id="lead", x=380.0, v=10.0, lane=0)
    with pytest.raises(ValueError, match="autonomous"):
        VeEpisode(CFG, 30.0, follower, leader, leader_kind="human",
                  behavior=LeadBehavior(rng_seed=1), lead_sched=25.0)


def test_episode_trace_round_trip(tmp_path):
    records = [
        {"t": 0.2, "obs": [0.5] * 6, "action": 1, "r1": -0.9,
         "r2": 0.0, "terminal": False, "outcome": None},
        {"t": 0.4, "obs": [0.6] * 6, "action": 0, "r1": -0.8,
         "r2": 0.1, "terminal": True, "outcome": "reached_on_time"},
    ]
    path = tmp_path / "trace.jsonl"
    write_episode_trace(str(path), records)
    assert read_episode_trace(str(path)) == records
