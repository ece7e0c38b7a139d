"""Scheduler unit tests with hand-executed expected schedules.

Defaults give service = max(1, 5/22.22) = 1.0 s and switch-over
= max(1, 19/22.22) = 1.0 s, so conflicting pairs need 2.0 s separation.
A vehicle waiting at the control-region entry (x = 400 m) can reach the
stop line no earlier than 400/v_max = 18.0 s after "now".
"""

import numpy as np
import pytest

from aimlab.config import SimConfig
from aimlab.scheduling import (
    Layout,
    QueueId,
    QueuedVehicle,
    QueueTransitionMatrix,
    ScheduleEntry,
    build_transition_matrix,
    fcfs_schedule,
    four_leg_two_lane_layout,
    multi_lane_polling,
    verify_schedule,
)

CFG = SimConfig()
LAYOUT = four_leg_two_lane_layout()
MATRIX = build_transition_matrix(LAYOUT, CFG)

NS = QueueId(0, 1, "straight")   # inner-lane straight, road 0
ES = QueueId(1, 1, "straight")   # inner-lane straight, road 1 (perpendicular)
SS = QueueId(2, 1, "straight")   # opposing road 2


def veh(vid, queue, earliest=18.0, entered=0.0):
    return QueuedVehicle(id=vid, queue=queue, earliest=earliest, entered_at=entered)


def test_layout_has_16_queues_and_symmetric_conflicts():
    assert len(LAYOUT.queues) == 16
    for a in LAYOUT.queues:
        for b in LAYOUT.queues:
            assert LAYOUT.conflicting(a, b) == LAYOUT.conflicting(b, a)
            if a.road == b.road:
                assert not LAYOUT.conflicting(a, b)


def test_matrix_values_at_defaults():
    # perpendicular straights cross: service + switch-over = 2.0
    assert MATRIX.f(NS, ES) == pytest.approx(2.0)
    # same road, parallel lanes: independent
    assert MATRIX.f(NS, QueueId(0, 0, "straight")) == 0.0
    # opposing straights: independent
    assert MATRIX.f(NS, SS) == 0.0
    # diagonal: service time, floored at 1 s
    assert MATRIX.service(NS) == pytest.approx(1.0)
    # sharing a physical lane: service-time separation
    assert MATRIX.f(QueueId(0, 1, "left"), NS) == pytest.approx(1.0)
    # left turn conflicts with the opposing straight
    assert MATRIX.f(QueueId(0, 1, "left"), SS) == pytest.approx(2.0)
    # right turn merges with the outer straight of road r+1 only
    assert MATRIX.f(QueueId(0, 0, "right"), QueueId(1, 0, "straight")) == pytest.approx(2.0)
    assert MATRIX.f(QueueId(0, 0, "right"), QueueId(3, 0, "straight")) == 0.0
    assert MATRIX.f(QueueId(0, 0, "right"), QueueId(2, 0, "right")) == 0.0


def test_service_floor_lifts_with_longer_vehicles():
    cfg = SimConfig(vehicle_length=50.0)
    m = build_transition_matrix(LAYOUT, cfg)
    assert m.service(NS) == pytest.approx(50.0 / cfg.v_max)  # 2.25 s
    assert m.f(NS, ES) == pytest.approx(50.0 / cfg.v_max + 64.0 / cfg.v_max)


def test_single_vehicle_at_entry():
    entries = multi_lane_polling({NS: [veh("a", NS)]}, MATRIX, now=0.0)
    assert len(entries) == 1
    assert entries[0].t_sched == pytest.approx(18.0)


def test_two_vehicles_same_queue_separated_by_service():
    entries = multi_lane_polling(
        {NS: [veh("a", NS, entered=0.0), veh("b", NS, entered=0.1)]},
        MATRIX, now=0.0)
    assert [e.vehicle_id for e in entries] == ["a", "b"]
    assert entries[0].t_sched == pytest.approx(18.0)
    assert entries[1].t_sched == pytest.approx(19.0)


def test_two_vehicles_conflicting_queues():
    entries = multi_lane_polling(
        {NS: [veh("a", NS, entered=0.0)], ES: [veh("b", ES, entered=0.1)]},
        MATRIX, now=0.0)
    by_id = {e.vehicle_id: e.t_sched for e in entries}
    assert by_id["a"] == pytest.approx(18.0)
    assert by_id["b"] == pytest.approx(20.0)


def test_parallel_same_road_queues_share_the_slot():
    other = QueueId(0, 0, "straight")
    entries = multi_lane_polling(
        {NS: [veh("a", NS, entered=0.0)], other: [veh("b", other, entered=0.1)]},
        MATRIX, now=0.0)
    assert all(e.t_sched == pytest.approx(18.0) for e in entries)


def test_exhaustive_drains_queue_before_rotating():
    qa = [veh("a1", NS, entered=0.0), veh("a2", NS, entered=0.1),
          veh("a3", NS, entered=0.2)]
    qb = [veh("b1", ES, entered=0.05), veh("b2", ES, entered=0.15),
          veh("b3", ES, entered=0.25)]
    entries = multi_lane_polling({NS: qa, ES: qb}, MATRIX, now=0.0,
                                 policy="exhaustive")
    assert [e.vehicle_id for e in entries] == ["a1", "a2", "a3", "b1", "b2", "b3"]
    assert [e.t_sched for e in entries] == pytest.approx([18.0, 19.0, 20.0,
                                                          22.0, 23.0, 24.0])


def test_k_limited_alternates_between_conflicting_queues():
    qa = [veh("a1", NS, entered=0.0), veh("a2", NS, entered=0.1),
          veh("a3", NS, entered=0.2)]
    qb = [veh("b1", ES, entered=0.05), veh("b2", ES, entered=0.15),
          veh("b3", ES, entered=0.25)]
    entries = multi_lane_polling({NS: qa, ES: qb}, MATRIX, now=0.0,
                                 policy="k_limited", k=1)
    assert [e.vehicle_id for e in entries] == ["a1", "b1", "a2", "b2", "a3", "b3"]
    assert [e.t_sched for e in entries] == pytest.approx([18.0, 20.0, 22.0,
                                                          24.0, 26.0, 28.0])


def test_gated_serves_the_batch_present_at_visit_start():
    qa = [veh("a1", NS, entered=0.0), veh("a2", NS, entered=0.1)]
    qb = [veh("b1", ES, entered=0.05)]
    entries = multi_lane_polling({NS: qa, ES: qb}, MATRIX, now=0.0,
                                 policy="gated")
    assert [e.vehicle_id for e in entries] == ["a1", "a2", "b1"]


def test_fcfs_strict_entry_order():
    vehicles = [
        veh("a", NS, entered=0.0),
        veh("b", ES, entered=0.1),
        veh("c", NS, entered=0.2),
    ]
    entries = fcfs_schedule(vehicles, MATRIX, now=0.0)
    assert [e.vehicle_id for e in entries] == ["a", "b", "c"]
    # a: 18; b: max(18, 18+2) = 20; c: max(18, 18+1, 20+2) = 22
    assert [e.t_sched for e in entries] == pytest.approx([18.0, 20.0, 22.0])


def test_lane_sharing_queues_never_require_overtaking():
    straight = QueueId(0, 0, "straight")
    right = QueueId(0, 0, "right")
    # The right-turner arrived first and must be served first even though
    # the straight queue precedes it in the rotation order.
    entries = multi_lane_polling(
        {straight: [veh("s", straight, entered=1.0)],
         right: [veh("r", right, entered=0.0)]},
        MATRIX, now=0.0)
    assert [e.vehicle_id for e in entries] == ["r", "s"]
    assert entries[1].t_sched >= entries[0].t_sched + 1.0 - 1e-9


def test_finalized_entries_constrain_and_survive_reruns():
    finalized = [ScheduleEntry("old", ES, t_sched=19.0, finalized=True)]
    entries = multi_lane_polling({NS: [veh("new", NS)]}, MATRIX, now=0.0,
                                 finalized=finalized)
    assert len(entries) == 1
    assert entries[0].vehicle_id == "new"
    # must respect 19.0 + 2.0 against the locked entry
    assert entries[0].t_sched == pytest.approx(21.0)
    assert verify_schedule(list(finalized) + entries, MATRIX) == []


def test_work_conservation_single_queue():
    q = [veh(f"v{i}", NS, entered=0.01 * i) for i in range(8)]
    entries = multi_lane_polling({NS: q}, MATRIX, now=0.0)
    times = [e.t_sched for e in entries]
    for t1, t2 in zip(times, times[1:]):
        assert t2 - t1 == pytest.approx(MATRIX.service(NS))


def test_single_lane_mutually_conflicting_degenerates_to_classic_polling():
    queues = tuple(QueueId(r, 0, "straight") for r in range(4))
    conflicts = frozenset(frozenset((a, b)) for a in queues for b in queues if a != b)
    layout = Layout(queues=queues, conflicts=conflicts)
    matrix = build_transition_matrix(layout, CFG)
    qmap = {q: [veh(f"{q.road}-0", q, entered=0.01 * q.road),
                veh(f"{q.road}-1", q, entered=0.01 * q.road + 0.001)]
            for q in queues}
    entries = multi_lane_polling(qmap, matrix, now=0.0)
    times = [e.t_sched for e in entries]
    # within a queue: +service (1 s); across queues: +service+switch (2 s)
    assert times == pytest.approx([18.0, 19.0, 21.0, 22.0, 24.0, 25.0, 27.0, 28.0])


def test_verify_schedule_flags_violation():
    entries = [
        ScheduleEntry("a", NS, 18.0),
        ScheduleEntry("b", ES, 19.0),  # needs 2.0 after a
    ]
    violations = verify_schedule(entries, MATRIX)
    assert len(violations) == 1
    assert violations[0].first_id == "a"
    assert violations[0].required == pytest.approx(2.0)
    assert violations[0].actual == pytest.approx(1.0)


def test_matrix_json_round_trip():
    text = MATRIX.to_json()
    back = QueueTransitionMatrix.from_json(text)
    assert back.queues == MATRIX.queues
    assert np.array_equal(back.seconds, MATRIX.seconds)


def _random_instance(rng):
    n_queues = int(rng.integers(2, 11))
    queues = []
    for i in range(n_queues):
        queues.append(QueueId(int(rng.integers(0, 4)), i,
                              ["straight", "left", "right"][int(rng.integers(0, 3))]))
    pairs = [(i, j) for i in range(n_queues) for j in range(i + 1, n_queues)]
    conflicts = set()
    for i, j in pairs:
        if rng.random() < 0.5:
            conflicts.add(frozenset((queues[i], queues[j])))
    layout = Layout(queues=tuple(queues), conflicts=frozenset(conflicts))
    cfg = SimConfig(vehicle_length=float(rng.uniform(3.0, 40.0)),
                    intersection_width=float(rng.uniform(6.0, 40.0)),
                    v_max=float(rng.uniform(8.0, 30.0)))
    matrix = build_transition_matrix(layout, cfg)
    qmap = {}
    t_entry = 0.0
    for q in queues:
        vs = []
        for k in range(int(rng.integers(0, 6))):
            t_entry += float(rng.uniform(0.0, 2.0))
            vs.append(QueuedVehicle(id=f"{q.road}.{q.lane}.{q.movement}.{k}",
                                    queue=q,
                                    earliest=float(rng.uniform(5.0, 40.0)),
                                    entered_at=t_entry))
        if vs:
            qmap[q] = vs
    policy = ["exhaustive", "gated", "k_limited"][int(rng.integers(0, 3))]
    return qmap, matrix, policy


def test_random_instances_are_always_violation_free():
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(200):
        qmap, matrix, policy = _random_instance(rng)
        entries = multi_lane_polling(qmap, matrix, now=0.0, policy=policy,
                                     k=int(rng.integers(1, 4)))
        assert verify_schedule(entries, matrix) == []
        assert len(entries) == sum(len(v) for v in qmap.values())
        checked += 1
    assert checked == 200


def test_fcfs_random_instances_are_violation_free():
    rng = np.random.default_rng(123)
    for _ in range(100):
        qmap, matrix, _ = _random_instance(rng)
        flat = [v for vs in qmap.values() for v in vs]
        entries = fcfs_schedule(flat, matrix, now=0.0)
        assert verify_schedule(entries, matrix) == []


def test_schedule_in_order_hand_separations():
    from aimlab.scheduling import schedule_in_order

    # Caller-chosen order NS, ES, NS again: 18.0, then 18+2, then the
    # larger of NS+service (19) and ES+switch separation (22).
    order = [veh("a", NS), veh("b", ES), veh("c", NS)]
    entries = schedule_in_order(order, MATRIX)
    assert [e.vehicle_id for e in entries] == ["a", "b", "c"]
    assert [e.t_sched for e in entries] == pytest.approx([18.0, 20.0, 22.0])
    assert all(not e.finalized for e in entries)
    assert verify_schedule(entries, MATRIX) == []


def test_schedule_in_order_seeds_from_finalized_and_rejects_unknown_queue():
    from aimlab.scheduling import schedule_in_order

    locked = [ScheduleEntry("old", ES, t_sched=30.0, finalized=True)]
    entries = schedule_in_order([veh("new", NS)], MATRIX, finalized=locked)
    assert entries[0].t_sched == pytest.approx(32.0)

    stranger = QueuedVehicle("x", QueueId(9, 0, "straight"), 18.0, 0.0)
    with pytest.raises(ValueError):
        schedule_in_order([stranger], MATRIX)


def test_polling_start_queue_anchors_the_rotation():
    queues = {NS: [veh("n", NS, entered=0.0)], ES: [veh("e", ES, entered=1.0)]}

    # Default anchor: first-arrived vehicle's queue goes first.
    default = multi_lane_polling(queues, MATRIX, now=0.0)
    assert [(e.vehicle_id, e.t_sched) for e in default] == [("n", 18.0), ("e", 20.0)]

    # Explicit anchor at ES reverses the service order.
    anchored = multi_lane_polling(queues, MATRIX, now=0.0, start_queue=ES)
    assert [(e.vehicle_id, e.t_sched) for e in anchored] == [("e", 18.0), ("n", 20.0)]

    # An empty anchor queue advances to the next waiting queue in
    # rotation order (road 2 wraps past road 3 to road 0 before road 1).
    wrapped = multi_lane_polling(queues, MATRIX, now=0.0, start_queue=SS)
    assert [e.vehicle_id for e in wrapped] == ["n", "e"]
