"""Polling-based multi-lane intersection scheduler.

Traffic approaching the intersection is organised as one FIFO queue per
(road, lane, movement).  A queue transition matrix ``f_q`` holds the
minimum separation in seconds between intersection entries of consecutive
vehicles: the diagonal is a queue's service time, conflicting pairs add a
switch-over on top of the service time, and independent pairs are zero.

The polling scheduler visits queues in a fixed rotation and assigns each
popped vehicle the earliest stop-line arrival time that respects both its
own kinematic feasibility and every separation against already assigned
vehicles.  Serving policies: ``exhaustive`` drains the current queue,
``gated`` serves only the customers present when the visit starts and
``k_limited`` serves at most k per visit.

Two queues can share a physical lane (straight plus a turn).  Such pairs
get service-time separation in the matrix and the scheduler only serves a
queue whose head vehicle is the first unscheduled vehicle of its lane, so
schedules never require overtaking within a lane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .config import SimConfig

MOVEMENTS = ("straight", "left", "right")


@dataclass(frozen=True, order=True)
class QueueId:
    road: int
    lane: int
    movement: str

    def __post_init__(self) -> None:
        if self.movement not in MOVEMENTS:
            raise ValueError(f"unknown movement {self.movement!r}")


@dataclass(frozen=True)
class Layout:
    """A queue set plus the unordered pairs that cross paths."""

    queues: tuple[QueueId, ...]
    conflicts: frozenset[frozenset]

    def conflicting(self, a: QueueId, b: QueueId) -> bool:
        return frozenset((a, b)) in self.conflicts


def four_leg_two_lane_layout() -> Layout:
    """Standard 4-legged intersection, two lanes per approach.

    Roads are indexed clockwise; road r approaches the center and exits on
    leg (r+2) going straight, (r+1) turning left, (r+3) turning right
    (right-hand traffic).  Lane 0 is the outer lane (straight or right),
    lane 1 the inner lane (straight or left).

    Conflict rules:
    * straights of perpendicular roads cross;
    * a left turn crosses the opposing straight and every movement of the
      two perpendicular roads;
    * a right turn only merges with the perpendicular straight that feeds
      the same exit lane (the outer-lane straight of road r+1).
    """
    queues = []
    for road in range(4):
        queues.append(QueueId(road, 0, "straight"))
        queues.append(QueueId(road, 0, "right"))
        queues.append(QueueId(road, 1, "straight"))
        queues.append(QueueId(road, 1, "left"))

    conflicts: set[frozenset] = set()

    def add(a: QueueId, b: QueueId) -> None:
        if a != b:
            conflicts.add(frozenset((a, b)))

    for road in range(4):
        for perp in ((road + 1) % 4, (road + 3) % 4):
            for la in (0, 1):
                for lb in (0, 1):
                    add(QueueId(road, la, "straight"), QueueId(perp, lb, "straight"))
        opposing = (road + 2) % 4
        for lane_s in (0, 1):
            add(QueueId(road, 1, "left"), QueueId(opposing, lane_s, "straight"))
        for perp in ((road + 1) % 4, (road + 3) % 4):
            for q in (QueueId(perp, 0, "straight"), QueueId(perp, 0, "right"),
                      QueueId(perp, 1, "straight"), QueueId(perp, 1, "left")):
                add(QueueId(road, 1, "left"), q)
        add(QueueId(road, 0, "right"), QueueId((road + 1) % 4, 0, "straight"))

    return Layout(queues=tuple(queues), conflicts=frozenset(conflicts))


class QueueTransitionMatrix:
    """Pairwise minimum separations (seconds) between queue services."""

    def __init__(self, queues: Sequence[QueueId], seconds: np.ndarray):
        seconds = np.asarray(seconds, dtype=float)
        if seconds.shape != (len(queues), len(queues)):
            raise ValueError("seconds matrix shape does not match queue count")
        if np.any(seconds < 0.0) or not np.all(np.isfinite(seconds)):
            raise ValueError("separations must be finite and non-negative")
        if np.any(np.diag(seconds) <= 0.0):
            raise ValueError("diagonal (service times) must be positive")
        self.queues = tuple(queues)
        self.seconds = seconds
        self._index = {q: i for i, q in enumerate(self.queues)}
        if len(self._index) != len(self.queues):
            raise ValueError("duplicate queue ids")

    def f(self, prev: QueueId, nxt: QueueId) -> float:
        """Separation required between serving ``prev`` then ``nxt``."""
        return float(self.seconds[self._index[prev], self._index[nxt]])

    def service(self, q: QueueId) -> float:
        i = self._index[q]
        return float(self.seconds[i, i])

    def __contains__(self, q: QueueId) -> bool:
        return q in self._index

    def to_json(self) -> str:
        doc = {
            "queues": [
                {"road": q.road, "lane": q.lane, "movement": q.movement}
                for q in self.queues
            ],
            "seconds": self.seconds.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "QueueTransitionMatrix":
        doc = json.loads(text)
        queues = [QueueId(int(e["road"]), int(e["lane"]), str(e["movement"]))
                  for e in doc["queues"]]
        return cls(queues, np.array(doc["seconds"], dtype=float))


def build_transition_matrix(layout: Layout, cfg: SimConfig) -> QueueTransitionMatrix:
    """Derive the separation matrix from vehicle geometry and speed limit.

    Service time is the span between the front bumper entering and the rear
    bumper entering at full speed; the switch-over adds the crossing of the
    intersection box (rear bumper leaving).  Both are floored at 1 second.
    Queues sharing a physical lane get service-time separation; independent
    pairs are zero.
    """
    service = max(1.0, cfg.vehicle_length / cfg.v_max)
    switch = max(1.0, (cfg.vehicle_length + cfg.intersection_width) / cfg.v_max)
    n = len(layout.queues)
    seconds = np.zeros((n, n))
    for i, a in enumerate(layout.queues):
        for j, b in enumerate(layout.queues):
            if i == j:
                seconds[i, j] = service
            elif layout.conflicting(a, b):
                seconds[i, j] = service + switch
            elif a.road == b.road and a.lane == b.lane:
                seconds[i, j] = service
    return QueueTransitionMatrix(layout.queues, seconds)


@dataclass(frozen=True)
class QueuedVehicle:
    """A vehicle waiting to be scheduled.

    ``earliest`` is the soonest stop-line arrival time the vehicle can
    physically achieve (absolute seconds); ``entered_at`` orders FCFS and
    in-lane service.
    """

    id: str
    queue: QueueId
    earliest: float
    entered_at: float


@dataclass(frozen=True)
class ScheduleEntry:
    vehicle_id: str
    queue: QueueId
    t_sched: float
    finalized: bool = False


@dataclass(frozen=True)
class Violation:
    first_id: str
    second_id: str
    required: float
    actual: float


POLICIES = ("exhaustive", "gated", "k_limited")


def multi_lane_polling(
    queues: Mapping[QueueId, Sequence[QueuedVehicle]],
    matrix: QueueTransitionMatrix,
    now: float,
    policy: str = "exhaustive",
    k: int = 1,
    finalized: Sequence[ScheduleEntry] = (),
    start_queue: Optional[QueueId] = None,
) -> list[ScheduleEntry]:
    """Assign intersection arrival times to every queued vehicle.

    Vehicles inside each queue must already be in service (entry) order.
    ``finalized`` entries from earlier runs are immovable: they seed the
    per-queue latest assigned times and the output must stay compatible
    with them.  Returns new entries only, in assignment order.

    The rotation is embedded in time.  A server clock starts at ``now``
    (or at the latest frozen commitment) and advances with each
    assignment; a visited queue is served while its head's feasible slot
    lies within one switch-over of the clock, and a head further out is
    passed over until the rotation comes back around.  When a full
    rotation finds nothing within reach the clock jumps forward to the
    earliest feasible request.  With every vehicle ready at once this is
    the classical polling sweep; with staggered arrivals it stops the
    server from committing far-future slots that would idle every
    conflicting queue behind them.

    ``start_queue`` anchors the rotation: service begins there (or at
    the next waiting queue after it in rotation order).  Re-runs on a
    live intersection pass the queue the server had committed to last,
    so a new arrival continues the rotation instead of restarting it.
    Without it the rotation starts at the first-arrived waiting vehicle.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown polling policy {policy!r}")
    if policy == "k_limited" and k < 1:
        raise ValueError("k_limited policy needs k >= 1")

    pending: dict[QueueId, list[QueuedVehicle]] = {}
    for q, vehicles in queues.items():
        if q not in matrix:
            raise ValueError(f"queue {q} missing from transition matrix")
        if vehicles:
            pending[q] = list(vehicles)

    latest: dict[QueueId, float] = {}
    for e in finalized:
        if e.queue in matrix:
            latest[e.queue] = max(latest.get(e.queue, -np.inf), e.t_sched)

    rotation = [q for q in matrix.queues if q in pending]
    if not rotation:
        return []

    def lane_head(v: QueuedVehicle) -> bool:
        """True if no earlier-entered unscheduled vehicle shares v's lane."""
        for q, vs in pending.items():
            if q.road == v.queue.road and q.lane == v.queue.lane:
                head = vs[0]
                if (head.entered_at, head.id) < (v.entered_at, v.id):
                    return False
        return True

    def serviceable(q: QueueId) -> bool:
        return q in pending and lane_head(pending[q][0])

    def slot_for(v: QueuedVehicle) -> float:
        t = v.earliest
        for q_prev, t_prev in latest.items():
            sep = matrix.f(q_prev, v.queue)
            if sep > 0.0:  # zero entries do not constrain
                t = max(t, t_prev + sep)
        return t

    # The server waits at a queue for a head at most one switch-over
    # away: holding position that long never beats leaving and coming
    # back, so anything nearer is served on the spot.
    reach = max((matrix.f(p, q) for p in matrix.queues for q in matrix.queues),
                default=0.0)

    if start_queue is not None and start_queue in matrix:
        order = matrix.queues
        i0 = order.index(start_queue)
        cursor = next(rotation.index(order[(i0 + off) % len(order)])
                      for off in range(len(order))
                      if order[(i0 + off) % len(order)] in pending)
    else:
        # Start at the queue holding the first-arrived waiting vehicle.
        first = min((vs[0] for vs in pending.values()),
                    key=lambda v: (v.entered_at, v.id))
        cursor = rotation.index(first.queue)

    server = max([now] + list(latest.values()))
    out: list[ScheduleEntry] = []
    budget = None  # remaining services of the current visit (None = fresh)
    stale = 0      # queues passed over since the last assignment
    guard = 0
    while pending:
        guard += 1
        if guard > 10_000_000:
            raise RuntimeError("polling failed to terminate")
        q = rotation[cursor]
        if budget is None and q in pending:
            if policy == "gated":
                budget = len(pending[q])
            elif policy == "k_limited":
                budget = k
            else:
                budget = -1  # exhaustive: no cap
        if (q in pending and budget != 0 and serviceable(q)
                and slot_for(pending[q][0]) <= server + reach + 1e-9):
            v = pending[q].pop(0)
            if not pending[q]:
                del pending[q]
            t = slot_for(v)
            latest[v.queue] = t
            server = max(server, t)
            out.append(ScheduleEntry(v.id, v.queue, t, finalized=False))
            stale = 0
            if budget > 0:
                budget -= 1
        else:
            cursor = (cursor + 1) % len(rotation)
            budget = None
            stale += 1
            if stale >= len(rotation):
                # Nothing within reach anywhere: idle forward to the
                # earliest request the server could actually meet.
                server = min(slot_for(vs[0]) for vs in pending.values()
                             if lane_head(vs[0]))
                stale = 0
    return out


def schedule_in_order(
    vehicles: Sequence[QueuedVehicle],
    matrix: QueueTransitionMatrix,
    finalized: Sequence[ScheduleEntry] = (),
) -> list[ScheduleEntry]:
    """Greedy separation-respecting times for a given service order.

    Each vehicle gets the earliest time compatible with its own earliest
    arrival and the latest already-assigned time of every queue that
    requires a positive separation from its own (``finalized`` entries
    seed those).  The service order itself is the caller's policy.
    """
    latest: dict[QueueId, float] = {}
    for e in finalized:
        if e.queue in matrix:
            latest[e.queue] = max(latest.get(e.queue, -np.inf), e.t_sched)
    out: list[ScheduleEntry] = []
    for v in vehicles:
        if v.queue not in matrix:
            raise ValueError(f"queue {v.queue} missing from transition matrix")
        t = v.earliest
        for q_prev, t_prev in latest.items():
            sep = matrix.f(q_prev, v.queue)
            if sep > 0.0:
                t = max(t, t_prev + sep)
        latest[v.queue] = t
        out.append(ScheduleEntry(v.id, v.queue, t, finalized=False))
    return out


def fcfs_schedule(
    vehicles: Iterable[QueuedVehicle],
    matrix: QueueTransitionMatrix,
    now: float,
    finalized: Sequence[ScheduleEntry] = (),
) -> list[ScheduleEntry]:
    """First-come-first-served baseline: strict control-region entry order."""
    return schedule_in_order(sorted(vehicles, key=lambda v: (v.entered_at, v.id)),
                             matrix, finalized)


def verify_schedule(
    entries: Sequence[ScheduleEntry],
    matrix: QueueTransitionMatrix,
) -> list[Violation]:
    """Check every pair of entries against the separation matrix.

    For each pair in queues with a positive required separation, the later
    entry must trail the earlier one by at least f_q(earlier, later).
    Returns an empty list when the schedule is safe.
    """
    violations = []
    for i, a in enumerate(entries):
        for b in entries[i + 1:]:
            first, second = (a, b) if a.t_sched <= b.t_sched else (b, a)
            required = matrix.f(first.queue, second.queue)
            if required <= 0.0:
                continue
            actual = second.t_sched - first.t_sched
            if actual + 1e-9 < required:
                violations.append(Violation(first.vehicle_id, second.vehicle_id,
                                            required, actual))
    return violations
