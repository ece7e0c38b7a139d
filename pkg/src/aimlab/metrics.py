"""Evaluation metrics over logged trajectories and schedules.

A trajectory is the list of (t, x, v, action) samples produced by the
episode simulators, sampled every dt from the spawn at the region entry.
The headline quantity is the normalized position sum

    X(trj) = (1/L) * sum over samples with t <= T_s of max(x, 0)

which penalizes time spent far from the stop line; two controllers are
compared through diff = |X1 - X2|.  Positions are summed in meters and
divided by L once, so costs that agree term-for-term compare exactly.

Travel-time, schedule-deviation, rear-end-collision and decision-latency
summaries for full intersection runs live here too, bundled into
``EvalReport`` for serialization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

Trajectory = list[tuple[float, float, float, int]]

_TEPS = 1e-9


def trajectory_performance_X(trajectory: Trajectory, control_length: float,
                             t_max: float | None = None) -> float:
    """Normalized clamped position sum over samples with t <= t_max."""
    if control_length <= 0:
        raise ValueError("control_length must be positive")
    total = 0.0
    for (t, x, _, _) in trajectory:
        if t_max is not None and t > t_max + _TEPS:
            break
        total += max(x, 0.0)
    return total / control_length


def _sample_dt(trajectory: Trajectory) -> float | None:
    if len(trajectory) < 2:
        return None
    return trajectory[1][0] - trajectory[0][0]


def trajectory_diff(trj1: Trajectory, trj2: Trajectory, control_length: float,
                    t_max: float | None = None) -> float:
    """|X(trj1) - X(trj2)| on a shared sampling grid."""
    d1, d2 = _sample_dt(trj1), _sample_dt(trj2)
    if d1 is not None and d2 is not None and abs(d1 - d2) > _TEPS:
        raise ValueError(f"trajectories sampled on different grids "
                         f"({d1} vs {d2})")
    a = trajectory_performance_X(trj1, control_length, t_max)
    b = trajectory_performance_X(trj2, control_length, t_max)
    return abs(a - b)


def total_average_travel_time(travel_times) -> float | None:
    """Mean entry-to-exit duration; None when nothing completed."""
    times = list(travel_times)
    if not times:
        return None
    for t in times:
        if t <= 0.0:
            raise ValueError(f"travel time {t} is not positive")
    return sum(times) / len(times)


def deviation_count(scheduled: dict[str, float], actual: dict[str, float],
                    tolerance: float = 1.0) -> int:
    """Vehicles whose crossing missed the schedule by more than tolerance.

    Every scheduled vehicle must have an actual crossing time and vice
    versa; an unmatched id is an accounting bug upstream, not a deviation.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    missing = set(scheduled) ^ set(actual)
    if missing:
        raise ValueError(f"unmatched vehicle ids: {sorted(missing)[:5]}")
    return sum(1 for vid, t_sched in scheduled.items()
               if abs(actual[vid] - t_sched) > tolerance)


def action_latency_stats(samples) -> tuple[float, float, float]:
    """(avg, min, max) of decision-call durations in seconds."""
    values = list(samples)
    if not values:
        raise ValueError("need at least one latency sample")
    return (sum(values) / len(values), min(values), max(values))


@dataclass
class EvalReport:
    """Aggregated results of one evaluation run."""

    travel_times: dict[str, float] = field(default_factory=dict)
    mean_travel_time: float | None = None
    censored_vehicles: int = 0
    x_values: dict[str, float] = field(default_factory=dict)
    diffs: dict[str, float] = field(default_factory=dict)
    deviations: int | None = None
    collisions: int = 0
    latency_avg: float | None = None
    latency_min: float | None = None
    latency_max: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def save_trajectory_csv(path, trajectory: Trajectory) -> None:
    """Write (t, x, v, action) rows; floats via repr so they reload exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "v", "action"])
        for (t, x, v, a) in trajectory:
            writer.writerow([repr(float(t)), repr(float(x)),
                             repr(float(v)), int(a)])


def load_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "x", "v", "action"]:
            raise ValueError(f"unexpected trajectory header {header}")
        return [(float(t), float(x), float(v), int(a))
                for (t, x, v, a) in reader]


def write_summary_csv(path, rows: list[dict]) -> None:
    """Write result rows (per run/traffic level) as one CSV table."""
    if not rows:
        raise ValueError("no rows to write")
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
