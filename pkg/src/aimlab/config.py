"""Configuration types shared across the simulator, trainer and CLI.

All configs are plain dataclasses with eager validation.  ``from_dict``
constructors are strict: unknown keys raise :class:`ConfigError` so that a
typo in a JSON config fails fast instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration values."""


KMH = 1.0 / 3.6  # km/h expressed in m/s


@dataclass
class SimConfig:
    """Physical and numerical constants of the control region.

    Defaults describe the reference setup: a 400 m approach, 80 km/h speed
    limit, 2 m/s^2 acceleration envelope and a 0.2 s step.
    """

    dt: float = 0.2                      # s
    v_max: float = 80.0 * KMH            # m/s
    a_max: float = 2.0                   # m/s^2
    control_length: float = 400.0        # m, region upstream of the stop line
    intersection_width: float = 14.0     # m, crossing distance inside the box
    vehicle_length: float = 5.0          # m
    vehicle_width: float = 2.0           # m
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.v_max <= 0.0:
            raise ConfigError(f"v_max must be positive, got {self.v_max}")
        if self.a_max <= 0.0:
            raise ConfigError(f"a_max must be positive, got {self.a_max}")
        for name in ("control_length", "intersection_width",
                     "vehicle_length", "vehicle_width"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")

    @property
    def dv(self) -> float:
        """Speed change of one full-throttle step (the speed resolution)."""
        return self.a_max * self.dt

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimConfig":
        return _strict_build(cls, d)


@dataclass
class TrainConfig:
    """Hyperparameters of the replay-buffer Q-learning trainer.

    The defaults mirror the reference configuration: squared loss on a
    6-64-64-3 network, plain SGD at 1e-5, batch 64, replay capacity 1e5,
    target sync every 1000 steps and a linear exploration schedule that
    reaches zero at 120000 steps.  Desk-scale presets in the CLI override
    the optimizer and schedule to fit shorter budgets.
    """

    max_steps: int = 120_000
    n_step: int = 1
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-5
    optimizer: str = "sgd"               # "sgd" or "adam"
    batch_size: int = 64
    replay_capacity: int = 100_000
    target_sync_every: int = 1000
    epsilon_anneal_steps: int = 120_000
    epsilon_end: float = 0.0             # exploration floor after the anneal
    min_replay: int = 1000               # steps before updates begin
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_steps <= 0:
            raise ConfigError("max_steps must be positive")
        if self.n_step < 1:
            raise ConfigError("n_step must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ConfigError("replay_capacity must fit at least one batch")
        if self.target_sync_every < 1:
            raise ConfigError("target_sync_every must be >= 1")
        if self.epsilon_anneal_steps < 1:
            raise ConfigError("epsilon_anneal_steps must be >= 1")
        if not 0.0 <= self.epsilon_end <= 1.0:
            raise ConfigError("epsilon_end must be in [0, 1]")
        if self.lr < 0.0:
            raise ConfigError("lr must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return _strict_build(cls, d)


def _strict_build(cls, d: dict[str, Any]):
    """Build a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(
            f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_json_config(path: str) -> dict[str, Any]:
    """Read a JSON config file, raising ConfigError on any problem."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top-level config must be a JSON object")
    return doc
