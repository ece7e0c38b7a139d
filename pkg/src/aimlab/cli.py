"""Experiment harness: configuration, orchestration, result export.

The single executable surface of the package.  Subcommands:

    train   train a controller on the single-vehicle setup; writes a
            checkpoint plus per-episode reward curves (total, terminal
            trajectory bonus, cruise sum) as three CSV files per seed
    eval    run a policy; on the ve setup against the trajectory oracle
            over a schedule grid (CSV), on the ie setup through the
            full intersection simulation (report JSON + schedule JSONL)
    verify  run the property suites (schedule safety, gradient audit,
            oracle-vs-enumeration, tabular convergence) and report
            machine-readable pass/fail
    oracle  solve the trajectory oracle over a schedule grid and write
            its cost curve with per-solve wall-clock times
    batch   execute a list of the above runs from one JSON document

Configuration is a single JSON document; individual flags override
fields; unknown keys are errors.  Every run writes ``manifest.json``
(full config, seeds, package version, git revision) sufficient to
reproduce its outputs bit for bit.  Exit codes: 0 success, 1 config
error, 2 property failure, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .baselines import dp_optimal_trajectory
from .config import ConfigError, SimConfig, TrainConfig
from .experiments import (
    LEAD_HEADWAY,
    dp_replay_comparison,
    heuristic_policy,
    net_policy,
    run_ie_simulation,
    safe_policy,
    tldqn_batch_policy,
    ve_oracle_comparison,
)
from .mdp import scheduled_lead_positions
from .learning import (
    TldqnPolicy,
    TrainingDiverged,
    TrainResult,
    train_fixed_dqn,
    train_md_dqn,
    ramp_for_budget,
    train_tldqn,
    ve_train_factory,
)
from .networks import Mlp
from .verification import (
    run_convergence_suite,
    run_dp_enumeration_suite,
    run_gradient_suite,
    run_schedule_safety_suite,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROPERTY = 2
EXIT_DIVERGED = 3

SETUPS = ("ve", "ie")
SCHEDULERS = ("polling", "fcfs")
AGENT_KINDS = ("md_dqn", "dqn_fixed", "tldqn", "heuristic", "dp_oracle")
TRAINABLE = ("md_dqn", "dqn_fixed", "tldqn")
T_SCHED_GRID = tuple(range(20, 33))
CHECKPOINT_FORMAT = 1

# Paper-scale protocol: 360k training steps, 30-minute horizon.  The
# desk defaults below divide the horizon by six and scale traffic
# levels proportionally ({530, 1080, 1750} -> {88, 180, 292}).
PAPER_STEPS = 360_000
PAPER_HORIZON = 1800.0
DESK_HORIZON = 300.0


def desk_train_preset(max_steps: int = 300_000, seed: int = 0) -> TrainConfig:
    """Training hyperparameters sized for a single desktop core.

    The reference configuration (plain SGD at 1e-5 with a schedule that
    anneals over the whole run) does not reach useful behavior inside a
    desk budget; this preset is the tuned desk equivalent: adam, an
    8-step return to push the terminal signal into the approach, and a
    fast anneal to a 0.05 floor.  The anneal deliberately finishes
    before the training factory's slack ramp begins (1/16th of the run
    versus roughly 1/10th, at about a hundred steps per episode): the
    easy zero-slack schedules early in the curriculum are only worth
    their experience when play is already near-greedy, since their
    lesson, the flat-out sprint, needs a coherent action sequence to
    show up at all.
    """
    return TrainConfig(
        max_steps=max_steps,
        n_step=8,
        optimizer="adam",
        lr=1e-3,
        batch_size=64,
        target_sync_every=500,
        min_replay=1000,
        epsilon_anneal_steps=max(1, max_steps // 16),
        epsilon_end=0.05,
        seed=seed,
    )


def parse_agent(spec: str) -> tuple[str, Optional[float]]:
    """Split an agent name like ``dqn_fixed:0.9`` into kind and gamma."""
    kind, sep, arg = spec.partition(":")
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent {spec!r}; expected one of "
                          f"{', '.join(AGENT_KINDS)}")
    if kind == "dqn_fixed":
        if not sep:
            raise ConfigError("dqn_fixed needs a discount, e.g. dqn_fixed:0.9")
        try:
            gamma = float(arg)
        except ValueError as exc:
            raise ConfigError(f"bad dqn_fixed discount {arg!r}") from exc
        if not 0.0 < gamma <= 1.0:
            raise ConfigError(f"dqn_fixed discount {gamma} outside (0, 1]")
        return kind, gamma
    if sep:
        raise ConfigError(f"agent {kind} takes no argument, got {spec!r}")
    return kind, None


def agent_slug(spec: str) -> str:
    """Filesystem-safe form of an agent name (dqn_fixed:0.9 -> dqn_fixed_0.9)."""
    return spec.replace(":", "_")


@dataclass
class ExperimentConfig:
    """One experiment: what to run, on which setup, with which seeds."""

    setup: str = "ve"
    agent: str = "md_dqn"
    scheduler: str = "polling"
    traffic_level: int = 88
    horizon: float = DESK_HORIZON
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs/latest"
    checkpoint: Optional[str] = None
    safety_filter: bool = False
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=desk_train_preset)

    def __post_init__(self) -> None:
        if self.setup not in SETUPS:
            raise ConfigError(f"unknown setup {self.setup!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}; the "
                              f"intersection runs serve exhaustively under "
                              f"'polling' or in entry order under 'fcfs'")
        parse_agent(self.agent)
        if self.traffic_level < 0:
            raise ConfigError("traffic_level must be >= 0")
        if self.horizon <= 0.0:
            raise ConfigError("horizon must be positive")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must not be empty")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(
                f"unknown experiment keys: {', '.join(sorted(unknown))}")
        kwargs = dict(d)
        if "sim" in kwargs:
            kwargs["sim"] = SimConfig.from_dict(kwargs["sim"])
        if "train" in kwargs:
            kwargs["train"] = TrainConfig.from_dict(kwargs["train"])
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out


def git_revision() -> Optional[str]:
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
    except OSError:
        return None
    if rev.returncode != 0:
        return None
    return rev.stdout.strip()


def write_manifest(cfg: ExperimentConfig, command: str) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "package_version": __version__,
        "git_revision": git_revision(),
    }
    path = os.path.join(cfg.out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_curve(path: str, logs, attr: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", attr])
        for entry in logs:
            writer.writerow([entry.episode, repr(getattr(entry, attr))])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, agent: str, result: TrainResult,
                    train_cfg: TrainConfig, sim_cfg: SimConfig) -> None:
    """One-file training snapshot: net parameters plus provenance."""
    kind, _ = parse_agent(agent)
    episodes = result.logs[-1].episode + 1 if result.logs else 0
    meta = {
        "format": CHECKPOINT_FORMAT,
        "agent": agent,
        "steps_done": result.steps,
        "episodes_done": episodes,
        "train": dataclasses.asdict(train_cfg),
        "sim": dataclasses.asdict(sim_cfg),
    }
    arrays: dict[str, np.ndarray] = {"meta": np.array(json.dumps(meta))}
    if kind == "tldqn":
        policy: TldqnPolicy = result.extra["policy"]
        arrays["cruise_flat"] = policy.cruise_net.flat
        arrays["trajectory_flat"] = policy.trajectory_net.flat
        arrays["sizes"] = np.array(policy.cruise_net.sizes)
    else:
        arrays["flat"] = result.net.flat
        arrays["sizes"] = np.array(result.net.sizes)
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> dict:
    """Checkpoint contents with the networks rebuilt."""
    try:
        data = np.load(path if path.endswith(".npz") else path + ".npz",
                       allow_pickle=False)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path!r}: {exc}") from exc
    meta = json.loads(str(data["meta"]))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format in {path!r}")
    sizes = tuple(int(s) for s in data["sizes"])
    kind, _ = parse_agent(meta["agent"])
    out = dict(meta)
    if kind == "tldqn":
        out["nets"] = (Mlp(sizes, flat=data["cruise_flat"]),
                       Mlp(sizes, flat=data["trajectory_flat"]))
    else:
        out["net"] = Mlp(sizes, flat=data["flat"])
    return out


def _check_agent_match(expected: str, meta_agent: str, path: str) -> None:
    if expected != meta_agent:
        raise ConfigError(f"checkpoint {path!r} was trained for agent "
                          f"{meta_agent!r}, not {expected!r}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def run_train(cfg: ExperimentConfig) -> int:
    """Train the configured agent for every seed; emit curves + checkpoint."""
    if cfg.setup != "ve":
        raise ConfigError("train runs on the ve setup")
    kind, gamma = parse_agent(cfg.agent)
    if kind not in TRAINABLE:
        raise ConfigError(f"agent {cfg.agent} is not trainable")
    write_manifest(cfg, "train")

    resume = None
    if cfg.checkpoint is not None:
        resume = load_checkpoint(cfg.checkpoint)
        _check_agent_match(cfg.agent, resume["agent"], cfg.checkpoint)

    for seed in cfg.seeds:
        train_cfg = replace(cfg.train, seed=seed)
        factory = ve_train_factory(cfg.sim, seed,
                                   ramp_episodes=ramp_for_budget(
                                       train_cfg.max_steps))
        kwargs: dict = {}
        if resume is not None:
            kwargs["start_step"] = resume["steps_done"]
            kwargs["start_episode"] = resume["episodes_done"]
            if kind == "tldqn":
                kwargs["init_nets"] = resume["nets"]
            else:
                kwargs["init_net"] = resume["net"]
        if kind == "md_dqn":
            result = train_md_dqn(factory, train_cfg, cfg.sim, **kwargs)
        elif kind == "dqn_fixed":
            result = train_fixed_dqn(factory, train_cfg, cfg.sim, gamma,
                                     **kwargs)
        else:
            result = train_tldqn(factory, train_cfg, cfg.sim, **kwargs)

        seed_dir = os.path.join(cfg.out_dir, agent_slug(cfg.agent),
                                f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        save_checkpoint(os.path.join(seed_dir, "checkpoint.npz"),
                        cfg.agent, result, train_cfg, cfg.sim)
        _write_curve(os.path.join(seed_dir, "curve_total.csv"),
                     result.logs, "total_reward")
        _write_curve(os.path.join(seed_dir, "curve_r1_end.csv"),
                     result.logs, "r1_end")
        _write_curve(os.path.join(seed_dir, "curve_r2.csv"),
                     result.logs, "r2_sum")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _policy_from_config(cfg: ExperimentConfig):
    """Batched observation->action policy for the configured agent."""
    kind, _ = parse_agent(cfg.agent)
    if kind == "heuristic":
        return heuristic_policy(cfg.sim)
    if kind == "dp_oracle":
        raise ConfigError("dp_oracle is not a steppable policy here")
    if cfg.checkpoint is None:
        raise ConfigError(f"agent {cfg.agent} needs --checkpoint")
    ckpt = load_checkpoint(cfg.checkpoint)
    _check_agent_match(cfg.agent, ckpt["agent"], cfg.checkpoint)
    if kind == "tldqn":
        return tldqn_batch_policy(TldqnPolicy(*ckpt["nets"]))
    return net_policy(ckpt["net"])


def _write_ve_grid_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_sched", "outcome", "x_policy", "x_oracle", "diff"])
        for row in rows:
            writer.writerow([row["t_sched"], row["outcome"],
                             repr(row["x_policy"]),
                             "" if row["x_oracle"] is None
                             else repr(row["x_oracle"]),
                             "" if row["diff"] is None else repr(row["diff"])])


def run_eval(cfg: ExperimentConfig) -> int:
    """Evaluate the configured agent; write reports under the out dir."""
    write_manifest(cfg, "eval")
    kind, _ = parse_agent(cfg.agent)

    if cfg.setup == "ve":
        for seed in cfg.seeds:
            if kind == "dp_oracle":
                rows = dp_replay_comparison(cfg.sim, T_SCHED_GRID, seed=seed)
            else:
                policy = _policy_from_config(cfg)
                rows = ve_oracle_comparison(cfg.sim, policy, T_SCHED_GRID,
                                            seed=seed)
            _write_ve_grid_csv(
                os.path.join(cfg.out_dir, f"ve_grid_seed{seed}.csv"), rows)
            diffs = [r["diff"] for r in rows if r["diff"] is not None]
            summary = {
                "agent": cfg.agent,
                "seed": seed,
                "schedules": len(rows),
                "on_time": sum(1 for r in rows
                               if r["outcome"] == "reached_on_time"),
                "median_diff": float(np.median(diffs)) if diffs else None,
                "diff_below_5": sum(1 for d in diffs if d < 5.0),
            }
            path = os.path.join(cfg.out_dir, f"ve_summary_seed{seed}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return EXIT_OK

    if kind == "dp_oracle":
        raise ConfigError("dp_oracle evaluates on the ve setup only")
    policy = _policy_from_config(cfg)
    if cfg.safety_filter:
        policy = safe_policy(policy, cfg.sim)
    summary_rows = []
    for seed in cfg.seeds:
        result = run_ie_simulation(cfg.sim, policy, scheduler=cfg.scheduler,
                                   traffic_level=cfg.traffic_level,
                                   horizon=cfg.horizon, seed=seed)
        report_path = os.path.join(cfg.out_dir, f"report_seed{seed}.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(result.report.to_json())
            fh.write("\n")
        sched_path = os.path.join(cfg.out_dir, f"schedule_seed{seed}.jsonl")
        with open(sched_path, "w", encoding="utf-8") as fh:
            for event in result.schedule_events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        report = result.report
        summary_rows.append([
            seed, cfg.scheduler, cfg.traffic_level,
            "" if report.mean_travel_time is None
            else repr(report.mean_travel_time),
            len(report.travel_times), report.censored_vehicles,
            report.collisions,
            "" if report.deviations is None else report.deviations,
        ])
    with open(os.path.join(cfg.out_dir, "ie_summary.csv"), "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "scheduler", "traffic_level",
                         "mean_travel_time", "crossed", "censored",
                         "collisions", "deviations"])
        writer.writerows(summary_rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def run_verify(cfg: ExperimentConfig) -> int:
    """Run all property suites; exit 2 when any of them fails."""
    write_manifest(cfg, "verify")
    report: dict = {"suites": {}}

    safety = run_schedule_safety_suite(1000)
    report["suites"]["schedule_safety"] = {
        "passed": safety["violations"] == 0,
        "instances": safety["instances"],
        "vehicles_scheduled": safety["vehicles_scheduled"],
        "violations": safety["violations"],
    }

    grad = run_gradient_suite(100)
    report["suites"]["gradient_check"] = {
        "passed": grad["max_rel_err"] < 1e-4,
        "networks": grad["n_nets"],
        "max_rel_err": grad["max_rel_err"],
    }

    enum = run_dp_enumeration_suite(80)
    report["suites"]["oracle_vs_enumeration"] = {
        "passed": (enum["feasible"] >= 50
                   and not enum["cost_mismatches"]
                   and not enum["feasibility_mismatches"]),
        "feasible": enum["feasible"],
        "infeasible": enum["infeasible"],
        "cost_mismatches": len(enum["cost_mismatches"]),
        "feasibility_mismatches": len(enum["feasibility_mismatches"]),
    }

    conv = run_convergence_suite()
    levels = {}
    conv_ok = True
    for gp, stats in conv.items():
        ok = (stats["final_error"] < 1e-6
              and stats["max_ratio"] <= gp + 1e-12)
        conv_ok = conv_ok and ok
        levels[str(gp)] = {"passed": ok, **stats}
    report["suites"]["tabular_convergence"] = {"passed": conv_ok,
                                               "levels": levels}

    report["passed"] = all(s["passed"] for s in report["suites"].values())
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    with open(os.path.join(cfg.out_dir, "verify_report.json"), "w",
              encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def run_oracle(cfg: ExperimentConfig) -> int:
    """Solve the trajectory oracle over the schedule grid; write its curve."""
    if cfg.setup != "ve":
        raise ConfigError("oracle runs on the ve setup")
    write_manifest(cfg, "oracle")
    L = cfg.sim.control_length
    path = os.path.join(cfg.out_dir, "oracle_x.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_sched", "feasible", "x_oracle", "steps",
                         "solve_seconds"])
        for ts in T_SCHED_GRID:
            steps = int(round(ts / cfg.sim.dt))
            lead_front = L - 30.0 - cfg.sim.vehicle_length
            lead = scheduled_lead_positions(lead_front, cfg.sim.v_max,
                                            ts - LEAD_HEADWAY, steps + 1,
                                            cfg.sim)
            t0 = time.perf_counter()
            sol = dp_optimal_trajectory(cfg.sim, float(ts), cfg.sim.v_max,
                                        lead)
            elapsed = time.perf_counter() - t0
            writer.writerow([
                ts, int(sol is not None),
                "" if sol is None else repr(sol.cost / L),
                "" if sol is None else len(sol.actions),
                f"{elapsed:.6f}",
            ])
    return EXIT_OK


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------

_COMMANDS = {}


def run_batch(path: str) -> int:
    """Execute a JSON list of runs sequentially; worst exit code wins."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read batch file {path!r}: {exc}") from exc
    if not isinstance(doc, dict) or "runs" not in doc:
        raise ConfigError("batch document must be an object with a "
                          "'runs' array")
    statuses = []
    worst = EXIT_OK
    for i, entry in enumerate(doc["runs"]):
        if not isinstance(entry, dict) or "command" not in entry:
            raise ConfigError(f"batch run {i} must carry a 'command'")
        command = entry["command"]
        if command not in _COMMANDS:
            raise ConfigError(f"batch run {i}: unknown command {command!r}")
        cfg = ExperimentConfig.from_dict(entry.get("config", {}))
        code = _COMMANDS[command](cfg)
        statuses.append({"run": i, "command": command,
                         "out_dir": cfg.out_dir, "exit_code": code})
        worst = max(worst, code)
    summary = {"runs": statuses, "exit_code": worst}
    out_dir = doc.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "batch_summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return worst


_COMMANDS.update({
    "train": run_train,
    "eval": run_eval,
    "verify": run_verify,
    "oracle": run_oracle,
})


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON experiment config")
    sub.add_argument("--seed", type=int, help="single seed (replaces seeds)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--steps", type=int, help="training step budget")
    sub.add_argument("--setup", choices=SETUPS)
    sub.add_argument("--agent", help="md_dqn | dqn_fixed:G | tldqn | "
                                     "heuristic | dp_oracle")
    sub.add_argument("--scheduler", choices=SCHEDULERS)
    sub.add_argument("--traffic-level", type=int,
                     help="vehicles over the horizon")
    sub.add_argument("--horizon", type=float, help="simulation seconds")
    sub.add_argument("--checkpoint", help="checkpoint to evaluate or resume")
    sub.add_argument("--safety-filter", action="store_true", default=None,
                     help="wrap the policy in the brake-safe filter")
    sub.add_argument("--paper-scale", action="store_true",
                     help="paper protocol: 360k steps, 1800 s horizon")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the JSON document, then individual flag overrides."""
    doc: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: "
                              f"{exc}") from exc
    cfg = ExperimentConfig.from_dict(doc)

    updates: dict = {}
    if args.paper_scale:
        updates["horizon"] = PAPER_HORIZON
        if "train" not in doc:
            updates["train"] = desk_train_preset(PAPER_STEPS)
    if args.seed is not None:
        updates["seeds"] = (args.seed,)
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.setup is not None:
        updates["setup"] = args.setup
    if args.agent is not None:
        updates["agent"] = args.agent
    if args.scheduler is not None:
        updates["scheduler"] = args.scheduler
    if args.traffic_level is not None:
        updates["traffic_level"] = args.traffic_level
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if args.checkpoint is not None:
        updates["checkpoint"] = args.checkpoint
    if args.safety_filter is not None:
        updates["safety_filter"] = args.safety_filter
    if updates:
        cfg = replace(cfg, **updates)
    if args.steps is not None:
        if args.steps <= 0:
            raise ConfigError("--steps must be positive")
        cfg = replace(cfg, train=replace(cfg.train, max_steps=args.steps))
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="aimlab",
        description="intersection-management experiment harness")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "verify", "oracle"):
        sub = subparsers.add_parser(name)
        _add_common_flags(sub)
    batch = subparsers.add_parser("batch")
    batch.add_argument("--config", required=True, help="batch JSON document")

    args = parser.parse_args(argv)
    try:
        if args.command == "batch":
            return run_batch(args.config)
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
