"""Desk-scale autonomous intersection testbed.

Subsystems:

* :mod:`aimlab.kinematics` -- discrete-time longitudinal vehicle model and
  arrival processes for a single intersection approach.
* :mod:`aimlab.scheduling` -- polling-based multi-lane intersection
  scheduler with queue transition (separation) matrices, plus an FCFS
  reference scheduler and a schedule verifier.
* :mod:`aimlab.mdp` -- the two-objective trajectory/cruise control MDP a
  vehicle agent is trained on.
* :mod:`aimlab.networks` -- from-scratch MLP function approximator and a
  binned tabular Q alternative behind the same interface.
* :mod:`aimlab.learning` -- multi-discount Q-learning: tabular updates,
  DQN-style targets, the replay trainer, and fixed-point diagnostics.
* :mod:`aimlab.baselines` -- dynamic-programming trajectory oracle,
  bisection heuristic controller and lexicographic two-net action rule.
* :mod:`aimlab.metrics` -- trajectory performance, travel time, schedule
  deviation and latency metrics.
* :mod:`aimlab.cli` -- train/eval/verify/batch/oracle command line harness.
"""

__version__ = "0.1.0"
