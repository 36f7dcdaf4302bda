"""Closed-loop simulation: bicycle ego, PID tracking, scripted scenarios, metrics."""

from .control import (SPEED_GAINS, STEER_GAINS, BicycleState, PIDGains, PIDState,
                      lateral_control, longitudinal_control, pid_step, step_bicycle)
from .episode import (EpisodeLog, EpisodeMetrics, compute_suite_metrics, run_episode,
                      run_suite, scan_log_collisions)
from .scenarios import FAMILIES, AgentScript, Scenario, make_route, make_suite

__all__ = [
    "SPEED_GAINS", "STEER_GAINS", "BicycleState", "PIDGains", "PIDState", "lateral_control",
    "longitudinal_control", "pid_step", "step_bicycle", "EpisodeLog", "EpisodeMetrics",
    "compute_suite_metrics", "run_episode", "run_suite", "scan_log_collisions", "FAMILIES",
    "AgentScript", "Scenario", "make_route", "make_suite",
]
