"""
Closed-loop episode runner, episode logs and suite metrics.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NoCandidates, PathExhausted
from ..geometry import OrientedBox, Polyline, Pose2, box_corners, distance_batch, overlap_batch
from ..planner import CandidatePlan
from ..scene import DT, AgentTrack, EgoRecord, Frame, MapLine
from .control import (SPEED_GAINS, STEER_GAINS, BicycleState, PIDGains, PIDState,
                      lateral_control, longitudinal_control, step_bicycle)
from .scenarios import Scenario

PlannerFn = Callable[[Frame, Polyline], CandidatePlan]

METRICS_HEADER = ("scenario", "seed", "success", "collided", "completion", "avg_speed", "comfort")
PHANTOM_ID_BASE = 10_000
STOP_LINE_APPROACH = 8.0   # meters; hold time accrues while the ego front is this close


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    collided: bool
    route_completion: float
    avg_speed: float
    comfort_proxy: float
    reason: str = ""

    def __post_init__(self):
        if not 0.0 <= self.route_completion <= 1.0:
            raise ValueError("route_completion must lie in [0, 1]")


@dataclass
class StepRecord:
    t: float
    ego: BicycleState
    agents: np.ndarray          # (A, 6): id, x, y, heading, length, width (real agents only)
    categories: Tuple[str, ...]
    plan: Optional[CandidatePlan]
    cmd: Tuple[float, float]
    min_gap: float

    def to_dict(self) -> dict:
        e = self.ego
        plan = None
        if self.plan is not None:
            p = self.plan
            plan = {"path": p.path.points.tolist(),
                    "disps": p.displacements.values.tolist(),
                    "scores": [p.path_score, p.long_score]}
        return {"t": self.t,
                "ego": {"x": e.pose.x, "y": e.pose.y, "heading": e.pose.heading, "speed": e.speed},
                "agents": [{"id": int(a[0]), "category": c, "x": a[1], "y": a[2], "heading": a[3],
                            "length": a[4], "width": a[5]}
                           for a, c in zip(self.agents.tolist(), self.categories)],
                "plan": plan, "cmd": {"steer": self.cmd[0], "accel": self.cmd[1]}}


@dataclass
class EpisodeLog:
    scenario: str
    ego_dims: Tuple[float, float]
    steps: List[StepRecord] = field(default_factory=list)
    # (t, speed, min gap) per step, kept even when full records are off
    trace: List[Tuple[float, float, float]] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict()) + "\n" for s in self.steps)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    def series(self) -> np.ndarray:
        """``(N, 3)`` rows of time, speed and minimum distance to a real agent."""
        return np.array(self.trace, dtype=float).reshape(-1, 3)


def load_episode_log(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def scan_log_collisions(records: Sequence[dict], ego_dims: Tuple[float, float]) -> bool:
    """Independent post-hoc check: any step where the ego box overlaps an agent box."""
    from ..geometry import boxes_overlap
    for r in records:
        e = r["ego"]
        ego = OrientedBox(Pose2(e["x"], e["y"], e["heading"]), *ego_dims)
        for a in r["agents"]:
            box = OrientedBox(Pose2(a["x"], a["y"], a["heading"]), a["length"], a["width"])
            if boxes_overlap(ego, box):
                return True
    return False


def _stop_phantom(route: Polyline, arc: float, pid: int, horizon: int) -> AgentTrack:
    xy, h = route.sample(arc + 0.5)
    pose = Pose2(xy[0], xy[1], float(h))
    return AgentTrack(pid, "vehicle", OrientedBox(pose, 1.0, 7.0), (pose,) * horizon, 1.0)


def run_episode(scenario: Scenario, planner_fn: PlannerFn,
                gains: Tuple[PIDGains, PIDGains] = (STEER_GAINS, SPEED_GAINS),
                dt_sim: float = 0.05, replan_every: float = DT, horizon: int = 15,
                ego_dims: Tuple[float, float] = (4.5, 2.0),
                record: bool = True) -> Tuple[EpisodeLog, EpisodeMetrics]:
    """Simulate one scenario in closed loop.

    Every ``replan_every`` seconds a frame is built with perfect agent futures
    and handed to ``planner_fn``; both PID loops run every ``dt_sim``. The
    episode ends on collision, route completion or timeout.
    """
    if not dt_sim > 0:
        raise ValueError("dt_sim must be positive")
    steer_gains, speed_gains = gains
    route = scenario.route
    ego = scenario.ego_start
    scripts = scenario.agents
    triggers: Dict[int, Optional[float]] = {i: None for i in range(len(scripts))}
    stop_hold = [0.0] * len(scenario.stop_lines)
    lat_state, lon_state = PIDState(), PIDState()
    log = EpisodeLog(scenario.name, tuple(ego_dims))
    n_steps = int(round(scenario.duration / dt_sim))
    replan_k = max(1, int(round(replan_every / dt_sim)))
    half_len = ego_dims[0] / 2

    plan: Optional[CandidatePlan] = None
    speeds = [ego.speed]
    collided = False
    reason = "timeout"
    completion = 0.0

    def agent_state(t: float) -> np.ndarray:
        rows = []
        for i, sc in enumerate(scripts):
            p = sc.pose_at(t, triggers[i])
            rows.append((i, p.x, p.y, p.heading, *sc.dims))
        return np.array(rows, dtype=float).reshape(-1, 6)

    def ego_arc(state: BicycleState) -> float:
        return route.project([state.pose.x, state.pose.y])

    def min_gap(state: BicycleState, agents: np.ndarray) -> float:
        if len(agents) == 0:
            return math.inf
        ec = box_corners(state.pose.x, state.pose.y, state.pose.heading, *ego_dims)
        ac = box_corners(agents[:, 1], agents[:, 2], agents[:, 3], agents[:, 4], agents[:, 5])
        return float(np.min(distance_batch(ec[None], ac)))

    cats = tuple(sc.category for sc in scripts)
    for k in range(n_steps + 1):
        t = k * dt_sim
        s_ego = ego_arc(ego)
        # cut-in triggers fire on the ego's arc gap to the agent
        for i, sc in enumerate(scripts):
            gap = sc.params.get("trigger_gap")
            if gap is not None and triggers[i] is None and sc.arc_at(t) - s_ego <= gap:
                triggers[i] = t
        agents_now = agent_state(t)

        if k % replan_k == 0:
            tracks = [sc.track(i, t, triggers[i], horizon, DT) for i, sc in enumerate(scripts)]
            for j, (arc, hold) in enumerate(scenario.stop_lines):
                if stop_hold[j] < hold:
                    tracks.append(_stop_phantom(route, arc, PHANTOM_ID_BASE + j, horizon))
            frame = Frame(t, EgoRecord(ego.pose, ego.speed, ()), tuple(tracks),
                          (MapLine("lane", route),), scenario.speed_limit)
            try:
                plan = planner_fn(frame, route)
            except NoCandidates as exc:
                reason = f"no_candidates: {exc}"
                break

        try:
            steer, lat_state = lateral_control(ego, plan.path, steer_gains, lat_state, dt_sim)
        except PathExhausted:
            steer = 0.0
        accel, lon_state = longitudinal_control(ego, plan.displacements, speed_gains, lon_state, dt_sim)
        gap_now = min_gap(ego, agents_now)
        log.trace.append((t, ego.speed, gap_now))
        if record:
            log.steps.append(StepRecord(t, ego, agents_now, cats, plan, (steer, accel), gap_now))

        if gap_now <= 0.0 and len(agents_now):
            ec = box_corners(ego.pose.x, ego.pose.y, ego.pose.heading, *ego_dims)
            ac = box_corners(agents_now[:, 1], agents_now[:, 2], agents_now[:, 3],
                             agents_now[:, 4], agents_now[:, 5])
            if np.any(overlap_batch(ec[None], ac)):
                collided = True
                reason = "collision"
                break
        completion = min(1.0, max(completion, (s_ego + half_len) / route.length))
        if s_ego + half_len >= route.length - 1e-9:
            completion = 1.0
            reason = "completed"
            break
        for j, (arc, hold) in enumerate(scenario.stop_lines):
            if 0.0 <= arc - (s_ego + half_len) <= STOP_LINE_APPROACH and ego.speed < 0.5:
                stop_hold[j] += dt_sim
        if k == n_steps:
            break
        ego = step_bicycle(ego, (steer, accel), dt_sim)
        speeds.append(ego.speed)

    v = np.asarray(speeds)
    acc = np.diff(v) / dt_sim
    jerk = np.diff(acc) / dt_sim
    metrics = EpisodeMetrics(success=(reason == "completed"), collided=collided,
                             route_completion=float(completion), avg_speed=float(v.mean()),
                             comfort_proxy=float(np.mean(np.abs(jerk))) if len(jerk) else 0.0,
                             reason=reason)
    return log, metrics


def compute_suite_metrics(metrics: Sequence[EpisodeMetrics]) -> dict:
    if not metrics:
        raise ValueError("no episodes to aggregate")
    n = len(metrics)
    return {"episodes": n,
            "success_rate": sum(m.success for m in metrics) / n,
            "collision_rate": sum(m.collided for m in metrics) / n,
            "mean_completion": float(np.mean([m.route_completion for m in metrics])),
            "mean_comfort": float(np.mean([m.comfort_proxy for m in metrics])),
            "mean_speed": float(np.mean([m.avg_speed for m in metrics]))}


def _run_one(args):
    scenario, planner_fn, gains, dt_sim, record = args
    return run_episode(scenario, planner_fn, gains, dt_sim, record=record)


def run_suite(suite: Sequence[Tuple[Scenario, int]], planner_fn: PlannerFn,
              gains: Tuple[PIDGains, PIDGains] = (STEER_GAINS, SPEED_GAINS),
              dt_sim: float = 0.05, workers: int = 1,
              record: bool = False) -> List[Tuple[EpisodeLog, EpisodeMetrics]]:
    """Run every scenario; results come back in suite order regardless of ``workers``."""
    jobs = [(sc, planner_fn, gains, dt_sim, record) for sc, _ in suite]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def metrics_csv(rows: Sequence[Tuple[str, int, EpisodeMetrics]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for name, seed, m in rows:
        w.writerow([name, seed, int(m.success), int(m.collided), f"{m.route_completion:.6f}",
                    f"{m.avg_speed:.6f}", f"{m.comfort_proxy:.6f}"])
    return buf.getvalue()


def read_metrics_csv(text: str) -> List[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != METRICS_HEADER:
        raise ValueError(f"unexpected metrics header {reader.fieldnames}")
    return list(reader)
