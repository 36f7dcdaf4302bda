"""
Planning-oriented data augmentation.

A virtual agent is inserted into a logged frame and the ego's longitudinal
labels are shrunk by a single factor ``beta`` so that the relabeled rollout
along the (unchanged) drive path keeps at least ``d_safe`` from the agent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import AugmentInfeasible, RelabelDegenerate
from .geometry import (OrientedBox, Pose2, _interval_overlap, box_corners, distance_batch,
                       interp_along)
from .scene import AgentTrack, DisplacementSequence, Frame, PlanLabels

logger = logging.getLogger(__name__)

THREATENING = "threatening"
NON_THREATENING = "non_threatening"
NONE = "none"


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.1                      # insertion probability
    delta: float = 2.0                      # min ego displacement over 3 s, meters
    d_safe: float = 1.0                     # meters
    near_range: Tuple[float, float] = (6.0, 20.0)
    far_range: Tuple[float, float] = (30.0, 50.0)
    arrival_time_range: Tuple[float, float] = (1.0, 8.0)
    threat_prob: float = 0.5
    threat_window: float = 0.4              # +/- seconds around the ego's arrival at w
    min_waypoint_arc: float = 5.0           # waypoints closer than this are not used
    max_agent_speed: float = 15.0
    agent_dims: Tuple[float, float] = (4.5, 2.0)
    ego_dims: Tuple[float, float] = (4.5, 2.0)
    max_agents: Optional[int] = None        # None: keep the agent count fixed
    max_tries: int = 50

    def __post_init__(self):
        for name in ("alpha", "threat_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.d_safe > 0:
            raise ValueError("d_safe must be positive")
        for name in ("near_range", "far_range", "arrival_time_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must be a non-empty positive interval, got {(lo, hi)}")


@dataclass(frozen=True)
class AugmentReport:
    inserted: bool = False
    role: str = NONE
    beta: float = 1.0
    replaced_agent_id: Optional[int] = None
    agent_id: Optional[int] = None
    d_orig: float = 0.0
    d_safe_total: float = 0.0

    def to_dict(self) -> dict:
        return {"inserted": self.inserted, "role": self.role, "beta": self.beta,
                "replaced_agent_id": self.replaced_agent_id, "agent_id": self.agent_id,
                "d_orig": self.d_orig, "d_safe_total": self.d_safe_total}


def should_insert(rng: np.random.Generator, ego_displacement_3s: float, cfg: AugmentConfig) -> bool:
    if ego_displacement_3s < cfg.delta:
        return False
    # strict comparison: alpha = 0 never inserts, alpha = 1 always does
    return bool(rng.random() < cfg.alpha)


def _agent_corners(agent: AgentTrack) -> np.ndarray:
    p = agent.poses()
    return box_corners(p[:, 0], p[:, 1], p[:, 2], agent.box.length, agent.box.width)


def _ego_corners(labels: PlanLabels, cum: np.ndarray, dims) -> np.ndarray:
    xy, h = labels.drive_path.sample(cum)
    return box_corners(xy[..., 0], xy[..., 1], h, dims[0], dims[1])


def _scaled_cumulative(values: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Cumulative positions (steps 1..T) of ``values[1:] * beta`` for each beta.

    Computed exactly as ``relabel_displacements`` scales labels so both agree
    bit for bit.
    """
    return np.cumsum(values[None, 1:] * betas[:, None], axis=1)


def _step_gaps(labels: PlanLabels, agent_c: np.ndarray, cum: np.ndarray, dims) -> np.ndarray:
    """Ego-agent distances for rollouts ``cum`` of shape (..., T) at steps 1..T."""
    return distance_batch(_ego_corners(labels, cum, dims), agent_c[1:])


def _steps_clear(labels: PlanLabels, agent_c: np.ndarray, cum: np.ndarray, dims,
                 d_safe: float) -> np.ndarray:
    """Whether every step of each rollout ``cum`` (..., T) keeps ``d_safe``; shape (...).

    Cheap lower bounds settle most steps: bounding-circle separation, then the
    largest separating-axis gap. Only the rest get the exact box distance.
    """
    ego_c = _ego_corners(labels, cum, dims)
    ag = np.broadcast_to(agent_c[1:], ego_c.shape)
    r = 0.5 * (math.hypot(*dims) + np.linalg.norm(ag[..., 0, :] - ag[..., 2, :], axis=-1))
    sep = np.linalg.norm(ego_c.mean(axis=-2) - ag.mean(axis=-2), axis=-1) - r
    ok = sep >= d_safe
    near = np.flatnonzero(~ok.reshape(-1))
    if len(near):
        ec = ego_c.reshape(-1, 4, 2)[near]
        ac = ag.reshape(-1, 4, 2)[near]
        axis_gap = -np.min(_interval_overlap(ec, ac), axis=-1)
        res = axis_gap >= d_safe
        exact = (axis_gap > 0) & ~res
        if np.any(exact):
            res[exact] = distance_batch(ec[exact], ac[exact]) >= d_safe
        ok.reshape(-1)[near] = res
    return np.all(ok, axis=-1)


def _straight_agent(aid: int, start: np.ndarray, target: np.ndarray, t_arrival: float,
                    horizon: int, dt: float, dims) -> AgentTrack:
    d = target - start
    heading = math.atan2(d[1], d[0])
    vel = d / t_arrival
    future = tuple(Pose2(*(start + vel * (k * dt)), heading) for k in range(1, horizon + 1))
    return AgentTrack(aid, "vehicle", OrientedBox(Pose2(start[0], start[1], heading), *dims),
                      future, 1.0)


def sample_virtual_agent(rng: np.random.Generator, role: str, ego_labels: PlanLabels,
                         cfg: AugmentConfig, agent_id: int = -1) -> AgentTrack:
    """Straight-line, constant-speed agent aimed at a waypoint on the ego drive path.

    Threatening agents start in ``near_range`` of the ego and reach the waypoint
    within ``threat_window`` of the ego's own labeled arrival there. Non-threatening
    agents start in ``far_range``, arrive outside that window and are resampled
    until the unmodified ego rollout keeps ``d_safe`` from them. Both kinds must
    leave a stopped ego untouched.
    """
    if role not in (THREATENING, NON_THREATENING):
        raise ValueError(f"unknown role {role!r}")
    disp = ego_labels.displacements
    dt, horizon = disp.dt, disp.horizon
    cum = disp.cumulative()
    steps = [k for k in range(2, horizon + 1) if cum[k] >= cfg.min_waypoint_arc]
    if not steps:
        raise AugmentInfeasible("ego drive path too short for a waypoint")
    path = ego_labels.drive_path
    origin = path.points[0]
    heading0 = float(np.arctan2(*(path.points[1] - path.points[0])[::-1]))
    lo_t, hi_t = cfg.arrival_time_range
    parked = np.zeros((1, horizon))

    for _ in range(cfg.max_tries):
        k = int(rng.choice(steps))
        t_w = k * dt
        w = interp_along(path, float(cum[k]))
        rng_lo, rng_hi = cfg.near_range if role == THREATENING else cfg.far_range
        r = rng.uniform(rng_lo, rng_hi)
        side = 1.0 if rng.random() < 0.5 else -1.0
        phi = heading0 + side * rng.uniform(math.radians(20), math.radians(160))
        start = origin + r * np.array([math.cos(phi), math.sin(phi)])
        if role == THREATENING:
            t_arr = rng.uniform(max(dt, t_w - cfg.threat_window), t_w + cfg.threat_window)
        else:
            t_arr = rng.uniform(lo_t, hi_t)
            if abs(t_arr - t_w) <= cfg.threat_window:
                continue
        target = np.array([w.x, w.y])
        if np.hypot(*(target - start)) / t_arr > cfg.max_agent_speed:
            continue
        agent = _straight_agent(agent_id, start, target, t_arr, horizon, dt, cfg.agent_dims)
        ac = _agent_corners(agent)
        ego_now = _ego_corners(ego_labels, np.zeros(1), cfg.ego_dims)[0]
        if distance_batch(ego_now, ac[0]) < cfg.d_safe:
            continue
        if not _steps_clear(ego_labels, ac, parked, cfg.ego_dims, cfg.d_safe)[0]:
            continue
        if role == NON_THREATENING:
            if not _steps_clear(ego_labels, ac, cum[None, 1:], cfg.ego_dims, cfg.d_safe)[0]:
                continue
        return agent
    raise AugmentInfeasible(f"no admissible {role} agent after {cfg.max_tries} tries")


def insert_agent(frame: Frame, agent: AgentTrack,
                 capacity: Optional[int] = None) -> Tuple[Frame, Optional[int]]:
    """Append ``agent`` under a fresh id, evicting the least confident agent when full.

    ``capacity=None`` keeps the agent count fixed whenever the frame has agents.
    Confidence ties evict the smaller id. Returns the new frame and the evicted id.
    """
    agents = list(frame.agents)
    cap = len(agents) if capacity is None else capacity
    removed = None
    if agents and len(agents) >= cap:
        victim = min(agents, key=lambda a: (a.confidence, a.id))
        agents.remove(victim)
        removed = victim.id
    fresh = max((a.id for a in frame.agents), default=-1) + 1
    agents.append(replace(agent, id=fresh))
    return replace(frame, agents=tuple(agents)), removed


def prefix_safe_displacement(labels: PlanLabels, agent: AgentTrack, ego_box_dims,
                             d_safe: float) -> float:
    """Cumulative displacement at the last step of the safe prefix of the original rollout."""
    cum = labels.displacements.cumulative()
    gaps = _step_gaps(labels, _agent_corners(agent), cum[1:], ego_box_dims)
    unsafe = np.flatnonzero(gaps < d_safe)
    if len(unsafe) == 0:
        return float(cum[-1])
    return float(cum[unsafe[0]])  # step unsafe[0] + 1 is the first violation


def safe_total_displacement(labels: PlanLabels, agent: AgentTrack, ego_box_dims,
                            d_safe: float, resolution: int = 100) -> float:
    """Largest total displacement whose uniformly scaled rollout keeps ``d_safe``.

    Candidates are the labeled step positions and ``resolution`` even fractions
    of the original total, taken at or below the safe-prefix terminal point and
    tried from the top. Rolling the ego out at a scaled profile moves it through
    the scene at other times than the log did, so the prefix point itself may
    still come too close. The candidate set does not depend on ``d_safe``, which
    keeps the result monotone in it. Returns 0 when no positive total is safe.
    """
    values = labels.displacements.values
    d_orig = labels.displacements.total
    if d_orig <= 0:
        return 0.0
    d0 = prefix_safe_displacement(labels, agent, ego_box_dims, d_safe)
    if d0 <= 0:
        return 0.0
    ac = _agent_corners(agent)
    grid = d_orig * np.arange(1, resolution + 1) / resolution
    cand_all = np.unique(np.concatenate([labels.displacements.cumulative()[1:], grid]))
    totals = cand_all[(cand_all > 0) & (cand_all <= d0)][::-1]
    # the prefix point usually clears already; widen the batch only when it does not
    i, chunk = 0, 1
    while i < len(totals):
        cand = totals[i:i + chunk]
        ok = _steps_clear(labels, ac, _scaled_cumulative(values, cand / d_orig), ego_box_dims,
                          d_safe)
        if np.any(ok):
            return float(cand[int(np.argmax(ok))])
        i += chunk
        chunk = min(64, chunk * 4)
    return 0.0


def relabel_displacements(labels: PlanLabels, d_safe_total: float) -> Tuple[PlanLabels, float]:
    values = labels.displacements.values
    d_orig = labels.displacements.total
    if d_orig <= 0:
        raise RelabelDegenerate("original displacement total is zero")
    if not 0.0 <= d_safe_total <= d_orig + 1e-12:
        raise ValueError(f"D_safe {d_safe_total} outside [0, {d_orig}]")
    beta = min(1.0, d_safe_total / d_orig)
    if beta == 1.0:
        return labels, 1.0
    new = values.copy()
    new[1:] = values[1:] * beta
    disp = DisplacementSequence(new, labels.displacements.dt)
    return replace(labels, displacements=disp), beta


def augment_frame(frame: Frame, labels: PlanLabels, rng: np.random.Generator,
                  cfg: AugmentConfig) -> Tuple[Frame, PlanLabels, AugmentReport]:
    disp = labels.displacements
    n3 = min(disp.horizon, int(round(3.0 / disp.dt)))
    d3 = float(disp.cumulative()[n3])
    if not should_insert(rng, d3, cfg):
        return frame, labels, AugmentReport()
    role = THREATENING if rng.random() < cfg.threat_prob else NON_THREATENING
    try:
        agent = sample_virtual_agent(rng, role, labels, cfg)
    except AugmentInfeasible as exc:
        logger.info("augmentation skipped at t=%s: %s", frame.timestamp, exc)
        return frame, labels, AugmentReport()
    new_frame, removed = insert_agent(frame, agent, cfg.max_agents)
    inserted = new_frame.agents[-1]
    d_orig = disp.total
    d_safe_total = safe_total_displacement(labels, inserted, cfg.ego_dims, cfg.d_safe)
    try:
        new_labels, beta = relabel_displacements(labels, d_safe_total)
    except RelabelDegenerate:
        new_labels, beta = labels, 1.0
    report = AugmentReport(True, role, beta, removed, inserted.id, d_orig, d_safe_total)
    return new_frame, new_labels, report
