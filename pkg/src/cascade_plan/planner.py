"""
Cascaded candidate planning.

Candidates pair a drive-path anchor (placed at the ego pose) with a
displacement anchor. Displacements are refined by an exhaustive search over
uniform scalings of the anchor profile, scored with a per-step collision
penalty along the path rollout, and selected hierarchically: best path first,
then the best displacement sequence on that path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ClusterError, NoCandidates
from .geometry import Polyline, Pose2, box_corners, overlap_batch
from .scene import DT, DEFAULT_P, DEFAULT_T, DisplacementSequence, Frame

# look-ahead reach after one second, meters
DEFAULT_LOOKAHEADS = (0.25, 1.7, 4.0, 6.0, 8.5)
SCALE_GRID = np.arange(151) / 100.0


@dataclass(frozen=True)
class PathAnchorSet:
    """Drive-path prototypes in the ego frame (x forward, y left)."""
    anchors: Tuple[Polyline, ...]
    inertia_history: Tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.anchors)

    def to_array(self) -> np.ndarray:
        return np.stack([a.points for a in self.anchors])


@dataclass(frozen=True)
class DisplacementAnchors:
    lookaheads: Tuple[float, ...] = DEFAULT_LOOKAHEADS
    horizon: int = DEFAULT_T
    dt: float = DT

    @property
    def values(self) -> np.ndarray:
        """``(M, T+1)`` per-step displacements; anchor m covers ``lookaheads[m]`` per second."""
        per_step = np.asarray(self.lookaheads, dtype=float) * self.dt
        return np.repeat(per_step[:, None], self.horizon + 1, axis=1)

    def __len__(self) -> int:
        return len(self.lookaheads)


@dataclass(frozen=True)
class CostConfig:
    w_progress: float = 1.0
    w_collision: float = 100.0
    w_smooth: float = 1.0
    collision_check_dt: float = DT
    ego_dims: Tuple[float, float] = (4.5, 2.0)
    clearance: float = 0.0   # meters added on every side of the ego box when checking overlap

    def __post_init__(self):
        ws = (self.w_progress, self.w_collision, self.w_smooth)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("cost weights must be >= 0 with at least one positive")
        if self.clearance < 0:
            raise ValueError("clearance must be >= 0")
        if not 0 < self.collision_check_dt <= DT:
            raise ValueError(f"collision_check_dt must lie in (0, {DT}]")

    @property
    def substeps(self) -> int:
        """Overlap samples per label step."""
        return max(1, int(round(DT / self.collision_check_dt)))

    @property
    def check_dims(self) -> Tuple[float, float]:
        """Ego footprint used by the overlap check."""
        return (self.ego_dims[0] + 2 * self.clearance, self.ego_dims[1] + 2 * self.clearance)


@dataclass(frozen=True)
class CandidatePlan:
    path: Polyline
    path_score: float
    displacements: DisplacementSequence
    long_score: float
    anchor_ids: Tuple[int, int]
    # path used for longitudinal reasoning; None means ``path`` itself
    long_path: Optional[Polyline] = field(default=None, compare=False)
    overlap_steps: int = 0

    @property
    def rollout_path(self) -> Polyline:
        return self.path if self.long_path is None else self.long_path


# --------------------------------------------------------------------------
# Anchors


def _inertia(x: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((x - centers[labels]) ** 2))


def cluster_path_anchors(gt_paths: Sequence[Polyline], k: int, iters: int,
                         rng: np.random.Generator) -> PathAnchorSet:
    """k-means (k-means++ seeding, Lloyd updates) over paths flattened to 2P vectors."""
    if not gt_paths:
        raise ClusterError("no ground-truth paths to cluster")
    n_pts = {len(p) for p in gt_paths}
    if len(n_pts) != 1:
        raise ClusterError(f"paths must share a point count, got {sorted(n_pts)}")
    x = np.stack([p.points.reshape(-1) for p in gt_paths])
    distinct = np.unique(x, axis=0)
    if k < 1 or k > len(distinct):
        raise ClusterError(f"k={k} exceeds the {len(distinct)} distinct paths")

    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        if d2.sum() <= 0:
            remaining = [r for r in distinct if not any(np.array_equal(r, c) for c in centers)]
            centers.append(remaining[0])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / d2.sum())])
    centers = np.array(centers)

    history = []
    labels = None
    for _ in range(max(1, iters)):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new_labels = np.argmin(d2, axis=1)
        history.append(_inertia(x, centers, new_labels))
        for j in range(k):
            members = x[new_labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served sample
                far = int(np.argmax(np.min(d2, axis=1)))
                centers[j] = x[far]
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
    history.append(_inertia(x, centers, np.argmin(d2, axis=1)))
    p = len(gt_paths[0])
    anchors = tuple(Polyline(c.reshape(p, 2)) for c in centers)
    return PathAnchorSet(anchors, tuple(history))


# --------------------------------------------------------------------------
# Rollouts


def target_path_from_route(route: Polyline, pose: Pose2, n_points: int = DEFAULT_P,
                           spacing: float = 2.0) -> Polyline:
    """Route section ahead of the ego, sampled like a drive path."""
    s0 = route.project([pose.x, pose.y])
    xy, _ = route.sample(s0 + spacing * np.arange(n_points))
    return Polyline(xy)


def agent_corner_stack(frame: Frame, horizon: int = DEFAULT_T) -> np.ndarray:
    """``(A, T+1, 4, 2)`` agent boxes over steps 0..T; short futures hold their last pose."""
    if not frame.agents:
        return np.zeros((0, horizon + 1, 4, 2))
    out = []
    for a in frame.agents:
        poses = a.poses()
        if len(poses) < horizon + 1:
            poses = np.concatenate([poses, np.repeat(poses[-1:], horizon + 1 - len(poses), 0)])
        poses = poses[: horizon + 1]
        out.append(box_corners(poses[:, 0], poses[:, 1], poses[:, 2], a.box.length, a.box.width))
    return np.stack(out)


def ego_corner_rollout(path: Polyline, cum: np.ndarray, dims) -> np.ndarray:
    xy, h = path.sample(cum)
    return box_corners(xy[..., 0], xy[..., 1], h, dims[0], dims[1])


def count_overlap_steps(path: Polyline, cum: np.ndarray, agents_c: np.ndarray, dims,
                        substeps: int = 1) -> np.ndarray:
    """Steps 1..T at which the ego rollout ``cum`` (S, T) overlaps any agent; returns (S,).

    With ``substeps > 1`` each step interval is also checked at evenly spaced
    intermediate times (ego placed at the interpolated displacement along its
    path, agent corners interpolated linearly), so fast crossers cannot slip
    between samples. A step counts once if any of its samples overlaps.
    """
    cum = np.atleast_2d(cum)
    if agents_c.shape[0] == 0:
        return np.zeros(cum.shape[0], dtype=int)
    s, t = cum.shape
    if substeps <= 1:
        ego = ego_corner_rollout(path, cum, dims)                   # (S, T, 4, 2)
        hit = overlap_batch(ego[:, None], agents_c[None, :, 1:t + 1])    # (S, A, T)
        return np.sum(np.any(hit, axis=1), axis=-1)
    frac = np.arange(1, substeps + 1) / substeps
    full = np.concatenate([np.zeros((s, 1)), cum], axis=1)
    cum_f = full[:, :-1, None] + np.diff(full, axis=1)[..., None] * frac         # (S, T, k)
    ag = agents_c[:, : t + 1]
    ag_f = ag[:, :-1, None] + np.diff(ag, axis=1)[:, :, None] * frac[:, None, None]  # (A, T, k, 4, 2)
    ego = ego_corner_rollout(path, cum_f.reshape(s, t * substeps), dims)
    hit = overlap_batch(ego[:, None], ag_f.reshape(len(ag), t * substeps, 4, 2)[None])
    hit = np.any(hit, axis=1).reshape(s, t, substeps)
    return np.sum(np.any(hit, axis=-1), axis=-1)


def progress_score(values: np.ndarray, cfg: CostConfig) -> np.ndarray:
    """Cost terms without the collision part, negated: higher is better."""
    v = np.atleast_2d(values)
    prog = np.sum(v[:, 1:], axis=1)
    smooth = np.sum(np.diff(v, axis=1) ** 2, axis=1)
    return cfg.w_progress * prog - cfg.w_smooth * smooth


def plan_cost(values: np.ndarray, overlap_steps: np.ndarray, cfg: CostConfig) -> np.ndarray:
    return -progress_score(values, cfg) + cfg.w_collision * np.asarray(overlap_steps)


# --------------------------------------------------------------------------
# Candidate pipeline


def gen_candidates(frame: Frame, target_path: Polyline, path_set: PathAnchorSet,
                   disp_anchors: DisplacementAnchors) -> List[CandidatePlan]:
    pose = frame.ego.pose
    base = disp_anchors.values
    out = []
    for i, anchor in enumerate(path_set.anchors):
        placed = anchor.transformed(pose)
        if len(target_path) == len(placed):
            tgt = target_path.points
        else:
            tgt, _ = target_path.sample(np.minimum(placed.cum_arc, target_path.length))
        rms = math.sqrt(float(np.mean(np.sum((placed.points - tgt) ** 2, axis=1))))
        for j in range(len(base)):
            out.append(CandidatePlan(placed, -rms, DisplacementSequence(base[j], disp_anchors.dt),
                                     0.0, (i, j)))
    return out


def refine_displacements(candidate: CandidatePlan, frame: Frame, cfg: CostConfig,
                         agents_c: Optional[np.ndarray] = None) -> CandidatePlan:
    """Pick the scaling of the candidate's profile (0..1.5 in 0.01 steps) with least cost."""
    disp = candidate.displacements
    if agents_c is None:
        agents_c = agent_corner_stack(frame, disp.horizon)
    profiles = SCALE_GRID[:, None] * disp.values[None, :]
    cum = np.cumsum(profiles[:, 1:], axis=1)
    steps = count_overlap_steps(candidate.rollout_path, cum, agents_c, cfg.check_dims,
                                cfg.substeps)
    cost = plan_cost(profiles, steps, cfg)
    best = int(np.argmin(cost))
    refined = DisplacementSequence(np.maximum(profiles[best], 0.0), disp.dt)
    return replace(candidate, displacements=refined, overlap_steps=int(steps[best]))


def collision_penalized_scores(candidates: Sequence[CandidatePlan], frame: Frame,
                               cfg: CostConfig, base_scores: Optional[Sequence[float]] = None,
                               agents_c: Optional[np.ndarray] = None) -> List[CandidatePlan]:
    """Set ``long_score = base - w_collision * overlapping steps``.

    ``base_scores`` defaults to the progress score (the collision-free part of
    the refinement cost, negated).
    """
    if not candidates:
        return []
    horizon = candidates[0].displacements.horizon
    if agents_c is None:
        agents_c = agent_corner_stack(frame, horizon)
    out = []
    for n, c in enumerate(candidates):
        cum = c.displacements.cumulative()[1:]
        steps = int(count_overlap_steps(c.rollout_path, cum, agents_c, cfg.check_dims,
                                        cfg.substeps)[0])
        base = (float(progress_score(c.displacements.values, cfg)[0]) if base_scores is None
                else float(base_scores[n]))
        out.append(replace(c, long_score=base - cfg.w_collision * steps, overlap_steps=steps))
    return out


def select_plan(candidates: Sequence[CandidatePlan]) -> CandidatePlan:
    if not candidates:
        raise NoCandidates("no candidates to select from")
    ordered = sorted(candidates, key=lambda c: c.anchor_ids)
    best_path = min(ordered, key=lambda c: (-c.path_score, c.anchor_ids[0])).anchor_ids[0]
    pool = [c for c in ordered if c.anchor_ids[0] == best_path]
    return min(pool, key=lambda c: (-c.long_score, c.anchor_ids[1]))


def reconstruct_trajectory(path: Polyline, disps: DisplacementSequence) -> List[Tuple[float, Pose2]]:
    """Timestamped poses for steps 0..T at the cumulative displacement of each step."""
    cum = disps.cumulative()
    xy, h = path.sample(cum)
    return [(k * disps.dt, Pose2(xy[k, 0], xy[k, 1], h[k])) for k in range(len(cum))]


# --------------------------------------------------------------------------
# Anchor file


def anchors_to_dict(path_set: PathAnchorSet, disp: DisplacementAnchors) -> dict:
    return {"paths": [a.points.tolist() for a in path_set.anchors],
            "disp": list(disp.lookaheads), "horizon": disp.horizon, "dt": disp.dt}


def anchors_from_dict(d: dict) -> Tuple[PathAnchorSet, DisplacementAnchors]:
    paths = tuple(Polyline(p) for p in d["paths"])
    disp = DisplacementAnchors(tuple(float(v) for v in d["disp"]),
                               int(d.get("horizon", DEFAULT_T)), float(d.get("dt", DT)))
    return PathAnchorSet(paths), disp
