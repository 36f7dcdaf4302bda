"""
Planner variants and dataset assembly shared by the CLI and the benchmark.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentConfig, augment_frame
from .errors import PlanError
from .geometry import Polyline, straight_path
from .learn import (RegressorParams, Sample, candidate_features, forward, init_params, train,
                    wta_assign)
from .planner import (CandidatePlan, CostConfig, DisplacementAnchors, PathAnchorSet,
                      agent_corner_stack, cluster_path_anchors, collision_penalized_scores,
                      gen_candidates, refine_displacements, select_plan, target_path_from_route)
from .scene import DEFAULT_P, DisplacementSequence, Frame, PlanLabels, derive_labels

logger = logging.getLogger(__name__)


@dataclass
class CascadedPlanner:
    """Callable ``(frame, route) -> CandidatePlan``.

    Without ``params`` displacements come from the exhaustive scaling search;
    with ``params`` they come from the regressor (anchor + offset) and its logit
    is the base of the longitudinal score. ``parallel`` runs all longitudinal
    reasoning along a straight line from the ego instead of the drive path.
    Only the best path's candidates are refined and scored, since hierarchical
    selection never looks at the others; ``full=True`` processes all of them.
    """
    path_set: PathAnchorSet
    disp_anchors: DisplacementAnchors
    cost: CostConfig = CostConfig()
    params: Optional[RegressorParams] = None
    parallel: bool = False
    full: bool = False

    def candidates(self, frame: Frame, route: Polyline) -> List[CandidatePlan]:
        n_pts = len(self.path_set.anchors[0])
        target = target_path_from_route(route, frame.ego.pose, n_pts)
        cands = gen_candidates(frame, target, self.path_set, self.disp_anchors)
        if not self.full and cands:
            best = select_plan(cands).anchor_ids[0]
            cands = [c for c in cands if c.anchor_ids[0] == best]
        horizon = self.disp_anchors.horizon
        agents_c = agent_corner_stack(frame, horizon)
        if self.parallel:
            line = straight_path(frame.ego.pose, cands[0].path.length, 2.0)
            cands = [replace(c, long_path=line) for c in cands]
        if self.params is None:
            cands = [refine_displacements(c, frame, self.cost, agents_c) for c in cands]
            return collision_penalized_scores(cands, frame, self.cost, None, agents_c)
        out, logits = [], []
        # candidates sharing a path share one feature pass
        for pid in sorted({c.anchor_ids[0] for c in cands}):
            group = [c for c in cands if c.anchor_ids[0] == pid]
            base = np.stack([c.displacements.values for c in group])
            feats = candidate_features(group[0].rollout_path, base, frame.ego.speed, agents_c,
                                       self.cost.ego_dims, self.disp_anchors.dt, frame.speed_limit)
            off, logit = forward(self.params, feats)
            vals = np.maximum(base + off, 0.0)
            for c, v, lg in zip(group, vals, logit):
                out.append(replace(c, displacements=DisplacementSequence(v, self.disp_anchors.dt)))
                logits.append(float(lg))
        return collision_penalized_scores(out, frame, self.cost, logits, agents_c)

    def __call__(self, frame: Frame, route: Polyline) -> CandidatePlan:
        return select_plan(self.candidates(frame, route))


def label_frames(frames: Sequence[Frame]) -> List[Tuple[Frame, PlanLabels]]:
    """Frames paired with their derived labels; frames without usable labels are dropped."""
    out = []
    for f in frames:
        try:
            out.append((f, derive_labels(f.ego)))
        except PlanError as exc:
            logger.debug("frame at t=%s has no labels: %s", f.timestamp, exc)
    return out


def local_paths(labeled: Sequence[Tuple[Frame, PlanLabels]]) -> List[Polyline]:
    """Ground-truth drive paths expressed in their ego frame (anchor space)."""
    return [Polyline(f.ego.pose.to_local(lab.drive_path.points)) for f, lab in labeled]


def build_anchors(labeled: Sequence[Tuple[Frame, PlanLabels]], k: int, iters: int,
                  seed: int) -> PathAnchorSet:
    return cluster_path_anchors(local_paths(labeled), k, iters, np.random.default_rng(seed))


def augment_labeled(labeled: Sequence[Tuple[Frame, PlanLabels]], cfg: AugmentConfig,
                    seed: int):
    """Augmented copies of every pair plus their reports, drawn from one seeded stream."""
    rng = np.random.default_rng(seed)
    out, reports = [], []
    for f, lab in labeled:
        nf, nl, rep = augment_frame(f, lab, rng, cfg)
        out.append((nf, nl))
        reports.append(rep)
    return out, reports


def build_samples(labeled: Sequence[Tuple[Frame, PlanLabels]], path_set: PathAnchorSet,
                  disp_anchors: DisplacementAnchors, ego_dims=(4.5, 2.0),
                  parallel: bool = False) -> List[Sample]:
    """One training sample per frame over the anchor path closest to the ground truth."""
    base = disp_anchors.values
    samples = []
    for frame, lab in labeled:
        local = Polyline(frame.ego.pose.to_local(lab.drive_path.points))
        pid = wta_assign(path_set.anchors, local)
        path = path_set.anchors[pid].transformed(frame.ego.pose)
        if parallel:
            path = straight_path(frame.ego.pose, path.length, 2.0)
        agents_c = agent_corner_stack(frame, disp_anchors.horizon)
        feats = candidate_features(path, base, frame.ego.speed, agents_c, ego_dims,
                                   disp_anchors.dt, frame.speed_limit)
        gt = lab.displacements.values
        samples.append(Sample(feats, base, gt, wta_assign(list(base), gt)))
    return samples


LR_SCHEDULE = (1.0, 0.3, 0.1, 0.03)


def fit_regressor(samples: Sequence[Sample], hidden: int, epochs: int, lr: float, seed: int,
                  batch_size: int = 32, init_scale: float = 1.0, weights=None,
                  schedule: Sequence[float] = LR_SCHEDULE) -> Tuple[RegressorParams, List[float]]:
    """Step-decayed training: ``epochs`` split evenly over the ``schedule`` multipliers.

    The L1 regression gradient does not shrink near the optimum, so a fixed step
    size leaves the offsets jittering; decaying it lets them settle.
    """
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(seed)
    n_feat = samples[0].features.shape[1]
    n_off = samples[0].anchors.shape[1]
    params = init_params(n_feat, hidden, n_off, rng, init_scale)
    history: List[float] = []
    # earlier stages absorb the remainder so the stage lengths sum to ``epochs``
    per, extra = divmod(epochs, len(schedule))
    for i, f in enumerate(schedule):
        n = per + (1 if i < extra else 0)
        if n:
            params, h = train(params, samples, lr * f, n, rng, batch_size, weights)
            history.extend(h)
    return params, history
