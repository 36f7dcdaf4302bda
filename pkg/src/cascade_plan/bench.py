"""
Variant comparison: the parallel baseline, the cascaded planner, and the
cascaded planner trained on augmented frames, all run over one scenario suite.

Every variant uses a learned regressor and the same collision-penalized
selection; they differ only in what the longitudinal stage sees (a straight
line from the ego or the selected drive path) and in the training frames.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config
from .datagen import natural_logs
from .learn import LossWeights, RegressorParams
from .pipeline import (CascadedPlanner, augment_labeled, build_anchors, build_samples,
                       fit_regressor, label_frames)
from .planner import PathAnchorSet, anchors_from_dict
from .scene import Frame, PlanLabels, load_frames
from .simctrl import EpisodeMetrics, Scenario, compute_suite_metrics, make_suite, run_suite

logger = logging.getLogger(__name__)

VARIANTS: Dict[str, Tuple[bool, bool]] = {
    # name: (longitudinal stage on a straight line, trained with augmentation)
    "parallel": (True, False),
    "cascaded": (False, False),
    "cascaded_aug": (False, True),
}
COMPARISON_HEADER = ("variant", "seed", "alpha", "episodes", "success_rate", "collision_rate",
                     "mean_completion", "mean_comfort", "mean_speed")
PLOT_HEADER = ("variant", "scenario", "t", "speed", "min_gap")

Labeled = List[Tuple[Frame, PlanLabels]]


@dataclass
class VariantResult:
    name: str
    alpha: float
    summary: dict
    # per episode: scenario name, episode seed, metrics, (N, 3) time/speed/min-gap series
    episodes: List[Tuple[str, int, EpisodeMetrics, np.ndarray]]


def prepare_data(cfg: Config, seed: int) -> Tuple[Labeled, PathAnchorSet]:
    """Labeled training frames and the drive path anchor set."""
    d = cfg.data
    if d.frames_file:
        frames = load_frames(d.frames_file)
    else:
        frames = natural_logs(d.n_drives, seed, d.drive_seconds, d.frame_every)
    labeled = label_frames(frames)
    if not labeled:
        raise ValueError("no labelable frames")
    if cfg.anchors.file:
        with open(cfg.anchors.file) as fh:
            path_set, _ = anchors_from_dict(json.load(fh))
    else:
        path_set = build_anchors(labeled, cfg.anchors.k, cfg.anchors.iters, seed)
    return labeled, path_set


def train_variant(cfg: Config, labeled: Labeled, path_set: PathAnchorSet, parallel: bool,
                  alpha: float, seed: int) -> RegressorParams:
    """Fit the regressor on (optionally augmented) frames."""
    data = labeled
    if alpha > 0:
        aug_cfg = replace(cfg.augment.build(), alpha=alpha)
        data, _ = augment_labeled(labeled, aug_cfg, seed + 1)
    t = cfg.train
    samples = build_samples(data, path_set, cfg.disp_anchors(), cfg.cost.ego_dims, parallel)
    params, _ = fit_regressor(samples, t.hidden, t.epochs, t.lr, seed, t.batch_size,
                              t.init_scale, LossWeights(lambda_plan=t.lambda_plan))
    return params


def make_planner(cfg: Config, path_set: PathAnchorSet, params: Optional[RegressorParams],
                 parallel: bool) -> CascadedPlanner:
    return CascadedPlanner(path_set, cfg.disp_anchors(), cfg.cost.build(), params, parallel)


def load_suite(cfg: Config) -> List[Tuple[Scenario, int]]:
    s = cfg.suite
    if s.scenario_files:
        return [(Scenario.load(f), i) for i, f in enumerate(s.scenario_files)]
    return make_suite(s.families, s.n_per_family, s.seed)


def evaluate(cfg: Config, name: str, alpha: float, planner: CascadedPlanner,
             suite: Sequence[Tuple[Scenario, int]], workers: int = 1) -> VariantResult:
    gains = (cfg.control.steer.build(), cfg.control.speed.build())
    runs = run_suite(suite, planner, gains, cfg.control.dt_sim, workers)
    episodes = [(sc.name, ep_seed, m, log.series()) for (sc, ep_seed), (log, m) in zip(suite, runs)]
    summary = compute_suite_metrics([m for _, m in runs])
    logger.info("%s: collision %.3f success %.3f", name, summary["collision_rate"],
                summary["success_rate"])
    return VariantResult(name, alpha, summary, episodes)


def run_bench(cfg: Config, seed: int, workers: int = 1,
              variants: Optional[Sequence[str]] = None) -> List[VariantResult]:
    """Train each variant's regressor and evaluate it on the shared suite."""
    names = list(variants or cfg.bench.variants)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variant(s) {unknown}; known: {sorted(VARIANTS)}")
    labeled, path_set = prepare_data(cfg, seed)
    suite = load_suite(cfg)
    out = []
    for name in names:
        parallel, aug = VARIANTS[name]
        alpha = cfg.bench.aug_alpha if aug else 0.0
        params = train_variant(cfg, labeled, path_set, parallel, alpha, seed)
        out.append(evaluate(cfg, name, alpha, make_planner(cfg, path_set, params, parallel),
                            suite, workers))
    return out


def alpha_sweep(cfg: Config, seed: int, alphas: Sequence[float], workers: int = 1,
                known: Sequence[VariantResult] = ()) -> Dict[float, dict]:
    """Suite summary of the cascaded planner trained at each augmentation rate.

    Results in ``known`` for cascaded variants are reused instead of retrained;
    they come from the same data and seed, so they are the same runs.
    """
    reuse = {r.alpha: r.summary for r in known if not VARIANTS[r.name][0]}
    todo = [a for a in alphas if a not in reuse]
    out = dict(reuse)
    if todo:
        labeled, path_set = prepare_data(cfg, seed)
        suite = load_suite(cfg)
        for a in todo:
            params = train_variant(cfg, labeled, path_set, False, a, seed)
            out[a] = evaluate(cfg, f"alpha={a}", a, make_planner(cfg, path_set, params, False),
                              suite, workers).summary
    return {a: out[a] for a in alphas}


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def comparison_csv(results: Sequence[VariantResult], seed: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_HEADER)
    for r in results:
        s = r.summary
        w.writerow([r.name, seed, _fmt(r.alpha), s["episodes"], _fmt(s["success_rate"]),
                    _fmt(s["collision_rate"]), _fmt(s["mean_completion"]),
                    _fmt(s["mean_comfort"]), _fmt(s["mean_speed"])])
    return buf.getvalue()


def plot_csv(results: Sequence[VariantResult]) -> str:
    """Long-format time series for every variant and episode."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_HEADER)
    for r in results:
        for name, _, _, series in r.episodes:
            for t, v, gap in series:
                w.writerow([r.name, name, f"{t:.2f}", _fmt(v), _fmt(gap)])
    return buf.getvalue()


def read_comparison_csv(text: str) -> List[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != COMPARISON_HEADER:
        raise ValueError(f"unexpected comparison header {reader.fieldnames}")
    return list(reader)
