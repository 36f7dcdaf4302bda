"""Acceptance gate: one test per primary criterion, each recording a PASS/FAIL line.

Every expected value is produced by an oracle in ``tests/oracles.py`` or by a
brute-force recomputation here; package kernels are only ever the thing under test.
"""
import json
import math
import time
from dataclasses import replace

import numpy as np

from cascade_plan.augment import NON_THREATENING, THREATENING
from cascade_plan.bench import alpha_sweep, run_bench
from cascade_plan.cli import main
from cascade_plan.config import Config
from cascade_plan.datagen import natural_logs
from cascade_plan.geometry import (OrientedBox, Polyline, Pose2, boxes_overlap, interp_along,
                                   min_box_distance)
from cascade_plan.learn import (LossWeights, RegressorParams, loss_and_grad, weighted_l1_path,
                                wta_assign)
from cascade_plan.pipeline import augment_labeled, label_frames
from cascade_plan.planner import SCALE_GRID, CostConfig, refine_displacements

from .fixtures import circle_closure, speed_step, track_straight
from .oracles import (grid_overlap, project_arc, pruned_sampled_distance, rect_corners_vec,
                      rect_distance_vec, sat_overlap_vec, walk_polyline)
from .test_geometry import random_path
from .test_learn import numeric_grad, random_batch, winner_residuals
from .test_planner import agent_pose_array, random_scene

EGO = (4.5, 2.0)


# --------------------------------------------------------------------------
# 1. relabeling over 10k augmented frames


def scan_step_distances(pairs, reports):
    """Ego-agent distance at every step 1..T of every inserted frame, one vector batch."""
    ego, other = [], []
    for (f, lab), rep in zip(pairs, reports):
        if not rep.inserted:
            continue
        agent = next(a for a in f.agents if a.id == rep.agent_id)
        cum = lab.displacements.cumulative()[1:]
        xy, h = walk_polyline(lab.drive_path.points, cum)
        poses = agent.poses()[1:len(cum) + 1]
        ego.append(np.column_stack([xy, h, np.full((len(cum), 2), EGO)]))
        other.append(np.column_stack([poses, np.tile([agent.box.length, agent.box.width],
                                                     (len(poses), 1))]))
    d = rect_distance_vec(rect_corners_vec(np.concatenate(ego)),
                          rect_corners_vec(np.concatenate(other)))
    return d


def test_criterion_1_relabel_safety(record):
    labeled = label_frames(natural_logs(400, 21))[:10_000]
    assert len(labeled) == 10_000
    cfg = replace(Config().augment.build(), alpha=1.0)
    t0 = time.perf_counter()
    pairs, reports = augment_labeled(labeled, cfg, 5)
    elapsed = time.perf_counter() - t0

    sum_err, beta_bad, n_threat, n_clear = 0.0, 0, 0, 0
    for (_, orig), (_, new), rep in zip(labeled, pairs, reports):
        if not rep.inserted:
            continue
        d_orig = float(np.sum(orig.displacements.values[1:]))
        sum_err = max(sum_err, abs(float(np.sum(new.displacements.values[1:])) - rep.beta * d_orig))
        if rep.role == THREATENING:
            n_threat += 1
        elif rep.role == NON_THREATENING:
            n_clear += 1
            beta_bad += rep.beta != 1.0
    d = scan_step_distances(pairs, reports)
    close = int(np.sum(d < cfg.d_safe))

    ok = (elapsed < 30.0 and sum_err <= 1e-9 and close == 0 and beta_bad == 0
          and n_threat > 0 and n_clear > 0)
    record(1, ok, f"{elapsed:.1f} s for 10000 frames, {n_threat} threatening, {n_clear} "
                  f"non-threatening, max sum error {sum_err:.1e}, {close} of {len(d)} steps "
                  f"under d_safe, {beta_bad} non-threatening beta != 1")
    assert ok


# --------------------------------------------------------------------------
# 2. geometry against oracles


def random_box_params(rng):
    return (*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi), *rng.uniform(0.5, 6.0, 2))


def as_box(p):
    return OrientedBox(Pose2(p[0], p[1], p[2]), p[3], p[4])


def test_criterion_2_geometry_oracles(record):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()

    interp_err = 0.0
    for _ in range(1000):
        line = random_path(rng)
        s = rng.uniform(0, line.length)
        p = interp_along(line, s)
        back, dist = project_arc(line.points, np.array([p.x, p.y]))
        interp_err = max(interp_err, abs(back - s), dist)

    # a pair is marginal when growing both boxes by the margin flips the oracle's verdict
    overlap_bad, checked, marginal, n_over = 0, 0, 0, 0
    separated = []
    while checked < 10_000:
        pa, pb = random_box_params(rng), random_box_params(rng)
        lo, hi = grid_overlap(pa, pb, grow=-1e-3), grid_overlap(pa, pb, grow=1e-3)
        if lo != hi:
            marginal += 1
            continue
        checked += 1
        n_over += lo
        overlap_bad += boxes_overlap(as_box(pa), as_box(pb)) != lo
        if not lo:
            separated.append((pa, pb))

    dist_err = 0.0
    for pa, pb in separated[:300]:
        dist_err = max(dist_err, abs(min_box_distance(as_box(pa), as_box(pb))
                                     - pruned_sampled_distance(pa, pb)))
    elapsed = time.perf_counter() - t0

    ok = elapsed < 60.0 and interp_err < 1e-9 and overlap_bad == 0 and dist_err < 1e-2
    record(2, ok, f"{elapsed:.1f} s, interp round trip {interp_err:.1e}, {overlap_bad} overlap "
                  f"mismatches in {checked} pairs ({n_over} overlapping, {marginal} marginal "
                  f"skipped), distance error {dist_err:.1e} over 300 separated pairs")
    assert ok


# --------------------------------------------------------------------------
# 3. path loss bands and winner assignment


def test_criterion_3_bands_and_wta(record):
    gt = Polyline(np.stack([np.arange(15) * 2.0, np.zeros(15)], axis=1))
    got = []
    for t in (1, 7, 13):
        pts = gt.points.copy()
        pts[t - 1, 0] += 1.0
        got.append(weighted_l1_path(Polyline(pts), gt, LossWeights()))
    bands_ok = np.allclose(got, [1.0, 0.6, 0.4], atol=1e-12)

    rng = np.random.default_rng(30)
    wta_bad = 0
    for _ in range(1000):
        m, d = int(rng.integers(1, 8)), int(rng.integers(1, 20))
        anchors = rng.normal(size=(m, d))
        target = rng.normal(size=d)
        dist = [math.sqrt(math.fsum((a - target) ** 2)) for a in anchors]
        wta_bad += wta_assign(list(anchors), target) != dist.index(min(dist))

    ok = bands_ok and wta_bad == 0
    record(3, ok, f"band losses {[round(g, 12) for g in got]}, {wta_bad} WTA mismatches in 1000")
    assert ok


# --------------------------------------------------------------------------
# 4. gradient check


def test_criterion_4_gradient_check(record):
    rng = np.random.default_rng(40)
    worst, done, skipped = 0.0, 0, 0
    while done < 100:
        p = RegressorParams(rng.normal(0, 0.5, (6, 7)), rng.normal(0, 0.5, 6),
                            rng.normal(0, 0.5, (17, 6)), rng.normal(0, 0.5, 17))
        batch = random_batch(rng)
        if np.min(np.abs(winner_residuals(p, batch)[1:])) < 1e-4:
            skipped += 1
            continue
        _, grad = loss_and_grad(p, batch)
        a, n = grad.flat(), numeric_grad(p, batch, eps=1e-6)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(np.max(rel)))
        done += 1
    ok = worst < 1e-4
    record(4, ok, f"max relative error {worst:.1e} over 100 draws ({skipped} near-kink draws redrawn)")
    assert ok


# --------------------------------------------------------------------------
# 5. control tracking


def test_criterion_5_control_tracking(record):
    rows = track_straight(y0=1.0, speed=5.0, seconds=8.0, dt=0.05)
    outside = rows[np.abs(rows[:, 1]) >= 0.1]
    settle = float(outside[-1, 0]) + 0.05 if len(outside) else 0.0
    lateral_ok = settle <= 8.0 and abs(rows[-1, 1]) < 0.1

    v = speed_step(5.0, 10.0, dt=0.05)
    speed_err = abs(v[-1, 1] - 5.0) / 5.0
    closure = circle_closure(radius=10.0, speed=5.0, dt=0.05)

    ok = lateral_ok and speed_err < 0.02 and closure < 0.01
    record(5, ok, f"lateral offset below 0.1 m from {settle:.2f} s, speed error "
                  f"{speed_err:.2%} at 10 s, circle closure {closure:.2%}")
    assert ok


# --------------------------------------------------------------------------
# 6. refinement equals the exhaustive grid


def grid_costs(c0, f, cfg):
    """Cost of every scale on the grid, overlap counted with the vectorized rectangle oracle."""
    profiles = SCALE_GRID[:, None] * c0.displacements.values[None, :]
    cum = np.cumsum(profiles[:, 1:], axis=1)
    n, horizon = cum.shape
    steps = np.zeros(n, dtype=int)
    if f.agents:
        xy, h = walk_polyline(c0.path.points, cum.ravel())
        ego = rect_corners_vec(np.column_stack([xy, h, np.tile(cfg.ego_dims, (n * horizon, 1))]))
        poses = agent_pose_array(f, horizon)
        hit = np.zeros(n * horizon, dtype=bool)
        for a, agent in zip(poses, f.agents):
            rows = np.tile(a[1:], (n, 1))
            dims = np.tile([agent.box.length, agent.box.width], (n * horizon, 1))
            hit |= sat_overlap_vec(ego, rect_corners_vec(np.column_stack([rows, dims])))
        steps = hit.reshape(n, horizon).sum(axis=1)
    prog = np.array([math.fsum(p[1:]) for p in profiles])
    smooth = np.array([math.fsum(np.diff(p) ** 2) for p in profiles])
    return -cfg.w_progress * prog + cfg.w_smooth * smooth + cfg.w_collision * steps, steps


def test_criterion_6_refine_equals_grid(record):
    rng = np.random.default_rng(60)
    cfg = CostConfig()
    bad, hits = 0, 0
    for _ in range(500):
        f, c0 = random_scene(rng)
        c = refine_displacements(c0, f, cfg)
        costs, steps = grid_costs(c0, f, cfg)
        best = int(np.argmin(costs))
        bad += not np.array_equal(c.displacements.values, SCALE_GRID[best] * c0.displacements.values)
        hits += bool(steps.any())
    ok = bad == 0
    record(6, ok, f"{bad} mismatches in 500 scenes ({hits} with an overlap somewhere on the grid)")
    assert ok


# --------------------------------------------------------------------------
# 7 and 8. closed-loop suite


_BENCH = {}


def bench_results():
    if "results" not in _BENCH:
        cfg = Config()
        t0 = time.perf_counter()
        results = run_bench(cfg, cfg.seed)
        _BENCH["elapsed"] = time.perf_counter() - t0
        _BENCH["results"] = {r.name: r for r in results}
    return _BENCH["results"], _BENCH["elapsed"]


def test_criterion_7_cascade_and_augmentation(record):
    results, elapsed = bench_results()
    par, cas, aug = (results[n].summary for n in ("parallel", "cascaded", "cascaded_aug"))
    episodes = par["episodes"]
    drop = 1.0 - cas["collision_rate"] / par["collision_rate"] if par["collision_rate"] else 0.0
    a_ok = drop >= 0.20
    b_ok = (aug["collision_rate"] < cas["collision_rate"]
            and aug["success_rate"] >= cas["success_rate"])
    ok = elapsed < 600.0 and episodes == 200 and a_ok and b_ok
    record(7, ok, f"{elapsed:.0f} s, collision parallel {par['collision_rate']:.3f} cascaded "
                  f"{cas['collision_rate']:.3f} ({drop:.1%} lower, needs 20%), cascaded_aug "
                  f"{aug['collision_rate']:.3f}; success cascaded {cas['success_rate']:.3f} "
                  f"cascaded_aug {aug['success_rate']:.3f}")
    assert ok


def test_criterion_8_alpha_sweep(record):
    results, _ = bench_results()
    cfg = Config()
    sweep = alpha_sweep(cfg, cfg.seed, [0.0, 0.1, 0.3], known=list(results.values()))
    c0, c1, c3 = (sweep[a]["collision_rate"] for a in (0.0, 0.1, 0.3))
    ok = c1 <= c0
    record(8, ok, f"collision at alpha 0 {c0:.3f}, 0.1 {c1:.3f}, 0.3 {c3:.3f} (recorded only)")
    assert ok


# --------------------------------------------------------------------------
# 9. bench reproducibility


def test_criterion_9_bench_byte_identical(tmp_path, record, capsys):
    doc = {"seed": 9, "data": {"n_drives": 30}, "anchors": {"iters": 20},
           "train": {"hidden": 16, "epochs": 5},
           "suite": {"families": ["cut_in", "crossing", "lead_brake", "merge"], "n_per_family": 2}}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    outs = []
    for run in ("a", "b"):
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        outs.append({name: (tmp_path / run / name).read_bytes()
                     for name in ("comparison.csv", "plot_data.csv")})
    ok = outs[0] == outs[1]
    record(9, ok, f"two runs, comparison.csv {len(outs[0]['comparison.csv'])} bytes and "
                  f"plot_data.csv {len(outs[0]['plot_data.csv'])} bytes "
                  f"{'identical' if ok else 'differ'}")
    assert ok
