"""
``plan-cli``: anchors, augmentation, training, simulation and the variant benchmark.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``PLAN_CLI_THREADS`` caps the worker processes used for scenario suites.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import augment_frame
from .bench import (VARIANTS, alpha_sweep, comparison_csv, load_suite, make_planner, plot_csv,
                    prepare_data, read_comparison_csv, run_bench)
from .config import Config, load_config
from .datagen import natural_logs
from .errors import ConfigError, ParseError, PlanError, VersionError
from .learn import LossWeights, RegressorParams, score_accuracy
from .pipeline import augment_labeled, build_anchors, build_samples, fit_regressor, label_frames
from .planner import anchors_from_dict, anchors_to_dict
from .scene import derive_labels, frame_to_dict, load_frames, loads_frames
from .simctrl import Scenario
from .simctrl.episode import load_episode_log, metrics_csv, read_metrics_csv, run_episode

logger = logging.getLogger("cascade_plan")


class UsageError(Exception):
    """Bad input files or arguments (exit code 2)."""


class CheckFailed(Exception):
    """An output failed to re-read under ``--check`` (exit code 1)."""


# --------------------------------------------------------------------------
# helpers


def _workers() -> int:
    raw = os.environ.get("PLAN_CLI_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PLAN_CLI_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"PLAN_CLI_THREADS must be a positive integer, got {raw!r}")
    return n


def _frames(args, cfg: Config, seed: int):
    path = args.frames or cfg.data.frames_file
    if path is None:
        d = cfg.data
        return natural_logs(d.n_drives, seed, d.drive_seconds, d.frame_every)
    if not Path(path).is_file():
        raise UsageError(f"frames file not found: {path}")
    try:
        frames = load_frames(path)
    except (ParseError, VersionError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not frames:
        raise UsageError(f"{path}: no frames")
    return frames


def _anchor_file(path: str):
    if not Path(path).is_file():
        raise UsageError(f"anchor file not found: {path}")
    try:
        with open(path) as fh:
            return anchors_from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not an anchor file ({exc})") from exc


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise CheckFailed(msg)


# --------------------------------------------------------------------------
# subcommands


def cmd_anchors(args, cfg: Config) -> int:
    seed = cfg.seed
    k = args.k if args.k is not None else cfg.anchors.k
    labeled = label_frames(_frames(args, cfg, seed))
    if not labeled:
        raise UsageError("no frame yields a drive path label")
    path_set = build_anchors(labeled, k, cfg.anchors.iters, seed)
    doc = anchors_to_dict(path_set, cfg.disp_anchors())
    inertia = path_set.inertia_history[-1] if path_set.inertia_history else 0.0
    doc["inertia"] = inertia
    out = Path(args.out) / "anchors.json"
    _write(out, json.dumps(doc) + "\n")
    print(f"anchors: k={k} frames={len(labeled)} inertia={inertia:.6f} -> {out}")
    if args.check:
        ps, _ = _anchor_file(str(out))
        _check(len(ps) == k, f"{out}: expected {k} anchors, read {len(ps)}")
    return 0


def cmd_augment(args, cfg: Config) -> int:
    path = args.frames or cfg.data.frames_file
    if path is None:
        raise UsageError("augment needs --frames (or data.frames_file in the config)")
    if not Path(path).is_file():
        raise UsageError(f"frames file not found: {path}")
    text = Path(path).read_text()
    try:
        frames = loads_frames(text)
    except (ParseError, VersionError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not frames:
        raise UsageError(f"{path}: no frames")
    aug_cfg = cfg.augment.build()
    rng = np.random.default_rng(cfg.seed)
    lines = text.splitlines(keepends=True)
    out_lines = [lines[0]]
    reports = []
    frame_lines = [ln for ln in lines[1:] if ln.strip()]
    for raw, frame in zip(frame_lines, frames):
        try:
            labels = derive_labels(frame.ego)
        except PlanError:
            out_lines.append(raw)
            reports.append({"timestamp": frame.timestamp, "inserted": False, "role": "none",
                            "beta": 1.0, "labeled": False})
            continue
        new_frame, new_labels, rep = augment_frame(frame, labels, rng, aug_cfg)
        # untouched frames are copied verbatim so alpha = 0 reproduces the input bytes
        out_lines.append(raw if not rep.inserted else json.dumps(frame_to_dict(new_frame)) + "\n")
        d = rep.to_dict()
        d.update(timestamp=frame.timestamp, labeled=True,
                 displacements=new_labels.displacements.values.tolist())
        reports.append(d)
    if not out_lines[-1].endswith("\n"):
        out_lines[-1] += "\n"
    out = Path(args.out)
    _write(out / "augmented.jsonl", "".join(out_lines))
    _write(out / "augment_reports.jsonl", "".join(json.dumps(r) + "\n" for r in reports))
    inserted = [r for r in reports if r["inserted"]]
    threat = [r["beta"] for r in inserted if r["role"] == "threatening"]
    mean_beta = float(np.mean(threat)) if threat else float("nan")
    print(f"augment: frames={len(frames)} inserted={len(inserted)} "
          f"fraction={len(inserted) / len(frames):.4f} threatening={len(threat)} "
          f"mean_beta={mean_beta:.4f}")
    if args.check:
        back = load_frames(out / "augmented.jsonl")
        _check(len(back) == len(frames), "augmented frame count changed")
        with open(out / "augment_reports.jsonl") as fh:
            reps = [json.loads(ln) for ln in fh if ln.strip()]
        _check(len(reps) == len(frames), "one report per frame expected")
    return 0


def cmd_train(args, cfg: Config) -> int:
    seed = cfg.seed
    labeled = label_frames(_frames(args, cfg, seed))
    if not labeled:
        raise UsageError("no frame yields a drive path label")
    if args.anchors:
        path_set, disp = _anchor_file(args.anchors)
    else:
        path_set, disp = build_anchors(labeled, cfg.anchors.k, cfg.anchors.iters, seed), cfg.disp_anchors()
    alpha = cfg.augment.alpha if args.alpha is None else args.alpha
    data = labeled
    if alpha > 0:
        data, _ = augment_labeled(labeled, replace(cfg.augment.build(), alpha=alpha), seed + 1)
    samples = build_samples(data, path_set, disp, cfg.cost.ego_dims, args.parallel)
    t = cfg.train
    params, history = fit_regressor(samples, t.hidden, t.epochs, t.lr, seed, t.batch_size,
                                    t.init_scale, LossWeights(lambda_plan=t.lambda_plan))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "params.json")
    _write(out / "anchors.json", json.dumps(anchors_to_dict(path_set, disp)) + "\n")
    _write(out / "train_history.csv",
           "epoch,loss\n" + "".join(f"{i + 1},{v:.6f}\n" for i, v in enumerate(history)))
    acc = score_accuracy(params, samples)
    print(f"train: samples={len(samples)} alpha={alpha} final_loss={history[-1]:.6f} "
          f"score_accuracy={acc:.4f} -> {out / 'params.json'}")
    if args.check:
        back = RegressorParams.load(out / "params.json")
        _check(np.array_equal(back.flat(), params.flat()), "params did not round-trip")
    return 0


def cmd_simulate(args, cfg: Config) -> int:
    if args.anchors:
        path_set, _ = _anchor_file(args.anchors)
    else:
        _, path_set = prepare_data(cfg, cfg.seed)
    params = None
    if args.params:
        if not Path(args.params).is_file():
            raise UsageError(f"params file not found: {args.params}")
        params = RegressorParams.load(args.params)
    if args.scenario:
        for f in args.scenario:
            if not Path(f).is_file():
                raise UsageError(f"scenario file not found: {f}")
        suite = [(Scenario.load(f), i) for i, f in enumerate(args.scenario)]
    else:
        suite = load_suite(cfg)
    planner = make_planner(cfg, path_set, params, args.parallel)
    gains = (cfg.control.steer.build(), cfg.control.speed.build())
    out = Path(args.out)
    rows = []
    for sc, ep_seed in suite:
        try:
            log, m = run_episode(sc, planner, gains, cfg.control.dt_sim, cfg.control.replan_every,
                                 record=args.logs)
        except PlanError as exc:
            logger.warning("episode %s failed: %s", sc.name, exc)
            continue
        rows.append((sc.name, ep_seed, m))
        if args.logs:
            (out / "logs").mkdir(parents=True, exist_ok=True)
            log.save(out / "logs" / f"{sc.name}.jsonl")
    text = metrics_csv(rows)
    _write(out / "metrics.csv", text)
    n = len(rows)
    coll = sum(m.collided for _, _, m in rows)
    succ = sum(m.success for _, _, m in rows)
    print(f"simulate: episodes={n} success={succ} collisions={coll} -> {out / 'metrics.csv'}")
    if args.check:
        back = read_metrics_csv((out / "metrics.csv").read_text())
        _check(len(back) == n, "metrics row count changed")
        if args.logs:
            for name, _, _ in rows:
                load_episode_log(out / "logs" / f"{name}.jsonl")
    return 0 if n == len(suite) else 1


def cmd_bench(args, cfg: Config) -> int:
    variants = args.variants or list(cfg.bench.variants)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    workers = _workers()
    results = run_bench(cfg, cfg.seed, workers, variants)
    out = Path(args.out)
    table = comparison_csv(results, cfg.seed)
    _write(out / "comparison.csv", table)
    _write(out / "plot_data.csv", plot_csv(results))
    for r in results:
        s = r.summary
        print(f"{r.name:>13}: episodes={s['episodes']} collision={s['collision_rate']:.4f} "
              f"success={s['success_rate']:.4f} speed={s['mean_speed']:.3f} "
              f"comfort={s['mean_comfort']:.3f}")
    if args.alphas:
        sweep = alpha_sweep(cfg, cfg.seed, args.alphas, workers, results)
        lines = ["alpha,collision_rate,success_rate\n"]
        for a, s in sweep.items():
            lines.append(f"{a:.6f},{s['collision_rate']:.6f},{s['success_rate']:.6f}\n")
            print(f"alpha={a}: collision={s['collision_rate']:.4f} success={s['success_rate']:.4f}")
        _write(out / "alpha_sweep.csv", "".join(lines))
    if args.check:
        rows = read_comparison_csv((out / "comparison.csv").read_text())
        _check(len(rows) == len(variants), f"expected {len(variants)} comparison rows, read {len(rows)}")
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--check", action="store_true",
                        help="re-read every output and validate it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="plan-cli", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("anchors", parents=[common], help="cluster drive path anchors")
    a.add_argument("--frames", help="frame log (newline JSON); synthetic drives when omitted")
    a.add_argument("--k", type=int, help="number of clusters (overrides anchors.k)")
    a.set_defaults(func=cmd_anchors)

    g = sub.add_parser("augment", parents=[common], help="insert virtual agents and relabel")
    g.add_argument("--frames", help="frame log to augment")
    g.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", parents=[common], help="fit the displacement regressor")
    t.add_argument("--frames", help="frame log; synthetic drives when omitted")
    t.add_argument("--anchors", help="anchor file from `plan-cli anchors`")
    t.add_argument("--alpha", type=float, help="augmentation rate (overrides augment.alpha)")
    t.add_argument("--parallel", action="store_true",
                   help="features along a straight line (parallel baseline)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario suite in closed loop")
    s.add_argument("--anchors", help="anchor file")
    s.add_argument("--params", help="regressor params; exhaustive refinement when omitted")
    s.add_argument("--scenario", nargs="+", help="scenario JSON files (overrides the suite)")
    s.add_argument("--parallel", action="store_true", help="straight-line longitudinal stage")
    s.add_argument("--logs", action="store_true", help="write one episode log per scenario")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", parents=[common], help="compare planner variants")
    b.add_argument("--variants", nargs="+", help=f"subset of {list(VARIANTS)}")
    b.add_argument("--alphas", nargs="+", type=float,
                   help="also sweep the augmentation rate of the cascaded variant")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"plan-cli: error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"plan-cli: check failed: {exc}", file=sys.stderr)
        return 1
    except (PlanError, ValueError, OSError) as exc:
        print(f"plan-cli: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
