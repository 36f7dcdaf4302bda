import json
import subprocess
import sys

import numpy as np
import pytest

from cascade_plan.cli import main
from cascade_plan.learn import RegressorParams
from cascade_plan.pipeline import label_frames, local_paths
from cascade_plan.scene import DisplacementSequence, PlanLabels, derive_labels, load_frames, save_frames
from cascade_plan.simctrl import make_suite
from cascade_plan.simctrl.episode import load_episode_log, read_metrics_csv

from .fixtures import random_frame
from .oracles import labeled_step_distances

TINY = {"seed": 3, "data": {"n_drives": 12}, "anchors": {"iters": 10},
        "train": {"hidden": 8, "epochs": 3},
        "suite": {"families": ["cut_in", "crossing", "lead_brake"], "n_per_family": 1}}


def write_config(tmp_path, doc=TINY, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture(scope="module")
def frames_file(tmp_path_factory):
    rng = np.random.default_rng(17)
    p = tmp_path_factory.mktemp("frames") / "frames.jsonl"
    save_frames([random_frame(rng) for _ in range(120)], p)
    return p


# --------------------------------------------------------------------------
# entry point


def test_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "cascade_plan.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "usage: plan-cli" in out.stdout
    for cmd in ("anchors", "augment", "train", "simulate", "bench"):
        assert cmd in out.stdout


def test_subcommand_required(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_empty_frames_file_is_usage_error(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    save_frames([], empty)
    assert main(["anchors", "--frames", str(empty), "--out", str(tmp_path)]) == 2
    assert "no frames" in capsys.readouterr().err


def test_missing_frames_file(tmp_path, capsys):
    assert main(["augment", "--frames", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 2


def test_unknown_config_key_exit_two(tmp_path, capsys):
    cfg = write_config(tmp_path, {"sed": 1})
    assert main(["anchors", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_bad_thread_count(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PLAN_CLI_THREADS", "many")
    assert main(["bench", "--config", write_config(tmp_path), "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("PLAN_CLI_THREADS", "0")
    assert main(["bench", "--config", write_config(tmp_path), "--out", str(tmp_path)]) == 2


def test_unknown_variant(tmp_path, capsys):
    assert main(["bench", "--variants", "mystery", "--out", str(tmp_path)]) == 2


# --------------------------------------------------------------------------
# anchors


def test_single_anchor_is_mean_path(tmp_path, frames_file, capsys):
    assert main(["anchors", "--frames", str(frames_file), "--k", "1", "--out", str(tmp_path),
                 "--check"]) == 0
    doc = json.loads((tmp_path / "anchors.json").read_text())
    paths = local_paths(label_frames(load_frames(frames_file)))
    mean = np.mean([p.points for p in paths], axis=0)
    assert np.allclose(doc["paths"][0], mean, atol=1e-9)
    assert "inertia=" in capsys.readouterr().out


def test_anchors_deterministic_under_seed(tmp_path, frames_file, capsys):
    outs = []
    for run in ("a", "b"):
        assert main(["anchors", "--frames", str(frames_file), "--seed", "5",
                     "--out", str(tmp_path / run)]) == 0
        outs.append((tmp_path / run / "anchors.json").read_bytes())
    assert outs[0] == outs[1]
    assert len(json.loads(outs[0])["paths"]) == 6


# --------------------------------------------------------------------------
# augment


def test_alpha_zero_copies_input(tmp_path, frames_file, capsys):
    cfg = write_config(tmp_path, {"augment": {"alpha": 0.0}})
    assert main(["augment", "--frames", str(frames_file), "--config", cfg,
                 "--out", str(tmp_path), "--check"]) == 0
    assert (tmp_path / "augmented.jsonl").read_bytes() == frames_file.read_bytes()


def test_all_threatening_and_safe(tmp_path, frames_file, capsys):
    cfg = write_config(tmp_path, {"seed": 2, "augment": {"alpha": 1.0, "threat_prob": 1.0}})
    assert main(["augment", "--frames", str(frames_file), "--config", cfg,
                 "--out", str(tmp_path), "--check"]) == 0
    assert "threatening=" in capsys.readouterr().out
    frames = load_frames(tmp_path / "augmented.jsonl")
    reports = [json.loads(ln) for ln in (tmp_path / "augment_reports.jsonl").read_text().splitlines()]
    assert len(reports) == len(frames) == 120
    originals = load_frames(frames_file)
    n_eligible = 0
    for f, orig, r in zip(frames, originals, reports):
        lab = derive_labels(orig.ego)
        if lab.displacements.cumulative()[15] < 2.0:
            assert not r["inserted"]
            continue
        n_eligible += 1
        if not r["inserted"]:
            continue
        assert r["role"] == "threatening"
        agent = next(a for a in f.agents if a.id == r["agent_id"])
        new = PlanLabels(lab.drive_path, DisplacementSequence(np.array(r["displacements"])))
        assert new.displacements.total == pytest.approx(r["beta"] * r["d_orig"], abs=1e-9)
        gaps = labeled_step_distances(new.drive_path.points, new.displacements.cumulative(), agent)
        assert np.all(gaps >= 1.0)
    assert sum(r["inserted"] for r in reports) >= 0.9 * n_eligible


# --------------------------------------------------------------------------
# train / simulate / bench


def test_train_writes_loadable_params(tmp_path, capsys):
    assert main(["train", "--config", write_config(tmp_path), "--out", str(tmp_path),
                 "--check"]) == 0
    p = RegressorParams.load(tmp_path / "params.json")
    assert p.dims[2] == 16
    hist = (tmp_path / "train_history.csv").read_text().splitlines()
    assert hist[0] == "epoch,loss" and len(hist) == 4


def test_simulate_scenario_files(tmp_path, capsys):
    files = []
    for i, (sc, _) in enumerate(make_suite(["lead_brake", "stop_line"], 1, 4)):
        f = tmp_path / f"s{i}.json"
        sc.save(f)
        files.append(str(f))
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", cfg, "--scenario", *files, "--logs", "--check",
                 "--out", str(tmp_path)]) == 0
    rows = read_metrics_csv((tmp_path / "metrics.csv").read_text())
    assert len(rows) == 2
    log = load_episode_log(tmp_path / "logs" / f"{rows[0]['scenario']}.jsonl")
    assert set(log[0]) == {"t", "ego", "agents", "plan", "cmd"}


def test_simulate_missing_params(tmp_path, capsys):
    assert main(["simulate", "--config", write_config(tmp_path), "--params",
                 str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_bench_rows_and_replay(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for run in ("a", "b"):
        assert main(["bench", "--config", cfg, "--out", str(tmp_path / run), "--check"]) == 0
    a = (tmp_path / "a" / "comparison.csv").read_text()
    assert a.splitlines()[0].startswith("variant,seed,alpha")
    assert [ln.split(",")[0] for ln in a.splitlines()[1:]] == ["parallel", "cascaded", "cascaded_aug"]
    for name in ("comparison.csv", "plot_data.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    plot = (tmp_path / "a" / "plot_data.csv").read_text().splitlines()
    assert plot[0] == "variant,scenario,t,speed,min_gap" and len(plot) > 100
