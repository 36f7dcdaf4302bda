"""
Scene data model, ground-truth plan labels and the newline-JSON frame log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InsufficientHorizon, ParseError, PlanError, VersionError
from .geometry import OrientedBox, Polyline, Pose2

SCHEMA = "aligndrive-frames/1"
DT = 0.2
CATEGORIES = ("vehicle", "pedestrian", "cyclist")
MAP_ROLES = ("lane", "stop_line", "boundary")
DEFAULT_T = 15
DEFAULT_P = 15
PATH_SPACING = 2.0


class ReversingMotion(PlanError):
    """Ego log contains a reversing segment; displacements are forward-only."""


@dataclass(frozen=True)
class AgentTrack:
    id: int
    category: str
    box: OrientedBox
    future: Tuple[Pose2, ...]
    confidence: float = 1.0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown agent category {self.category!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "future", tuple(self.future))

    @property
    def horizon(self) -> int:
        return len(self.future)

    def poses(self) -> np.ndarray:
        """``(T+1, 3)`` array of x, y, heading: current box pose then the future."""
        c = self.box.center
        rows = [(c.x, c.y, c.heading)] + [(p.x, p.y, p.heading) for p in self.future]
        return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class EgoRecord:
    pose: Pose2
    speed: float
    # (t, x, y) relative to the frame time; t <= 0 entries are past samples
    future_trajectory: Tuple[Tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if not (self.speed >= 0 and math.isfinite(self.speed)):
            raise ValueError(f"ego speed must be finite and >= 0, got {self.speed}")
        traj = tuple(tuple(float(v) for v in row) for row in self.future_trajectory)
        ts = [row[0] for row in traj]
        if any(b - a <= 0 for a, b in zip(ts, ts[1:])):
            raise ValueError("ego trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "future_trajectory", traj)


@dataclass(frozen=True)
class MapLine:
    role: str
    line: Polyline

    def __post_init__(self):
        if self.role not in MAP_ROLES:
            raise ValueError(f"unknown map role {self.role!r}")


@dataclass(frozen=True)
class Frame:
    timestamp: float
    ego: EgoRecord
    agents: Tuple[AgentTrack, ...] = ()
    map_lines: Tuple[MapLine, ...] = ()
    speed_limit: Optional[float] = None     # m/s, from the route; None when unknown

    def __post_init__(self):
        if self.speed_limit is not None and not self.speed_limit > 0:
            raise ValueError(f"speed_limit must be positive, got {self.speed_limit}")
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "map_lines", tuple(self.map_lines))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids in frame at t={self.timestamp}")


@dataclass(frozen=True)
class DisplacementSequence:
    values: np.ndarray  # (T+1,), index 0 is the current step
    dt: float = DT

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("displacements must be finite")
        if np.any(v < 0):
            raise ValueError("displacements must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def total(self) -> float:
        """Distance covered over the future steps 1..T (sequential sum)."""
        return float(self.cumulative()[-1])

    def cumulative(self) -> np.ndarray:
        """Arc position at each step 0..T; step 0 sits at the path start."""
        return np.concatenate([[0.0], np.cumsum(self.values[1:])])

    def __eq__(self, other) -> bool:
        return (isinstance(other, DisplacementSequence) and self.dt == other.dt
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class PlanLabels:
    drive_path: Polyline
    displacements: DisplacementSequence
    extended: bool = False


def _reject_reversing(xy: np.ndarray, heading: float) -> None:
    chords = np.diff(xy, axis=0)
    lens = np.hypot(chords[:, 0], chords[:, 1])
    moving = chords[lens > 1e-6]
    if len(moving) == 0:
        return
    fwd = np.array([math.cos(heading), math.sin(heading)])
    if moving[0] @ fwd < -1e-6 * np.linalg.norm(moving[0]):
        raise ReversingMotion("ego moves against its heading")
    unit = moving / np.linalg.norm(moving, axis=1, keepdims=True)
    # a cusp (turn sharper than 120 degrees within one step) means a gear change
    if np.any(np.sum(unit[1:] * unit[:-1], axis=1) < -0.5):
        raise ReversingMotion("ego trajectory contains a cusp")


def derive_labels(ego: EgoRecord, horizon_T: int = DEFAULT_T, path_points_P: int = DEFAULT_P,
                  dt: float = DT, spacing: float = PATH_SPACING) -> PlanLabels:
    """Drive path and per-step displacement labels from an ego log.

    The drive path starts at the current ego position and holds ``path_points_P``
    vertices ``spacing`` apart in arc length. When the logged future is too short
    the path continues straight along the last logged segment and the labels are
    flagged ``extended``.
    """
    past = [r for r in ego.future_trajectory if r[0] <= 1e-9]
    fut = [r for r in ego.future_trajectory if r[0] > 1e-9]
    if len(fut) < horizon_T:
        raise InsufficientHorizon(
            f"need {horizon_T} future samples, got {len(fut)}")
    times = np.array([r[0] for r in fut[:horizon_T]])
    if not np.allclose(times, dt * np.arange(1, horizon_T + 1), atol=1e-6):
        raise InsufficientHorizon(f"future samples are not on the {dt}s grid")
    origin = np.array([[ego.pose.x, ego.pose.y]])
    xy = np.concatenate([origin, np.array([r[1:] for r in fut])], axis=0)
    _reject_reversing(xy, ego.pose.heading)

    steps = np.hypot(*np.diff(xy[: horizon_T + 1], axis=0).T)
    first = 0.0
    prev = [r for r in past if abs(r[0] + dt) < 1e-6]
    if prev:
        first = float(np.hypot(ego.pose.x - prev[0][1], ego.pose.y - prev[0][2]))
    disps = DisplacementSequence(np.concatenate([[first], steps]), dt)

    raw = Polyline(xy)  # raises DegenerateGeometry for a stationary ego
    s = spacing * np.arange(path_points_P)
    pts, _ = raw.sample(s)
    pts[0] = xy[0]
    extended = bool(s[-1] > raw.length + 1e-9)
    return PlanLabels(Polyline(pts), disps, extended)


def displacement_within(ego: EgoRecord, seconds: float) -> float:
    """Arc length the ego covers over the next ``seconds`` of its log."""
    pts = [(ego.pose.x, ego.pose.y)] + [r[1:] for r in ego.future_trajectory
                                        if 1e-9 < r[0] <= seconds + 1e-9]
    xy = np.asarray(pts, dtype=float)
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0


# --------------------------------------------------------------------------
# Frame log I/O


def _need(obj, key, line, ctx):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError("missing field", line=line, field=f"{ctx}{key}")
    return obj[key]


def _num(obj, key, line, ctx) -> float:
    v = _need(obj, key, line, ctx)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"expected a finite number, got {v!r}", line=line, field=f"{ctx}{key}")
    return float(v)


def _rows(obj, key, width, line, ctx) -> List[List[float]]:
    v = _need(obj, key, line, ctx)
    if not isinstance(v, list):
        raise ParseError("expected a list", line=line, field=f"{ctx}{key}")
    out = []
    for i, row in enumerate(v):
        if (not isinstance(row, list) or len(row) != width
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)):
            raise ParseError(f"expected a list of {width} numbers", line=line,
                             field=f"{ctx}{key}[{i}]")
        out.append([float(x) for x in row])
    return out


def frame_to_dict(frame: Frame) -> dict:
    e = frame.ego
    d = {
        "timestamp": frame.timestamp,
        "ego": {"x": e.pose.x, "y": e.pose.y, "heading": e.pose.heading, "speed": e.speed,
                "future": [list(r) for r in e.future_trajectory]},
        "agents": [{
            "id": a.id, "category": a.category,
            "x": a.box.center.x, "y": a.box.center.y, "heading": a.box.center.heading,
            "length": a.box.length, "width": a.box.width, "confidence": a.confidence,
            "future": [[p.x, p.y, p.heading] for p in a.future],
        } for a in frame.agents],
        "map": [{"role": m.role, "points": m.line.points.tolist()} for m in frame.map_lines],
    }
    if frame.speed_limit is not None:
        d["speed_limit"] = frame.speed_limit
    return d


def frame_from_dict(d: dict, line: Optional[int] = None) -> Frame:
    try:
        e = _need(d, "ego", line, "")
        ego = EgoRecord(
            Pose2(_num(e, "x", line, "ego."), _num(e, "y", line, "ego."),
                  _num(e, "heading", line, "ego.")),
            _num(e, "speed", line, "ego."),
            tuple(tuple(r) for r in _rows(e, "future", 3, line, "ego.")))
        agents = []
        for i, a in enumerate(_need(d, "agents", line, "")):
            ctx = f"agents[{i}]."
            aid = _need(a, "id", line, ctx)
            if isinstance(aid, bool) or not isinstance(aid, int):
                raise ParseError("agent id must be an integer", line=line, field=ctx + "id")
            cat = _need(a, "category", line, ctx)
            if cat not in CATEGORIES:
                raise ParseError(f"unknown category {cat!r}", line=line, field=ctx + "category")
            box = OrientedBox(Pose2(_num(a, "x", line, ctx), _num(a, "y", line, ctx),
                                    _num(a, "heading", line, ctx)),
                              _num(a, "length", line, ctx), _num(a, "width", line, ctx))
            fut = tuple(Pose2(*r) for r in _rows(a, "future", 3, line, ctx))
            agents.append(AgentTrack(aid, cat, box, fut, _num(a, "confidence", line, ctx)))
        lines = []
        for i, m in enumerate(_need(d, "map", line, "")):
            role = _need(m, "role", line, f"map[{i}].")
            if role not in MAP_ROLES:
                raise ParseError(f"unknown map role {role!r}", line=line, field=f"map[{i}].role")
            lines.append(MapLine(role, Polyline(_rows(m, "points", 2, line, f"map[{i}]."))))
        limit = _num(d, "speed_limit", line, "") if "speed_limit" in d else None
        return Frame(_num(d, "timestamp", line, ""), ego, tuple(agents), tuple(lines), limit)
    except ParseError:
        raise
    except (ValueError, TypeError, PlanError) as exc:
        raise ParseError(str(exc), line=line) from exc


def dumps_frames(frames: Iterable[Frame], dt: float = DT) -> str:
    out = [json.dumps({"schema": SCHEMA, "dt": dt})]
    out.extend(json.dumps(frame_to_dict(f)) for f in frames)
    return "\n".join(out) + "\n"


def save_frames(frames: Iterable[Frame], path, dt: float = DT) -> None:
    Path(path).write_text(dumps_frames(frames, dt))


def loads_frames(text: str) -> List[Frame]:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file: missing header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON header: {exc.msg}", line=1) from exc
    if not isinstance(header, dict) or "schema" not in header:
        raise ParseError("header lacks 'schema'", line=1, field="schema")
    if header["schema"] != SCHEMA:
        raise VersionError(f"unsupported schema {header['schema']!r}, expected {SCHEMA!r}")
    frames = []
    for n, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=n) from exc
        frames.append(frame_from_dict(d, line=n))
    return frames


def load_frames(path) -> List[Frame]:
    return loads_frames(Path(path).read_text())


def with_agents(frame: Frame, agents: Sequence[AgentTrack]) -> Frame:
    return replace(frame, agents=tuple(agents))
