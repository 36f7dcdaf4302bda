"""
Scripted scenarios for the closed-loop micro-simulator.

Agents are pure functions of time (plus, for cut-ins, the time the trigger
fired). Scenario families are generated from a seeded ``numpy`` Generator so a
suite is reproducible from ``(family, seed)`` alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..geometry import OrientedBox, Polyline, Pose2
from ..scene import AgentTrack
from .control import BicycleState

LANE_WIDTH = 3.5
DIMS = {"vehicle": (4.5, 2.0), "pedestrian": (0.8, 0.8), "cyclist": (1.8, 0.7)}
FAMILIES = ("lead_brake", "cut_in", "crossing", "merge", "stop_line")


def make_route(segments: Sequence[Tuple[str, float, float]], start: Pose2 = Pose2(0.0, 0.0, 0.0),
               step: float = 1.0) -> Polyline:
    """Chain of ``("straight", length, 0)`` / ``("arc", radius, signed angle)`` pieces."""
    x, y, h = start.x, start.y, start.heading
    pts = [(x, y)]
    for kind, a, b in segments:
        if kind == "straight":
            n = max(1, int(math.ceil(a / step)))
            for _ in range(n):
                x += a / n * math.cos(h)
                y += a / n * math.sin(h)
                pts.append((x, y))
        elif kind == "arc":
            radius, angle = a, b
            n = max(2, int(math.ceil(abs(angle) * radius / step)))
            dh = angle / n
            chord = 2 * radius * math.sin(abs(dh) / 2)
            for _ in range(n):
                x += chord * math.cos(h + dh / 2)
                y += chord * math.sin(h + dh / 2)
                h += dh
                pts.append((x, y))
        else:
            raise ValueError(f"unknown route segment {kind!r}")
    return Polyline(pts)


def _normal(heading):
    return np.stack([-np.sin(heading), np.cos(heading)], axis=-1)


# --------------------------------------------------------------------------
# Agent scripts


@dataclass
class AgentScript:
    kind: str
    params: dict
    category: str = "vehicle"

    def __post_init__(self):
        self._route = None
        self._profile = None

    @property
    def dims(self) -> Tuple[float, float]:
        return tuple(self.params.get("dims", DIMS[self.category]))

    # ---- lane-following helpers
    def _path(self) -> Polyline:
        if self._route is None:
            self._route = Polyline(self.params["path"])
        return self._route

    def _arc(self, t: float) -> float:
        """Arc position along the lane for speed profile cruise/brake/hold/resume."""
        p = self.params
        v, s0 = p["speed"], p["s0"]
        tb = p.get("brake_time")
        if tb is None or t <= tb:
            return s0 + v * t
        dec = p["decel"]
        t_stop = v / dec
        hold = p.get("hold", 2.0)
        acc = p.get("resume_accel", 2.0)
        s_b = s0 + v * tb
        u = t - tb
        if u <= t_stop:
            return s_b + v * u - 0.5 * dec * u * u
        s_stop = s_b + v * t_stop - 0.5 * dec * t_stop ** 2
        u -= t_stop
        if u <= hold:
            return s_stop
        u -= hold
        t_up = v / acc
        if u <= t_up:
            return s_stop + 0.5 * acc * u * u
        return s_stop + 0.5 * acc * t_up ** 2 + v * (u - t_up)

    def _offset(self, t: float, trig: Optional[float]) -> Tuple[float, float]:
        """Lateral offset and its rate; cut-ins blend to zero after the trigger fires."""
        p = self.params
        d0 = p.get("offset", 0.0)
        if trig is None or "trigger_gap" not in p:
            return d0, 0.0
        dur = p.get("cut_duration", 2.0)
        u = min(max((t - trig) / dur, 0.0), 1.0)
        blend = 0.5 - 0.5 * math.cos(math.pi * u)
        rate = -d0 * 0.5 * math.pi * math.sin(math.pi * u) / dur if 0 < u < 1 else 0.0
        return d0 * (1.0 - blend), rate

    def pose_at(self, t: float, trig: Optional[float] = None) -> Pose2:
        p = self.params
        if self.kind == "parked":
            return Pose2(p["x"], p["y"], p.get("heading", 0.0))
        if self.kind == "crossing":
            u = max(0.0, t - p.get("start_time", 0.0))
            h = p["heading"]
            return Pose2(p["x"] + p["speed"] * u * math.cos(h), p["y"] + p["speed"] * u * math.sin(h), h)
        if self.kind == "lane_follow":
            path = self._path()
            s = max(0.0, self._arc(t))
            xy, h = path.sample(s)
            d, rate = self._offset(t, trig)
            pos = xy + d * _normal(h)
            v = max(p["speed"], 0.1)
            return Pose2(pos[0], pos[1], h + math.atan2(rate, v))
        raise ValueError(f"unknown agent kind {self.kind!r}")

    def arc_at(self, t: float) -> float:
        return self._arc(t) if self.kind == "lane_follow" else 0.0

    def track(self, agent_id: int, t: float, trig: Optional[float], horizon: int,
              dt: float) -> AgentTrack:
        """Current box plus ``horizon`` predicted poses with the trigger state frozen at ``t``."""
        now = self.pose_at(t, trig)
        fut = tuple(self.pose_at(t + k * dt, trig) for k in range(1, horizon + 1))
        return AgentTrack(agent_id, self.category, OrientedBox(now, *self.dims), fut, 1.0)

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "path" in params:
            params["path"] = np.asarray(params["path"]).tolist()
        return {"kind": self.kind, "category": self.category, "params": params}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentScript":
        return cls(d["kind"], dict(d["params"]), d.get("category", "vehicle"))


@dataclass
class Scenario:
    name: str
    route: Polyline
    ego_start: BicycleState
    agents: List[AgentScript] = field(default_factory=list)
    stop_lines: List[Tuple[float, float]] = field(default_factory=list)  # (arc, hold seconds)
    duration: float = 20.0
    family: str = "custom"
    speed_limit: Optional[float] = None     # m/s; exposed to the planner with every frame

    def __post_init__(self):
        if not self.route.length > 0:
            raise ValueError("route must have positive length")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def to_dict(self) -> dict:
        e = self.ego_start
        return {"name": self.name, "family": self.family,
                "route": self.route.points.tolist(),
                "ego": {"x": e.pose.x, "y": e.pose.y, "heading": e.pose.heading,
                        "speed": e.speed, "wheelbase": e.wheelbase},
                "agents": [a.to_dict() for a in self.agents],
                "stop_lines": [list(s) for s in self.stop_lines],
                "duration": self.duration, "speed_limit": self.speed_limit}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        e = d["ego"]
        ego = BicycleState(Pose2(e["x"], e["y"], e["heading"]), e["speed"], e.get("wheelbase", 2.7))
        return cls(d["name"], Polyline(d["route"]), ego,
                   [AgentScript.from_dict(a) for a in d.get("agents", [])],
                   [tuple(s) for s in d.get("stop_lines", [])], float(d["duration"]),
                   d.get("family", "custom"), d.get("speed_limit"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Families


def _offset_path(route: Polyline, offset: float) -> np.ndarray:
    xy, h = route.sample(route.cum_arc)
    # vertex headings: average of adjacent segment headings
    seg_h = np.arctan2(np.diff(route.points[:, 1]), np.diff(route.points[:, 0]))
    vh = np.concatenate([[seg_h[0]], np.arctan2(np.sin(seg_h[:-1]) + np.sin(seg_h[1:]),
                                                np.cos(seg_h[:-1]) + np.cos(seg_h[1:])), [seg_h[-1]]])
    return route.points + offset * _normal(vh)


def _curvy_route(rng, lead_in: float, total: float) -> Polyline:
    # most episodes curve: on a straight road the parallel and cascaded variants coincide
    if rng.random() < 0.25:
        return make_route([("straight", total, 0.0)])
    radius = rng.uniform(15.0, 30.0)
    angle = math.radians(rng.uniform(40.0, 90.0)) * (1 if rng.random() < 0.5 else -1)
    arc_len = abs(angle) * radius
    return make_route([("straight", lead_in, 0.0), ("arc", radius, angle),
                       ("straight", max(10.0, total - lead_in - arc_len), 0.0)])


def _scenario(name, route, speed, agents, stop_lines, duration, family) -> Scenario:
    return Scenario(name, route, _ego(route, speed), agents, stop_lines, duration, family, speed)


def _ego(route: Polyline, speed: float) -> BicycleState:
    xy, h = route.sample(0.0)
    return BicycleState(Pose2(xy[0], xy[1], h), speed)


def lead_brake(rng: np.random.Generator, name: str) -> Scenario:
    route = _curvy_route(rng, rng.uniform(10.0, 25.0), 90.0)
    v_ego = rng.uniform(6.0, 8.0)
    lead = AgentScript("lane_follow", {
        "path": route.points, "s0": rng.uniform(16.0, 26.0), "speed": rng.uniform(5.5, 8.0),
        "brake_time": rng.uniform(1.0, 4.0), "decel": rng.uniform(3.0, 7.0),
        "hold": rng.uniform(1.5, 3.0), "resume_accel": 2.0})
    return _scenario(name, route, v_ego, [lead], [], 28.0, "lead_brake")


def cut_in(rng: np.random.Generator, name: str) -> Scenario:
    route = _curvy_route(rng, rng.uniform(10.0, 25.0), 90.0)
    v_ego = rng.uniform(6.5, 8.5)
    side = 1.0 if rng.random() < 0.5 else -1.0
    cutter = AgentScript("lane_follow", {
        "path": route.points, "s0": rng.uniform(10.0, 22.0), "speed": rng.uniform(3.5, 6.0),
        "offset": side * LANE_WIDTH, "trigger_gap": rng.uniform(7.0, 12.0),
        "cut_duration": rng.uniform(1.2, 2.2)})
    return _scenario(name, route, v_ego, [cutter], [], 28.0, "cut_in")


def crossing(rng: np.random.Generator, name: str) -> Scenario:
    v_ego = rng.uniform(6.0, 8.0)
    if rng.random() < 0.8:   # mostly junction turns, where path-aware reasoning matters
        radius = rng.uniform(9.0, 14.0)
        angle = math.radians(90.0) * (1 if rng.random() < 0.5 else -1)
        lead_in = rng.uniform(12.0, 20.0)
        route = make_route([("straight", lead_in, 0.0), ("arc", radius, angle), ("straight", 45.0, 0.0)])
        s_c = lead_in + abs(angle) * radius + rng.uniform(3.0, 10.0)
    else:
        route = make_route([("straight", 80.0, 0.0)])
        s_c = rng.uniform(22.0, 40.0)
    cat = "pedestrian" if rng.random() < 0.5 else "vehicle"
    speed = rng.uniform(1.2, 2.0) if cat == "pedestrian" else rng.uniform(5.0, 8.0)
    xy, h = route.sample(s_c)
    side = 1.0 if rng.random() < 0.5 else -1.0
    t_conf = s_c / v_ego + rng.uniform(-0.8, 0.8)
    start_dist = speed * t_conf
    heading = h - side * math.pi / 2
    sx = xy[0] + side * start_dist * -math.sin(h)
    sy = xy[1] + side * start_dist * math.cos(h)
    agent = AgentScript("crossing", {"x": sx, "y": sy, "heading": heading, "speed": speed,
                                     "start_time": 0.0}, cat)
    return _scenario(name, route, v_ego, [agent], [], 26.0, "crossing")


def merge(rng: np.random.Generator, name: str) -> Scenario:
    """Ego ramp curves onto a straight main road carrying traffic."""
    v_ego = rng.uniform(6.0, 8.0)
    side = 1.0 if rng.random() < 0.5 else -1.0
    angle = math.radians(rng.uniform(25.0, 40.0))
    radius = rng.uniform(25.0, 40.0)
    ramp = rng.uniform(8.0, 16.0)
    # ramp heads into the road at `angle`; the arc turns it parallel to the road
    start = Pose2(0.0, 0.0, side * -angle)
    route = make_route([("straight", ramp, 0.0), ("arc", radius, side * angle),
                        ("straight", 50.0, 0.0)], start=start)
    s_merge = ramp + angle * radius
    mxy, mh = route.sample(s_merge)
    road = make_route([("straight", 160.0, 0.0)], start=Pose2(mxy[0] - 80.0, mxy[1], 0.0))
    agents = []
    # traffic well below the ego's limit: scripted cars cannot react, so a faster
    # one would run down an ego that merged correctly ahead of it
    v_tr = v_ego * rng.uniform(0.6, 0.85)
    t_m = s_merge / v_ego + rng.uniform(-0.8, 0.8)
    s_first = 80.0 - v_tr * t_m
    gap = rng.uniform(14.0, 24.0)
    for i in range(int(rng.integers(1, 3))):
        agents.append(AgentScript("lane_follow", {"path": road.points, "s0": s_first - i * gap,
                                                  "speed": v_tr}))
    return _scenario(name, route, v_ego, agents, [], 26.0, "merge")


def stop_line(rng: np.random.Generator, name: str) -> Scenario:
    route = make_route([("straight", 80.0, 0.0)])
    return _scenario(name, route, rng.uniform(5.0, 8.0), [],
                    [(rng.uniform(25.0, 35.0), rng.uniform(3.0, 6.0))], 30.0, "stop_line")


def empty_route(name: str = "empty", length: float = 60.0, speed: float = 5.0) -> Scenario:
    route = make_route([("straight", length, 0.0)])
    return _scenario(name, route, speed, [], [], 30.0, "empty")


GENERATORS = {"lead_brake": lead_brake, "cut_in": cut_in, "crossing": crossing,
              "merge": merge, "stop_line": stop_line}


def make_suite(families: Sequence[str], n_per_family: int, seed: int) -> List[Tuple[Scenario, int]]:
    """Interleaved ``(scenario, episode seed)`` pairs, deterministic in ``seed``."""
    out = []
    for k in range(n_per_family):
        for fi, fam in enumerate(families):
            ep_seed = int(np.random.SeedSequence([seed, fi, k]).generate_state(1)[0])
            rng = np.random.default_rng(ep_seed)
            out.append((GENERATORS[fam](rng, f"{fam}-{k:03d}"), ep_seed))
    return out
