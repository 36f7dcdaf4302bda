"""
Synthetic "natural driving" logs used to build anchors and training sets.

The ego follows a random route with a car-following speed law (speed-limit
feedback plus the intelligent-driver-model gap term),
optionally behind a lead vehicle, among background traffic that never conflicts
with it (parked cars, oncoming traffic, pedestrians on the sidewalk). Frames
are cut from each drive with a 3 s logged future and one past sample.
"""

from __future__ import annotations

import math
from typing import List, Optional

import numpy as np

from .geometry import OrientedBox, Pose2
from .scene import DT, AgentTrack, EgoRecord, Frame, MapLine
from .simctrl.scenarios import LANE_WIDTH, AgentScript, _offset_path, make_route

IDM_ACCEL = 2.0
IDM_DECEL = 3.0
IDM_GAP = 2.0        # meters at standstill
IDM_HEADWAY = 1.5    # seconds
VEH_LEN = 4.5
FREE_GAIN = 3.0  # 1/s, speed-error feedback on an open road


def _random_route(rng: np.random.Generator):
    kind = rng.choice(["straight", "curve", "turn", "s_curve"], p=[0.3, 0.3, 0.25, 0.15])
    lead_in = rng.uniform(5.0, 30.0)
    sign = 1 if rng.random() < 0.5 else -1
    if kind == "straight":
        segs = [("straight", 160.0, 0.0)]
    elif kind == "curve":
        r = rng.uniform(20.0, 45.0)
        segs = [("straight", lead_in, 0.0), ("arc", r, sign * math.radians(rng.uniform(30, 90))),
                ("straight", 120.0, 0.0)]
    elif kind == "turn":
        r = rng.uniform(8.0, 15.0)
        segs = [("straight", lead_in, 0.0), ("arc", r, sign * math.pi / 2), ("straight", 120.0, 0.0)]
    else:
        r = rng.uniform(25.0, 40.0)
        a = math.radians(rng.uniform(20, 45))
        segs = [("straight", lead_in, 0.0), ("arc", r, sign * a), ("arc", r, -sign * a),
                ("straight", 120.0, 0.0)]
    heading = rng.uniform(-math.pi, math.pi)
    return make_route(segs, start=Pose2(rng.uniform(-50, 50), rng.uniform(-50, 50), heading))


def _idm(v: float, v0: float, gap: Optional[float], dv: float) -> float:
    """Decisive speed-limit tracking plus the intelligent-driver gap term."""
    free = float(np.clip(FREE_GAIN * (v0 - v), -IDM_DECEL, IDM_ACCEL))
    if gap is None:
        return free
    s_star = IDM_GAP + v * IDM_HEADWAY + v * dv / (2.0 * math.sqrt(IDM_ACCEL * IDM_DECEL))
    return free - IDM_ACCEL * (max(s_star, 0.0) / max(gap, 0.1)) ** 2


def natural_drive(rng: np.random.Generator, duration: float = 14.0,
                  frame_every: float = 0.4) -> List[Frame]:
    """One drive cut into frames every ``frame_every`` seconds."""
    route = _random_route(rng)
    # speed limit schedule: one change part-way through the drive
    limits = [rng.uniform(4.0, 10.0), rng.uniform(4.0, 10.0)]
    t_change = rng.uniform(3.0, duration - 4.0)

    def limit_at(t: float) -> float:
        return limits[0] if t < t_change else limits[1]

    v = rng.uniform(0.0, limits[0] + 4.0)
    s = 0.0
    scripts: List[AgentScript] = []
    lead: Optional[AgentScript] = None
    u = rng.random()
    if u < 0.15:
        # queue ahead: a vehicle standing in the lane
        p = {"path": route.points, "s0": rng.uniform(20.0, 60.0), "speed": 0.0}
    elif u < 0.85:
        p = {"path": route.points, "s0": rng.uniform(6.0, 35.0), "speed": rng.uniform(2.0, 9.0)}
        if rng.random() < 0.8:
            p.update(brake_time=rng.uniform(0.5, duration - 4.0), decel=rng.uniform(2.0, 8.0),
                     hold=rng.uniform(1.0, 4.0))
    if u < 0.85:
        lead = AgentScript("lane_follow", p)
        scripts.append(lead)
    side = 1.0 if rng.random() < 0.5 else -1.0
    # parked cars well clear of the lane
    for _ in range(int(rng.integers(0, 3))):
        arc = rng.uniform(5.0, 80.0)
        xy, h = route.sample(arc)
        off = side * rng.uniform(3.2, 4.0)
        scripts.append(AgentScript("parked", {"x": xy[0] - off * math.sin(h), "y": xy[1] + off * math.cos(h),
                                              "heading": float(h)}))
    # oncoming traffic in the opposite lane
    if rng.random() < 0.6:
        opp = _offset_path(route, LANE_WIDTH * (1.0 if side < 0 else -1.0))[::-1]
        for _ in range(int(rng.integers(1, 3))):
            scripts.append(AgentScript("lane_follow", {"path": opp, "s0": rng.uniform(0.0, 80.0),
                                                       "speed": rng.uniform(4.0, 10.0)}))
    # pedestrians walking along the sidewalk
    if rng.random() < 0.4:
        walk = _offset_path(route, side * 6.0)
        scripts.append(AgentScript("lane_follow", {"path": walk, "s0": rng.uniform(0.0, 60.0),
                                                   "speed": rng.uniform(0.8, 1.6)}, "pedestrian"))

    # integrate the ego at 0.05 s and keep every 0.2 s sample
    sub = 4
    n = int(round(duration / DT))
    arcs = [s]
    speeds = [v]
    h = DT / sub
    for k in range(n * sub):
        t = k * h
        gap = dv = None
        if lead is not None:
            gap = lead.arc_at(t) - s - VEH_LEN
            lead_v = (lead.arc_at(t + 1e-3) - lead.arc_at(t)) / 1e-3
            dv = v - lead_v
        a = _idm(v, limit_at(t), gap, dv if dv is not None else 0.0)
        a = float(np.clip(a, -6.0, IDM_ACCEL))
        v_new = max(0.0, v + a * h)
        s += 0.5 * (v + v_new) * h
        v = v_new
        if (k + 1) % sub == 0:
            arcs.append(s)
            speeds.append(v)
    arcs = np.asarray(arcs)
    xy, hd = route.sample(arcs)

    frames = []
    step = max(1, int(round(frame_every / DT)))
    for i in range(1, n - 15 + 1, step):
        if arcs[i + 15] - arcs[i] < 0.5:
            continue  # stationary ego: no drive path to label
        t0 = i * DT
        fut = [(-DT, xy[i - 1, 0], xy[i - 1, 1])]
        fut += [(k * DT, xy[i + k, 0], xy[i + k, 1]) for k in range(1, 16)]
        ego = EgoRecord(Pose2(xy[i, 0], xy[i, 1], float(hd[i])), float(speeds[i]), tuple(fut))
        tracks = [sc.track(j, t0, None, 15, DT) for j, sc in enumerate(scripts)]
        frames.append(Frame(round(t0, 6), ego, tuple(tracks), (MapLine("lane", route),), limit_at(t0)))
    return frames


def natural_logs(n_drives: int, seed: int, duration: float = 14.0,
                 frame_every: float = 0.4) -> List[Frame]:
    """Frames from ``n_drives`` independent drives drawn from one seeded stream."""
    rng = np.random.default_rng(seed)
    out: List[Frame] = []
    for _ in range(n_drives):
        out.extend(natural_drive(rng, duration, frame_every))
    return out
