"""
Small frame and label builders shared by the tests.
"""

from __future__ import annotations

import math

import numpy as np

from cascade_plan.geometry import OrientedBox, Polyline, Pose2
from cascade_plan.scene import AgentTrack, EgoRecord, Frame, MapLine, derive_labels


def ego_on_curve(speed=5.0, curvature=0.0, heading=0.0, x0=0.0, y0=0.0, steps=15, dt=0.2,
                 past=True):
    """Ego driving at constant speed along a circle (straight for zero curvature)."""
    rows = []
    if past:
        rows.append((-dt,) + _arc_point(-speed * dt, curvature, heading, x0, y0))
    for k in range(1, steps + 1):
        rows.append((k * dt,) + _arc_point(speed * k * dt, curvature, heading, x0, y0))
    return EgoRecord(Pose2(x0, y0, heading), speed, tuple(rows))


def _arc_point(s, kappa, heading, x0, y0):
    if abs(kappa) < 1e-12:
        return (x0 + s * math.cos(heading), y0 + s * math.sin(heading))
    r = 1.0 / kappa
    return (x0 + r * (math.sin(heading + s * kappa) - math.sin(heading)),
            y0 - r * (math.cos(heading + s * kappa) - math.cos(heading)))


def track(aid, x, y, h=0.0, length=4.5, width=2.0, vx=0.0, vy=0.0, steps=15, dt=0.2,
          confidence=1.0, category="vehicle"):
    """Constant-velocity agent."""
    fut = tuple(Pose2(x + vx * k * dt, y + vy * k * dt, h) for k in range(1, steps + 1))
    return AgentTrack(aid, category, OrientedBox(Pose2(x, y, h), length, width), fut, confidence)


def frame(ego=None, agents=(), t=0.0, speed_limit=None):
    ego = ego or ego_on_curve()
    lane = Polyline([(ego.pose.x, ego.pose.y), (ego.pose.x + 100 * math.cos(ego.pose.heading),
                                                ego.pose.y + 100 * math.sin(ego.pose.heading))])
    return Frame(t, ego, tuple(agents), (MapLine("lane", lane),), speed_limit)


def random_frame(rng, n_agents=None):
    """Frame with a random curved ego log and random constant-velocity agents."""
    ego = ego_on_curve(rng.uniform(2.0, 10.0), rng.uniform(-0.05, 0.05), rng.uniform(-3, 3),
                       rng.uniform(-50, 50), rng.uniform(-50, 50))
    n = int(rng.integers(0, 4)) if n_agents is None else n_agents
    cats = ("vehicle", "pedestrian", "cyclist")
    agents = [track(i, *rng.uniform(-60, 60, 2), rng.uniform(-3, 3), rng.uniform(0.5, 5),
                    rng.uniform(0.5, 2.5), *rng.uniform(-8, 8, 2), confidence=rng.uniform(0, 1),
                    category=cats[int(rng.integers(3))])
              for i in range(n)]
    return Frame(round(float(rng.uniform(0, 100)), 3), ego, tuple(agents),
                 (MapLine("lane", Polyline(rng.uniform(-50, 50, (4, 2)))),),
                 float(rng.uniform(3, 12)) if rng.random() < 0.5 else None)


def labeled(ego=None, agents=()):
    f = frame(ego, agents)
    return f, derive_labels(f.ego)


def track_straight(y0=1.0, speed=5.0, seconds=8.0, dt=0.05):
    """Closed-loop lateral tracking of the x axis from a lateral offset; returns (t, y) rows."""
    from cascade_plan.geometry import Pose2 as P
    from cascade_plan.scene import DisplacementSequence
    from cascade_plan.simctrl import BicycleState, PIDState, lateral_control, longitudinal_control, step_bicycle
    path = Polyline([(0.0, 0.0), (500.0, 0.0)])
    plan = DisplacementSequence(np.full(16, speed * 0.2))
    ego = BicycleState(P(0.0, y0, 0.0), speed)
    lat, lon = PIDState(), PIDState()
    rows = []
    for k in range(int(round(seconds / dt)) + 1):
        rows.append((k * dt, ego.pose.y))
        steer, lat = lateral_control(ego, path, state=lat, dt=dt)
        accel, lon = longitudinal_control(ego, plan, state=lon, dt=dt)
        ego = step_bicycle(ego, (steer, accel), dt)
    return np.array(rows)


def speed_step(target=5.0, seconds=10.0, dt=0.05):
    """Closed-loop speed response from rest to a constant planned speed; returns (t, v) rows."""
    from cascade_plan.scene import DisplacementSequence
    from cascade_plan.simctrl import BicycleState, PIDState, longitudinal_control, step_bicycle
    plan = DisplacementSequence(np.full(16, target * 0.2))
    ego = BicycleState(Pose2(0.0, 0.0, 0.0), 0.0)
    lon = PIDState()
    rows = []
    for k in range(int(round(seconds / dt)) + 1):
        rows.append((k * dt, ego.speed))
        accel, lon = longitudinal_control(ego, plan, state=lon, dt=dt)
        ego = step_bicycle(ego, (0.0, accel), dt)
    return np.array(rows)


def circle_closure(radius=10.0, speed=5.0, dt=0.05, wheelbase=2.7):
    """Relative closure error of a constant-steer bicycle after one nominal period."""
    from cascade_plan.simctrl import BicycleState, step_bicycle
    steer = math.atan(wheelbase / radius)
    ego = BicycleState(Pose2(0.0, 0.0, 0.0), speed, wheelbase)
    circumference = 2 * math.pi * radius
    for _ in range(int(round(circumference / speed / dt))):
        ego = step_bicycle(ego, (steer, 0.0), dt)
    return math.hypot(ego.pose.x, ego.pose.y) / circumference
