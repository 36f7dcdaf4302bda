"""
Kinematic bicycle and the two independent PID loops (steering and speed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from ..errors import PathExhausted
from ..geometry import Polyline, Pose2, wrap_angle
from ..scene import DisplacementSequence


@dataclass(frozen=True)
class BicycleState:
    pose: Pose2
    speed: float
    wheelbase: float = 2.7

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("bicycle speed must be >= 0")
        if not self.wheelbase > 0:
            raise ValueError("wheelbase must be positive")


@dataclass(frozen=True)
class PIDGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 1.0
    output_limit: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")
        if not self.integral_limit > 0:
            raise ValueError("integral_limit must be positive")
        if not self.output_limit[0] < self.output_limit[1]:
            raise ValueError("output_limit must satisfy min < max")


@dataclass(frozen=True)
class PIDState:
    integral: float = 0.0
    prev_error: float = 0.0
    primed: bool = False


# Defaults tuned on the tracking tests; not taken from any published values.
STEER_GAINS = PIDGains(kp=1.2, ki=0.05, kd=0.05, integral_limit=1.0, output_limit=(-0.6, 0.6))
# The speed loop tracks the plan's average speed over step SPEED_PREVIEW_STEP,
# centered 0.5 s ahead; kp = 1 / 0.5 s then realizes the planned acceleration.
SPEED_PREVIEW_STEP = 3
SPEED_GAINS = PIDGains(kp=2.0, ki=0.1, kd=0.0, integral_limit=0.5, output_limit=(-6.0, 2.5))


def pid_step(state: PIDState, error: float, dt: float, gains: PIDGains) -> Tuple[float, PIDState]:
    """One PID update with a clamped integral (anti-windup) and a clamped output."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    integral = float(np.clip(state.integral + error * dt, -gains.integral_limit, gains.integral_limit))
    deriv = (error - state.prev_error) / dt if state.primed else 0.0
    raw = gains.kp * error + gains.ki * integral + gains.kd * deriv
    cmd = float(np.clip(raw, *gains.output_limit))
    return cmd, PIDState(integral, error, True)


def lookahead_distance(speed: float, base: float = 3.0, gain: float = 0.6) -> float:
    return base + gain * speed


def heading_error(ego: BicycleState, path: Polyline, lookahead: float) -> float:
    """Wrapped angle from the ego heading to the bearing of the look-ahead point.

    The look-ahead point sits ``lookahead`` meters past the ego's projection on
    the path (extrapolated beyond the last vertex if needed).
    """
    p = ego.pose
    s0 = path.project([p.x, p.y])
    if s0 >= path.length - 1e-9:
        end = path.points[-1]
        fwd = path.points[-1] - path.points[-2]
        if np.dot([p.x - end[0], p.y - end[1]], fwd) > 0:
            raise PathExhausted("ego has passed the end of its path")
    target, _ = path.sample(s0 + lookahead)
    desired = math.atan2(target[1] - p.y, target[0] - p.x)
    return wrap_angle(desired - p.heading)


def lateral_control(ego: BicycleState, path: Polyline, gains: PIDGains = STEER_GAINS,
                    state: PIDState = PIDState(), dt: float = 0.05) -> Tuple[float, PIDState]:
    """Steering angle (left positive) from the heading error toward the look-ahead point."""
    err = heading_error(ego, path, lookahead_distance(ego.speed))
    return pid_step(state, err, dt, gains)


def longitudinal_control(ego: BicycleState, disps: DisplacementSequence,
                         gains: PIDGains = SPEED_GAINS, state: PIDState = PIDState(),
                         dt: float = 0.05) -> Tuple[float, PIDState]:
    """Acceleration command (throttle > 0, brake < 0) toward the plan's preview speed.

    The first planned step barely differs from the current speed, so a small bias
    there would dominate; a later step carries the planned acceleration.
    """
    k = min(SPEED_PREVIEW_STEP, len(disps.values) - 1)
    desired = disps.values[k] / disps.dt
    return pid_step(state, desired - ego.speed, dt, gains)


def step_bicycle(state: BicycleState, command: Tuple[float, float], dt: float) -> BicycleState:
    """Forward-Euler kinematic bicycle step; speed is floored at zero (no reverse)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    steer, accel = command
    p, v = state.pose, state.speed
    x = p.x + v * math.cos(p.heading) * dt
    y = p.y + v * math.sin(p.heading) * dt
    h = p.heading + v / state.wheelbase * math.tan(steer) * dt
    return replace(state, pose=Pose2(x, y, h), speed=max(0.0, v + accel * dt))
