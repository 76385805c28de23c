"""Closed-loop execution of a single high-level Forward command."""
import enum
import math

import numpy as np

from ..maze import Twist, advance, raycast, wheel_velocities


class Outcome(str, enum.Enum):
    DONE = "Done"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


class NaiveForward:
    """Open-loop baseline: equal wheel speeds, blind to the scan.

    Stands in for a position-controlled forward primitive that knows the
    commanded displacement but not the obstacles in front of it.
    """

    def __init__(self, omega_max=5.0, speed=0.8):
        self.omega_max = float(omega_max)
        self.speed = float(speed)

    def __call__(self, stack):
        n = np.asarray(stack).shape[0]
        return np.full((n, 2), self.speed * self.omega_max)


def execute_forward(actor, layout, state, distance=1.0, max_steps=50, *, dt=0.1, omega_max=5.0,
                    num_beams=64, fov=math.radians(220.0), max_range=5.0, trace=None):
    """Run ``actor`` until odometric arc length reaches ``distance``.

    ``actor`` maps a batch of scan stacks (B, beams, 3, 1) to wheel speeds (B, 2).
    Returns (final RobotState, Outcome).  If ``trace`` is a list, (pose, Twist)
    pairs are appended to it for every control step.
    """
    if distance <= 0:
        return state, Outcome.DONE

    def scan(pose):
        return raycast(layout, pose, num_beams, fov, max_range).ranges

    s = scan(state.pose)
    scans = [s, s, s]
    travelled = 0.0
    for _ in range(max_steps):
        stack = np.stack(scans, axis=1)[:, :, None]
        u = np.asarray(actor(stack[None]))[0]
        a = Twist(float(u[0]), float(u[1])).clamped(omega_max)
        nxt, collided = advance(layout, state, a, dt, omega_max)
        if trace is not None:
            trace.append((nxt.pose, a))
        v_lin, _ = wheel_velocities(a, state.wheel_radius, state.wheel_base)
        travelled += abs(v_lin) * dt
        state = nxt
        if collided:
            return state, Outcome.COLLISION
        if travelled >= distance - 1e-12:
            return state, Outcome.DONE
        scans = scans[1:] + [scan(state.pose)]
    return state, Outcome.TIMEOUT
