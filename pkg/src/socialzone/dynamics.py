"""Discrete-time plant models: robot double integrator, human predictor.

The robot is a 2D double integrator driven by acceleration inputs; the
update here is the exact zero-order-hold discretization, so N steps at
constant input match the continuous closed form exactly. Humans move at
constant velocity and ignore the robot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Ellipse, wrap_angle
from .zonelearn import ZoneModel

__all__ = [
    "RobotState",
    "HumanState",
    "double_integrator_matrices",
    "step_robot",
    "predict_human",
    "zone_at",
]


@dataclass(frozen=True, eq=False)
class RobotState:
    """Planar position and velocity, meters and meters/second."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, float).reshape(2))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, float).reshape(4)
        return cls(position=x[:2], velocity=x[2:])


@dataclass(frozen=True, eq=False)
class HumanState:
    """Constant-velocity pedestrian; facing covers the stationary case.

    heading is the direction of travel when moving, otherwise the
    configured facing angle (required for stationary humans, since the
    zone orientation has nowhere else to come from).
    """

    position: np.ndarray
    velocity: np.ndarray
    facing: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, float).reshape(2))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    @property
    def heading(self) -> float:
        if self.speed > 1e-12:
            return wrap_angle(float(np.arctan2(self.velocity[1], self.velocity[0])))
        if self.facing is None:
            raise ValueError("stationary human needs a configured facing angle")
        return wrap_angle(self.facing)


def double_integrator_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """State and input matrices of the discrete double integrator."""
    a = np.eye(4)
    a[0, 2] = a[1, 3] = dt
    b = np.array([
        [0.5 * dt * dt, 0.0],
        [0.0, 0.5 * dt * dt],
        [dt, 0.0],
        [0.0, dt],
    ])
    return a, b


def step_robot(state: RobotState, u, dt: float) -> RobotState:
    """One exact double-integrator step under constant acceleration u."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, float).reshape(2)
    return RobotState(
        position=state.position + state.velocity * dt + 0.5 * u * dt * dt,
        velocity=state.velocity + u * dt,
    )


def predict_human(state: HumanState, k: int, dt: float) -> HumanState:
    """Constant-velocity prediction k steps ahead."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return HumanState(
        position=state.position + (k * dt) * state.velocity,
        velocity=state.velocity,
        facing=state.facing,
    )


def zone_at(human: HumanState, model: ZoneModel, query_speed: float) -> Ellipse:
    """World-frame social zone ellipse around a human for a query speed.

    Selects the modeled zone by rounding the query speed up (see
    ZoneModel.lookup), then maps the body-frame ellipse through the
    human's heading and position.
    """
    _, zone, _ = model.lookup(query_speed)
    psi = human.heading
    c, s = np.cos(psi), np.sin(psi)
    rot = np.array([[c, -s], [s, c]])
    return Ellipse(
        center=human.position + rot @ zone.center,
        a=zone.a,
        b=zone.b,
        theta=wrap_angle(zone.theta + psi),
    )
