"""Vehicle dynamics, target motion models, and sensor models.

Everything here is a pure function of explicit arguments so the same code
serves truth simulation, the local filters, and the centralized baseline.
Discretization is a single forward-Euler step per tick throughout.

State layouts:
  robot pose      [x, y, heading]           heading wrapped to (-pi, pi]
  position target [x, y]
  NCV target      [x, xdot, y, ydot]
  sensor bias     [bx, by]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry
from .variables import VariableId


def wrap_angle(a):
    """Wrap an angle (or array of angles) to the half-open interval (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)  # boundary belongs to the upper end
    if np.isscalar(a) or np.asarray(a).ndim == 0:
        return float(w)
    return w


# ---------------------------------------------------------------------------
# Dubins vehicle (front steered, fixed wheelbase)
# ---------------------------------------------------------------------------

DEFAULT_WHEELBASE = 0.6  # meters


def dubins_step(
    pose: np.ndarray,
    v: float,
    phi: float,
    dt: float,
    wheelbase: float = DEFAULT_WHEELBASE,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One Euler step of the steered-vehicle kinematics.

    ``noise`` holds additive rate disturbances [wx, wy, wtheta]; omit it for
    the deterministic step used in filter prediction.
    """
    x, y, th = float(pose[0]), float(pose[1]), float(pose[2])
    wx, wy, wth = (0.0, 0.0, 0.0) if noise is None else noise
    nx = x + dt * (v * np.cos(th) + wx)
    ny = y + dt * (v * np.sin(th) + wy)
    nth = wrap_angle(th + dt * (v / wheelbase * np.tan(phi) + wth))
    return np.array([nx, ny, nth])


def dubins_jacobian(pose: np.ndarray, v: float, dt: float) -> np.ndarray:
    """State Jacobian of `dubins_step` at the given pose."""
    th = float(pose[2])
    return np.array([
        [1.0, 0.0, -dt * v * np.sin(th)],
        [0.0, 1.0, dt * v * np.cos(th)],
        [0.0, 0.0, 1.0],
    ])


def dubins_transition(
    mean_pose: np.ndarray,
    v: float,
    phi: float,
    dt: float,
    wheelbase: float,
    rate_noise_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linearized transition (F, c, Q) about the current mean pose.

    The predicted mean is f(mean); c = f(mean) - F @ mean reproduces it under
    the affine model x' = F x + c. Rate noise enters scaled by dt, so the
    discrete noise covariance is dt^2 * rate_noise_cov.
    """
    f = dubins_jacobian(mean_pose, v, dt)
    pred = dubins_step(mean_pose, v, phi, dt, wheelbase)
    c = pred - f @ mean_pose
    q = dt * dt * np.asarray(rate_noise_cov, dtype=float)
    return f, c, q


# ---------------------------------------------------------------------------
# Target motion models
# ---------------------------------------------------------------------------


def controlled_target_step(
    state: np.ndarray, u: np.ndarray, noise: np.ndarray | None = None
) -> np.ndarray:
    """Known-control position target: x' = x + u + w. u = 0 models pure drift."""
    w = 0.0 if noise is None else np.asarray(noise, dtype=float)
    return np.asarray(state, dtype=float) + np.asarray(u, dtype=float) + w


def controlled_target_transition(
    u: np.ndarray, step_noise_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F, c, Q) for the known-control position target; exact, no linearization."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    return np.eye(n), u.copy(), np.asarray(step_noise_cov, dtype=float)


def ncv_transition(dt: float, accel_psd: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F, c, Q) for nearly-constant-velocity motion over [x, xdot, y, ydot].

    accel_psd is the white acceleration power spectral density (per axis);
    the per-axis process noise block is the usual
    accel_psd * [[dt^3/3, dt^2/2], [dt^2/2, dt]].
    """
    f1 = np.array([[1.0, dt], [0.0, 1.0]])
    q1 = accel_psd * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    z = np.zeros((2, 2))
    f = np.block([[f1, z], [z, f1]])
    q = np.block([[q1, z], [z, q1]])
    return f, np.zeros(4), q


NCV_POSITION_PICK = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


def position_of(state: np.ndarray) -> np.ndarray:
    """[x, y] of either a 2-d position target or a 4-d NCV target."""
    s = np.asarray(state, dtype=float)
    if s.shape[0] == 2:
        return s
    if s.shape[0] == 4:
        return s[[0, 2]]
    raise DegenerateGeometry(f"no position in state of dim {s.shape[0]}")


# ---------------------------------------------------------------------------
# Range-bearing sensing (nonlinear)
# ---------------------------------------------------------------------------

_MIN_RANGE = 1.0e-9


def range_bearing_predict(pose: np.ndarray, point: np.ndarray) -> np.ndarray:
    """[range, bearing] from a pose to a planar point; bearing is body-relative."""
    dx = float(point[0]) - float(pose[0])
    dy = float(point[1]) - float(pose[1])
    r = float(np.hypot(dx, dy))
    if r < _MIN_RANGE:
        raise DegenerateGeometry("zero range between sensor and point")
    b = wrap_angle(np.arctan2(dy, dx) - float(pose[2]))
    return np.array([r, b])


def range_bearing_jacobians(
    pose: np.ndarray, point: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of [range, bearing] w.r.t. the pose and the point."""
    dx = float(point[0]) - float(pose[0])
    dy = float(point[1]) - float(pose[1])
    r2 = dx * dx + dy * dy
    r = np.sqrt(r2)
    if r < _MIN_RANGE:
        raise DegenerateGeometry("zero range between sensor and point")
    h_pose = np.array([
        [-dx / r, -dy / r, 0.0],
        [dy / r2, -dx / r2, -1.0],
    ])
    h_point = np.array([
        [dx / r, dy / r],
        [-dy / r2, dx / r2],
    ])
    return h_pose, h_point


# ---------------------------------------------------------------------------
# Biased position sensing (linear)
# ---------------------------------------------------------------------------


def biased_position_matrix(target_dim: int) -> np.ndarray:
    """H over the canonical (target, bias) stack for y = pos(t) + s + v."""
    if target_dim == 2:
        h_t = np.eye(2)
    elif target_dim == 4:
        h_t = NCV_POSITION_PICK
    else:
        raise DegenerateGeometry(f"unsupported target dim {target_dim}")
    return np.concatenate([h_t, np.eye(2)], axis=1)


def bias_only_matrix() -> np.ndarray:
    """H for the direct bias observation m = s + v."""
    return np.eye(2)


# ---------------------------------------------------------------------------
# Measurement records (what a sensor produced at one tick)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearMeasurement:
    """z = H x + v over the canonically-ordered variable tuple."""

    variables: tuple[VariableId, ...]
    matrix: np.ndarray
    z: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(sorted(self.variables)))
        width = sum(v.dim for v in self.variables)
        if self.matrix.shape != (self.z.shape[0], width):
            raise DegenerateGeometry(
                f"H shape {self.matrix.shape} inconsistent with z dim "
                f"{self.z.shape[0]} and variables of total dim {width}"
            )


@dataclass(frozen=True, eq=False)
class RangeBearingMeasurement:
    """Range-bearing return to either a known landmark or an estimated target.

    Exactly one of ``landmark`` (fixed, known position) and ``target`` is set.
    """

    pose: VariableId
    z: np.ndarray
    noise_cov: np.ndarray
    landmark: tuple[float, float] | None = None
    target: VariableId | None = None

    def __post_init__(self):
        if (self.landmark is None) == (self.target is None):
            raise DegenerateGeometry("exactly one of landmark/target must be set")


Measurement = LinearMeasurement | RangeBearingMeasurement
