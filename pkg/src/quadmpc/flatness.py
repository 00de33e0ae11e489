"""Feasible reference generation from flat outputs (position and heading)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import InfeasibleReferenceError, InvalidParameterError, SingularReferenceError
from .model import ThrustEnvelope
from .quadsim import E3, QuadParams, cross3

__all__ = [
    "FlatTrajectory",
    "ReferenceSample",
    "FeasibilityReport",
    "hover_trajectory",
    "circle_trajectory",
    "make_trajectory",
    "reference_frame",
    "sample_reference",
    "check_reference_feasibility",
    "thrust_profile",
    "FD_STEP",
]

FD_STEP = 1e-5
MAX_ORDER = 4


@dataclass(frozen=True)
class FlatTrajectory:
    """Flat outputs with analytic derivatives.

    ``position_fn(t, order)`` returns the ``order``-th derivative of the
    position with shape ``t.shape + (3,)`` (orders 0..4);
    ``heading_fn(t, order)`` returns the heading or its first derivative.
    """

    position_fn: Callable[[np.ndarray, int], np.ndarray]
    heading_fn: Callable[[np.ndarray, int], np.ndarray]
    kind: str = "custom"
    params: tuple = ()

    def position(self, t, order: int = 0) -> np.ndarray:
        if not 0 <= order <= MAX_ORDER:
            raise InvalidParameterError(f"position derivatives available up to order {MAX_ORDER}")
        return self.position_fn(np.asarray(t, dtype=float), order)

    def heading(self, t, order: int = 0):
        if order not in (0, 1):
            raise InvalidParameterError("heading derivative available up to order 1")
        out = self.heading_fn(np.asarray(t, dtype=float), order)
        return float(out) if np.ndim(out) == 0 else out


def hover_trajectory(point=(0.0, 0.0, 0.0), yaw: float = 0.0) -> FlatTrajectory:
    point = np.asarray(point, dtype=float).reshape(3)

    def pos(t, order):
        base = point if order == 0 else np.zeros(3)
        return np.broadcast_to(base, np.shape(t) + (3,)).copy()

    def head(t, order):
        return np.full(np.shape(t), yaw if order == 0 else 0.0)

    return FlatTrajectory(pos, head, "hover", (*point, yaw))


def _sin_derivative(amp: float, w: float, phase_cos: bool, t: np.ndarray, order: int) -> np.ndarray:
    # derivative of amp*cos(w t) (phase_cos) or amp*sin(w t); shifts the phase by order*pi/2
    shift = order * math.pi / 2.0
    scale = amp * w**order
    if phase_cos:
        return scale * np.cos(w * t + shift)
    return scale * np.sin(w * t + shift)


def circle_trajectory(
    radius: float = 2.0,
    omega: float = 4.0,
    z0: float = -10.0,
    z_amp: float = 2.0,
    z_omega: float = 2.0,
    yaw_rate: float = 0.2,
) -> FlatTrajectory:
    """Horizontal circle with a vertical sine and a linear heading ramp.

    ``p = [r cos(w t), r sin(w t), z0 + a sin(wz t)]``, ``psi = yaw_rate * t``.
    """

    def pos(t, order):
        x = _sin_derivative(radius, omega, True, t, order)
        y = _sin_derivative(radius, omega, False, t, order)
        z = _sin_derivative(z_amp, z_omega, False, t, order)
        if order == 0:
            z = z + z0
        return np.stack([x, y, z], axis=-1)

    def head(t, order):
        return yaw_rate * t if order == 0 else np.full(np.shape(t), float(yaw_rate))

    return FlatTrajectory(pos, head, "circle", (radius, omega, z0, z_amp, z_omega, yaw_rate))


def make_trajectory(kind: str, params: Sequence[float] = ()) -> FlatTrajectory:
    """Build a trajectory from its scenario description.

    ``hover``: ``[x, y, z, yaw]`` (all optional).
    ``circle``: ``[radius, omega, z0, z_amp, z_omega, yaw_rate]``.
    """
    params = [float(p) for p in params]
    if kind == "hover":
        if len(params) > 4:
            raise InvalidParameterError("hover takes at most 4 parameters")
        full = params + [0.0] * (4 - len(params))
        return hover_trajectory(full[:3], full[3])
    if kind == "circle":
        if len(params) != 6:
            raise InvalidParameterError("circle takes 6 parameters")
        return circle_trajectory(*params)
    raise InvalidParameterError(f"unknown trajectory kind {kind!r}")


@dataclass(frozen=True)
class ReferenceSample:
    t: float
    p_bar: np.ndarray
    v_bar: np.ndarray
    a_bar: np.ndarray
    r_bar: np.ndarray
    w_bar: np.ndarray
    w_bar_dot: np.ndarray
    t_bar: float
    t_bar_dot: float
    tau_bar: np.ndarray

    @property
    def z_b_bar(self) -> np.ndarray:
        return self.r_bar[:, 2]


def _thrust_vector(traj: FlatTrajectory, t: np.ndarray, params: QuadParams) -> np.ndarray:
    v = traj.position(t, 1)
    a = traj.position(t, 2)
    return params.g * E3 - a - params.drag * v


def reference_frame(traj: FlatTrajectory, t, params: QuadParams, singular_tol: float = 1e-9):
    """Vectorized ``(t_bar, r_bar)`` at an array of times."""
    t = np.asarray(t, dtype=float)
    f = _thrust_vector(traj, t, params)
    t_bar = np.linalg.norm(f, axis=-1)
    if np.any(t_bar <= 0.0):
        raise SingularReferenceError("reference thrust vector vanishes (free fall)")
    z = f / t_bar[..., None]
    psi = np.asarray(traj.heading(t, 0), dtype=float)
    x_c = np.stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)], axis=-1)
    y = cross3(z, x_c)
    ny = np.linalg.norm(y, axis=-1)
    if np.any(ny <= singular_tol):
        raise SingularReferenceError("reference thrust axis is parallel to the heading direction")
    y = y / ny[..., None]
    x = cross3(y, z)
    return t_bar, np.stack([x, y, z], axis=-1)


def _body_rates(r: np.ndarray, eps: float) -> np.ndarray:
    # r sampled at spacing eps, shape (m, 3, 3); rates at the m-2 interior points
    r_dot = (r[2:] - r[:-2]) / (2.0 * eps)
    m = np.einsum("kji,kjl->kil", r[1:-1], r_dot)
    m = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([m[:, 2, 1], m[:, 0, 2], m[:, 1, 0]], axis=-1)


def sample_reference(
    traj: FlatTrajectory,
    t: float,
    params: QuadParams,
    env: ThrustEnvelope | None = None,
    eps: float = FD_STEP,
) -> ReferenceSample:
    """Full reference tuple at one instant.

    Body rates come from central differences of the reference attitude and the
    reference torque from the rotational dynamics with a differenced rate
    derivative.  Passing ``env`` also enforces the thrust feasibility band.
    """
    return _sample(traj, t, params, env, eps)[0]


def _sample(traj, t, params, env, eps):
    # also returns the frame on the 5-point stencil so callers can reuse it
    t = float(t)
    stencil = t + np.arange(-2, 3) * eps
    t_bars, r_bars = reference_frame(traj, stencil, params)
    t_bar = float(t_bars[2])
    if env is not None:
        env.check(t_bar)
    elif not 0.0 < t_bar <= params.t_max:
        raise InfeasibleReferenceError(f"reference thrust {t_bar:.6g} outside (0, {params.t_max}]")
    r_bar = r_bars[2]
    w = _body_rates(r_bars, eps)
    w_bar = w[1]
    w_bar_dot = (w[2] - w[0]) / (2.0 * eps)

    p = traj.position(t, 0)
    v = traj.position(t, 1)
    a = traj.position(t, 2)
    jerk = traj.position(t, 3)
    z = r_bar[:, 2]
    t_bar_dot = float(z @ (-jerk - params.drag * a))

    J = params.inertia
    tau_bar = (
        J @ w_bar_dot
        - cross3(J @ w_bar, w_bar)
        + params.tau_g
        + params.a_mat @ (r_bar.T @ v)
        + params.c_mat @ w_bar
    )
    ref = ReferenceSample(t, p, v, a, r_bar, w_bar, w_bar_dot, t_bar, t_bar_dot, tau_bar)
    return ref, t_bars, r_bars


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    t_bar_min: float
    t_bar_max: float
    violations: np.ndarray

    def __bool__(self) -> bool:
        return self.ok


def check_reference_feasibility(
    traj: FlatTrajectory,
    env: ThrustEnvelope,
    t_span: tuple[float, float],
    grid: float | int,
    params: QuadParams,
) -> FeasibilityReport:
    """Scan ``T_bar`` on a uniform grid against ``[eps1, t_max - eps2]``.

    ``grid`` is a step in seconds (float) or a number of points (int).
    """
    t0, t1 = map(float, t_span)
    if not t1 >= t0:
        raise InvalidParameterError("t_span must be increasing")
    if isinstance(grid, (int, np.integer)):
        if grid < 2:
            raise InvalidParameterError("need at least two grid points")
        times = np.linspace(t0, t1, int(grid))
    else:
        if not grid > 0:
            raise InvalidParameterError("grid step must be positive")
        n = int(round((t1 - t0) / grid))
        times = t0 + grid * np.arange(n + 1)
    t_bar = np.linalg.norm(_thrust_vector(traj, times, params), axis=-1)
    bad = (t_bar < env.eps1) | (t_bar > env.t_max - env.eps2)
    return FeasibilityReport(
        ok=not bool(np.any(bad)),
        t_bar_min=float(t_bar.min()),
        t_bar_max=float(t_bar.max()),
        violations=times[bad],
    )


def thrust_profile(traj: FlatTrajectory, params: QuadParams) -> Callable:
    """Vectorized ``t -> T_bar(t)`` for building bound schedules."""

    def profile(t):
        t = np.asarray(t, dtype=float)
        return np.linalg.norm(_thrust_vector(traj, t, params), axis=-1)

    return profile

