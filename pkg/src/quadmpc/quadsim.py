"""Nonlinear quadcopter plant and the cascade's inner loop.

Frames follow the NED convention: gravity acts along +z and the mass-normalized
thrust ``T`` acts along ``-z_B``.

    p' = v
    v' = g e3 - T z_B - D v
    R' = R S(w)
    J w' = S(J w) w - tau_g - A R' v - C w + tau
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import AttitudeSingularityError, InvalidParameterError

__all__ = [
    "QuadParams",
    "QuadState",
    "InnerLoopGains",
    "OuterAxisState",
    "cross3",
    "skew",
    "vee",
    "project_so3",
    "euler_xyz",
    "dynamics_deriv",
    "rk4_step",
    "QuadPlant",
    "error_coords",
    "thrust_command",
    "desired_attitude",
    "desired_rates",
    "attitude_error",
    "inner_loop_torque",
    "ad_intersample",
    "eta_intersample",
]

E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class QuadParams:
    g: float = 9.81
    inertia: np.ndarray = field(default_factory=lambda: np.diag([2.5e-3, 2.1e-3, 4.3e-3]))
    drag: np.ndarray = field(default_factory=lambda: np.array([0.26, 0.28, 0.42]))
    tau_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_mat: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    c_mat: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(3))
    t_max: float = 45.21

    def __post_init__(self):
        J = np.array(self.inertia, dtype=float).reshape(3, 3)
        drag = np.array(self.drag, dtype=float).reshape(-1)
        if drag.size == 9:
            drag = np.diag(drag.reshape(3, 3)).copy()
        if not np.allclose(J, J.T) or np.min(np.linalg.eigvalsh(J)) <= 0:
            raise InvalidParameterError("inertia must be symmetric positive definite")
        if drag.shape != (3,) or np.any(drag <= 0):
            raise InvalidParameterError("drag must be three positive coefficients")
        for name, value in (
            ("inertia", J),
            ("drag", drag),
            ("tau_g", np.array(self.tau_g, dtype=float).reshape(3)),
            ("a_mat", np.array(self.a_mat, dtype=float).reshape(3, 3)),
            ("c_mat", np.array(self.c_mat, dtype=float).reshape(3, 3)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_j_inv", np.linalg.inv(J))

    @property
    def j_inv(self) -> np.ndarray:
        return self._j_inv


@dataclass
class QuadState:
    p: np.ndarray
    v: np.ndarray
    r: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.r = np.asarray(self.r, dtype=float).reshape(3, 3)
        self.w = np.asarray(self.w, dtype=float).reshape(3)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.r.ravel(), self.w])

    @classmethod
    def from_vector(cls, y) -> "QuadState":
        y = np.asarray(y, dtype=float)
        return cls(y[0:3], y[3:6], y[6:15].reshape(3, 3), y[15:18])

    def copy(self) -> "QuadState":
        return QuadState(self.p.copy(), self.v.copy(), self.r.copy(), self.w.copy())

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(np.asarray(p, dtype=float), np.zeros(3), np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class InnerLoopGains:
    k_w: np.ndarray
    k_r: np.ndarray
    k_vec: np.ndarray

    def __post_init__(self):
        for name in ("k_w", "k_r"):
            m = np.array(getattr(self, name), dtype=float).reshape(3, 3)
            if np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) <= 0:
                raise InvalidParameterError(f"{name} must be positive definite")
            object.__setattr__(self, name, m)
        k = np.array(self.k_vec, dtype=float).reshape(3)
        if np.any(k <= 0):
            raise InvalidParameterError("k_vec entries must be positive")
        object.__setattr__(self, "k_vec", k)

    @classmethod
    def scaled(cls, inertia, k_w: float = 30.0, k_r: float = 70.0, k_vec=(4.5, 5.0, 5.5)) -> "InnerLoopGains":
        J = np.asarray(inertia, dtype=float)
        return cls(k_w * J, k_r * J, np.asarray(k_vec, dtype=float))


@dataclass
class OuterAxisState:
    """Outer-loop state of one axis: position/velocity error and the filter states."""

    p_err: float
    v_err: float
    a_d: float
    eta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_err, self.v_err, self.a_d, self.eta])


def cross3(a, b) -> np.ndarray:
    """Cross product over the last axis; much cheaper than ``np.cross`` for small inputs."""
    if a.ndim == 1 and b.ndim == 1:
        return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def skew(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def vee(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def project_so3(r) -> np.ndarray:
    """Nearest rotation matrix (polar factor)."""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def _rot(axis: int, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == 0:
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)
    if axis == 1:
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def euler_xyz(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """``Rx(roll) @ Ry(pitch) @ Rz(yaw)``."""
    return _rot(0, roll) @ _rot(1, pitch) @ _rot(2, yaw)


def _deriv(y: np.ndarray, T: float, tau: np.ndarray, params: QuadParams) -> np.ndarray:
    v = y[3:6]
    R = y[6:15].reshape(3, 3)
    w = y[15:18]
    J = params.inertia
    out = np.empty(18)
    out[0:3] = v
    out[3:6] = params.g * E3 - T * R[:, 2] - params.drag * v
    w0, w1, w2 = w
    out[6:15] = (R @ np.array([[0.0, -w2, w1], [w2, 0.0, -w0], [-w1, w0, 0.0]])).ravel()
    Jw = J @ w
    torque = cross3(Jw, w) - params.tau_g - params.a_mat @ (R.T @ v) - params.c_mat @ w + tau
    out[15:18] = params.j_inv @ torque
    return out


def dynamics_deriv(state: QuadState, T: float, tau, params: QuadParams) -> QuadState:
    """Right-hand side of the rigid-body model; thrust is clamped to ``[0, t_max]``."""
    T = min(max(float(T), 0.0), params.t_max)
    return QuadState.from_vector(_deriv(state.to_vector(), T, np.asarray(tau, dtype=float), params))


def rk4_step(state: QuadState, T: float, tau, dt: float, params: QuadParams) -> QuadState:
    """Classical RK4 step with inputs held; the attitude is projected back onto SO(3)."""
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    T = min(max(float(T), 0.0), params.t_max)
    tau = np.asarray(tau, dtype=float)
    y = state.to_vector()
    k1 = _deriv(y, T, tau, params)
    k2 = _deriv(y + 0.5 * dt * k1, T, tau, params)
    k3 = _deriv(y + 0.5 * dt * k2, T, tau, params)
    k4 = _deriv(y + dt * k3, T, tau, params)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = QuadState.from_vector(y_next)
    out.r = project_so3(out.r)
    return out


class QuadPlant:
    """Stateful plant wrapper that counts thrust clamp events."""

    def __init__(self, params: QuadParams, state: QuadState):
        self.params = params
        self.state = state.copy()
        self.clamp_events = 0

    def step(self, T: float, tau, dt: float) -> QuadState:
        if not 0.0 <= T <= self.params.t_max:
            self.clamp_events += 1
        self.state = rk4_step(self.state, T, tau, dt, self.params)
        return self.state


def error_coords(state: QuadState, ref):
    """``(p_err, v_err, R_tilde, w_tilde)`` with ``p_err = p_ref - p``."""
    p_err = ref.p_bar - state.p
    v_err = ref.v_bar - state.v
    r_tilde = ref.r_bar.T @ state.r
    w_tilde = state.w - r_tilde.T @ ref.w_bar
    return p_err, v_err, r_tilde, w_tilde


def thrust_command(a_d, ref) -> float:
    vec = np.asarray(a_d, dtype=float) + ref.t_bar * ref.z_b_bar
    T = float(np.linalg.norm(vec))
    if T <= 0.0:
        raise AttitudeSingularityError("commanded thrust vector vanishes")
    return T


def _desired_attitude(a_d: np.ndarray, r_bar: np.ndarray, t_bar: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # a_d (..., 3), r_bar (..., 3, 3), t_bar (...)
    vec = np.einsum("...ji,...j->...i", r_bar, a_d)
    vec[..., 2] += t_bar
    z = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
    den2 = z[..., 1] ** 2 + z[..., 2] ** 2
    if np.any(den2 <= tol):
        raise AttitudeSingularityError("desired thrust axis is aligned with the reference x axis")
    den = np.sqrt(den2)
    y = np.stack([np.zeros_like(den), z[..., 2] / den, -z[..., 1] / den], axis=-1)
    x = np.stack([den, -z[..., 0] * z[..., 1] / den, -z[..., 0] * z[..., 2] / den], axis=-1)
    return np.stack([x, y, z], axis=-1)


def desired_attitude(a_d, ref) -> np.ndarray:
    """Desired attitude relative to the reference frame, columns ``[x, y, z]``."""
    return _desired_attitude(np.asarray(a_d, dtype=float), ref.r_bar, np.asarray(ref.t_bar, dtype=float))


def ad_intersample(x_axis, u, s, gamma: float):
    """Filter output ``a_d(t_k + s)`` under the held input ``u``.

    ``x_axis`` provides ``a_d`` and ``eta`` at ``t_k`` (an :class:`OuterAxisState`
    or any array whose last axis is the 4-state).  Works elementwise.
    """
    a0, e0 = _filter_states(x_axis)
    s = np.asarray(s, dtype=float)
    r = s / gamma
    al = np.exp(-r)
    be = r * al
    return al * a0 + be * e0 + (1.0 - al - be) * np.asarray(u, dtype=float)


def eta_intersample(x_axis, u, s, gamma: float):
    _, e0 = _filter_states(x_axis)
    al = np.exp(-np.asarray(s, dtype=float) / gamma)
    return al * e0 + (1.0 - al) * np.asarray(u, dtype=float)


def _filter_states(x_axis):
    if isinstance(x_axis, OuterAxisState):
        return x_axis.a_d, x_axis.eta
    arr = np.asarray(x_axis, dtype=float)
    return arr[..., 2], arr[..., 3]


def _rates_from_stencil(R_d: np.ndarray, eps: float) -> np.ndarray:
    # R_d (m, 3, 3) sampled at spacing eps; returns w_d at the m-2 interior points.
    x, y, z = R_d[..., 0], R_d[..., 1], R_d[..., 2]
    zdot = (z[2:] - z[:-2]) / (2.0 * eps)
    ydot = (y[2:] - y[:-2]) / (2.0 * eps)
    xc, yc = x[1:-1], y[1:-1]
    return np.stack(
        [
            -np.einsum("ij,ij->i", yc, zdot),
            np.einsum("ij,ij->i", xc, zdot),
            -np.einsum("ij,ij->i", xc, ydot),
        ],
        axis=-1,
    )


def desired_rates(a_d_k, eta_k, u, t_k: float, t: float, frame_fn, gamma: float, eps: float = 1e-5):
    """Desired body rates and their derivative by central differences.

    ``a_d_k, eta_k, u`` are the 3-vectors of filter states at ``t_k`` and the
    held MPC inputs; ``frame_fn(times)`` returns ``(t_bar, r_bar)`` of the
    reference at an array of times.  The closed-form inter-sample ``a_d`` of
    the current interval is used for every stencil point.
    """
    offsets = np.arange(-2, 3) * eps
    times = t + offsets
    s = (times - t_k)[:, None]
    x = np.stack([np.broadcast_to(np.asarray(a_d_k, dtype=float), (3,)),
                  np.broadcast_to(np.asarray(eta_k, dtype=float), (3,))])
    r = s / gamma
    al = np.exp(-r)
    be = r * al
    a_d = al * x[0] + be * x[1] + (1.0 - al - be) * np.asarray(u, dtype=float)
    t_bar, r_bar = frame_fn(times)
    R_d = _desired_attitude(a_d, r_bar, t_bar)
    w = _rates_from_stencil(R_d, eps)
    return w[1], (w[2] - w[0]) / (2.0 * eps)


def attitude_error(state: QuadState, ref, R_d, w_d):
    r_tilde = ref.r_bar.T @ state.r
    R_e = R_d.T @ r_tilde
    w_e = state.w - r_tilde.T @ ref.w_bar - R_e.T @ w_d
    return R_e, w_e


def inner_loop_torque(state: QuadState, ref, R_d, w_d, w_d_dot, gains: InnerLoopGains, params: QuadParams) -> np.ndarray:
    """Attitude tracking torque that renders the error dynamics autonomous."""
    J = params.inertia
    w, w_bar = state.w, ref.w_bar
    r_tilde = ref.r_bar.T @ state.r
    R_e = R_d.T @ r_tilde
    w_e = w - r_tilde.T @ w_bar - R_e.T @ w_d
    # sum_i k_i (e_i x R_e' e_i); R_e' e_i is row i of R_e
    attitude = gains.k_vec @ cross3(np.eye(3), R_e)
    ref_accel = (
        cross3(J @ w_bar, w_bar) - params.tau_g - params.a_mat @ (ref.r_bar.T @ ref.v_bar)
        - params.c_mat @ w_bar + ref.tau_bar
    )
    kin = (skew(w) @ r_tilde.T - r_tilde.T @ skew(w_bar)) @ w_bar + cross3(w_e, R_e.T @ w_d) - R_e.T @ w_d_dot
    return (
        -gains.k_w @ w_e
        + gains.k_r @ attitude
        - cross3(J @ w, w)
        + params.tau_g
        + params.a_mat @ (state.r.T @ state.v)
        + params.c_mat @ w
        + J @ r_tilde.T @ params.j_inv @ ref_accel
        - J @ kin
    )
