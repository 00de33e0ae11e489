"""Per-axis outer-loop models and thrust-derived acceleration bounds.

Each translational axis of the outer loop is a fourth-order chain

    p' = v,  v' = -d v + a_d,  a_d' = (eta - a_d) / gamma,  eta' = (s - eta) / gamma

with state ``[p_err, v_err, a_d, eta]`` and input ``s`` held constant over a
sampling period.  The thrust envelope bounds ``a_d`` (and, through the
constraint schedule, ``eta`` and ``s``) by a box that shrinks and grows with
the reference thrust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .exceptions import InfeasibleReferenceError, InvalidParameterError

__all__ = [
    "ContinuousAxisModel",
    "DiscreteAxisModel",
    "ThrustEnvelope",
    "ConstraintSchedule",
    "continuous_matrices",
    "discretize_axis",
    "rho",
    "delta_bound",
    "interval_bounds",
    "horizon_bounds",
    "SINGULAR_TOL",
]

# Below this |d*gamma - 1| the closed forms lose too many digits to cancellation.
SINGULAR_TOL = 1e-3


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContinuousAxisModel:
    """Continuous-time axis parameters: drag ``d`` (1/s) and filter constant ``gamma`` (s)."""

    d: float
    gamma: float

    def __post_init__(self):
        if not (self.d > 0 and math.isfinite(self.d)):
            raise InvalidParameterError(f"drag coefficient must be positive, got {self.d}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidParameterError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class DiscreteAxisModel:
    """Exact zero-order-hold discretization of one axis."""

    A_d: np.ndarray
    B_d: np.ndarray
    h: float
    alpha: float
    beta: float
    d: float = float("nan")
    gamma: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "A_d", _frozen(self.A_d))
        object.__setattr__(self, "B_d", _frozen(np.reshape(self.B_d, (-1, 1))))

    @property
    def n_states(self) -> int:
        return self.A_d.shape[0]

    def step(self, x, u: float) -> np.ndarray:
        return self.A_d @ np.asarray(x, dtype=float) + self.B_d[:, 0] * u

    def controllability_matrix(self) -> np.ndarray:
        n = self.n_states
        cols = [self.B_d]
        for _ in range(n - 1):
            cols.append(self.A_d @ cols[-1])
        return np.hstack(cols)

    def is_controllable(self, rtol: float = 1e-9) -> bool:
        sv = np.linalg.svd(self.controllability_matrix(), compute_uv=False)
        return bool(sv[-1] > rtol * sv[0])


@dataclass(frozen=True)
class ThrustEnvelope:
    """Mass-normalized thrust limits and the margins used to build the bound box."""

    t_max: float
    delta_margin: float = 0.1
    eps1: float = 0.5
    eps2: float = 0.5
    g: float = 9.81

    def __post_init__(self):
        if not self.t_max > self.g:
            raise InvalidParameterError(f"t_max={self.t_max} must exceed g={self.g}")
        if not 0 < self.delta_margin < self.eps1:
            raise InvalidParameterError("need 0 < delta_margin < eps1")
        if not self.eps2 > 0:
            raise InvalidParameterError("eps2 must be positive")

    def check(self, t_bar) -> None:
        t_bar = np.asarray(t_bar, dtype=float)
        lo, hi = self.eps1, self.t_max - self.eps2
        bad = (t_bar < lo) | (t_bar > hi) | ~np.isfinite(t_bar)
        if np.any(bad):
            worst = t_bar[bad].flat[0] if t_bar.ndim else float(t_bar)
            raise InfeasibleReferenceError(
                f"reference thrust {worst:.6g} outside feasible band [{lo:.6g}, {hi:.6g}]"
            )


@dataclass(frozen=True)
class ConstraintSchedule:
    """Per-interval bounds ``Delta_{i|k}``, one entry per prediction step."""

    deltas: np.ndarray
    oversample: int = 20

    def __post_init__(self):
        arr = _frozen(np.atleast_1d(self.deltas))
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidParameterError("deltas must be a non-empty 1-D sequence")
        if not np.all(arr > 0):
            raise InvalidParameterError("every bound in a schedule must be strictly positive")
        object.__setattr__(self, "deltas", arr)

    def __len__(self) -> int:
        return self.deltas.size

    def __getitem__(self, i):
        return self.deltas[i]

    @classmethod
    def constant(cls, value: float, length: int) -> "ConstraintSchedule":
        return cls(np.full(length, float(value)))


def continuous_matrices(model: ContinuousAxisModel) -> tuple[np.ndarray, np.ndarray]:
    d, g = model.d, model.gamma
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -d, 1.0, 0.0],
            [0.0, 0.0, -1.0 / g, 1.0 / g],
            [0.0, 0.0, 0.0, -1.0 / g],
        ]
    )
    B = np.array([[0.0], [0.0], [0.0], [1.0 / g]])
    return A, B


def _closed_form(d: float, gamma: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    ed = math.exp(-d * h)
    eg = math.exp(-h / gamma)
    c = d * gamma - 1.0
    dg = d * gamma
    A = np.zeros((4, 4))
    A[0, 0] = 1.0
    A[0, 1] = (1.0 - ed) / d
    A[0, 2] = gamma * (ed + dg - dg * eg - 1.0) / (d * c)
    A[0, 3] = -gamma * (
        ed + 2 * dg - dg**2 - 2 * dg * eg - d * h * eg + dg**2 * eg + d * dg * h * eg - 1.0
    ) / (d * c**2)
    A[1, 1] = ed
    A[1, 2] = gamma * (eg - ed) / c
    A[1, 3] = -(gamma * eg + h * eg - gamma * ed - dg * h * eg) / c**2
    A[2, 2] = eg
    A[2, 3] = (h / gamma) * eg
    A[3, 3] = eg
    B = np.empty((4, 1))
    B[0, 0] = (
        ed + d * h + 3 * dg**2 - 2 * dg**3 + d * dg**2 * h - 3 * dg**2 * eg
        + 2 * dg**3 * eg - 2 * d * dg * h + d * dg**2 * h * eg - d * dg * h * eg - 1.0
    ) / (d**2 * c**2)
    B[1, 0] = (
        1.0 - ed - 2 * dg + dg**2 + 2 * dg * eg + d * h * eg - dg**2 * eg - d * dg * h * eg
    ) / (d * c**2)
    B[2, 0] = (gamma - gamma * eg - h * eg) / gamma
    B[3, 0] = 1.0 - eg
    return A, B


def _augmented_expm(model: ContinuousAxisModel, h: float) -> tuple[np.ndarray, np.ndarray]:
    A, B = continuous_matrices(model)
    M = np.zeros((5, 5))
    M[:4, :4] = A
    M[:4, 4:] = B
    E = scipy.linalg.expm(M * h)
    return E[:4, :4], E[:4, 4:]


def discretize_axis(model: ContinuousAxisModel, h: float) -> DiscreteAxisModel:
    """Exact ZOH discretization of one outer-loop axis.

    Uses the closed-form entries away from ``d*gamma == 1`` and the augmented
    matrix exponential near it.
    """
    if not (h > 0 and math.isfinite(h)):
        raise InvalidParameterError(f"sampling period must be positive, got {h}")
    if abs(model.d * model.gamma - 1.0) < SINGULAR_TOL:
        A_d, B_d = _augmented_expm(model, h)
    else:
        A_d, B_d = _closed_form(model.d, model.gamma, h)
    r = h / model.gamma
    alpha = math.exp(-r)
    beta = r * alpha
    return DiscreteAxisModel(A_d, B_d, h, alpha, beta, d=model.d, gamma=model.gamma)


def rho(t_bar, env: ThrustEnvelope):
    """Radius of the admissible acceleration ball for reference thrust ``t_bar``."""
    env.check(t_bar)
    out = np.minimum(np.asarray(t_bar, dtype=float) - env.delta_margin, env.t_max - np.asarray(t_bar, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def delta_bound(t_bar, env: ThrustEnvelope):
    """Half side of the cube inscribed in the admissible ball."""
    r = rho(t_bar, env)
    out = np.asarray(r) / math.sqrt(3.0)
    return float(out) if np.ndim(out) == 0 else out


def _eval_profile(profile: Callable, t: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(profile(t), dtype=float)
        if vals.shape == t.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(profile(float(ti))) for ti in t.ravel()]).reshape(t.shape)


def interval_bounds(
    thrust_profile: Callable,
    k_start: int,
    count: int,
    h: float,
    env: ThrustEnvelope,
    oversample: int = 20,
) -> np.ndarray:
    """Grid minimum of ``Delta(t)`` over ``[t_j, t_{j+1}]`` for ``j = k_start .. k_start+count-1``."""
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    if oversample < 2:
        raise InvalidParameterError("oversample must be >= 2")
    j = np.arange(k_start, k_start + count)[:, None]
    frac = np.arange(oversample + 1)[None, :] / oversample
    t = (j + frac) * h
    deltas = delta_bound(_eval_profile(thrust_profile, t), env)
    return np.min(deltas, axis=1)


def horizon_bounds(
    thrust_profile: Callable,
    k: int,
    N: int,
    h: float,
    oversample: int,
    env: ThrustEnvelope,
) -> ConstraintSchedule:
    """Bounds ``Delta_{i|k}`` for ``i = 0..N`` (N+1 entries)."""
    if N < 1:
        raise InvalidParameterError("horizon must be >= 1")
    return ConstraintSchedule(
        interval_bounds(thrust_profile, k, N + 1, h, env, oversample), oversample
    )
