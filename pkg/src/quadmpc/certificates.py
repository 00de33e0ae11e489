"""Stability certificate for the per-axis MPC.

The terminal cost ``V(x) = theta * (x' Mq x + lam * (x' Mc x)**1.5)`` makes the
finite-horizon problem globally stabilizing for the marginally stable axis
model.  Everything here runs once per axis at setup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import (
    FeasibilityViolatedError,
    InvalidParameterError,
    NoSolutionError,
    UnsupportedSpectrumError,
)
from .model import ConstraintSchedule, DiscreteAxisModel

__all__ = [
    "CertificateSet",
    "dlyap_vec",
    "solve_mc",
    "small_gain",
    "solve_mq",
    "delta_star",
    "lambda_coeff",
    "theta_coeff",
    "terminal_cost",
    "lyapunov_value",
    "feasibility_condition",
    "lyapunov_decrease",
    "synthesize",
    "KAPPA_MARGIN",
    "LU_MARGIN",
]

KAPPA_MARGIN = 0.99
LU_MARGIN = 1.1


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CertificateSet:
    m_c: np.ndarray
    m_q: np.ndarray
    k_gain: np.ndarray
    kappa: float
    lambda_coeff: float
    theta_coeff: float
    l_u: float
    delta_star: float

    def __post_init__(self):
        object.__setattr__(self, "m_c", _frozen(self.m_c))
        object.__setattr__(self, "m_q", _frozen(self.m_q))
        object.__setattr__(self, "k_gain", _frozen(np.reshape(self.k_gain, (1, -1))))

    def to_dict(self) -> dict:
        return {
            "m_c": self.m_c.tolist(),
            "m_q": self.m_q.tolist(),
            "k_gain": self.k_gain.ravel().tolist(),
            "kappa": self.kappa,
            "lambda": self.lambda_coeff,
            "theta": self.theta_coeff,
            "l_u": self.l_u,
            "delta_star": self.delta_star,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CertificateSet":
        return cls(
            m_c=data["m_c"],
            m_q=data["m_q"],
            k_gain=data["k_gain"],
            kappa=data["kappa"],
            lambda_coeff=data["lambda"],
            theta_coeff=data["theta"],
            l_u=data["l_u"],
            delta_star=data["delta_star"],
        )


def dlyap_vec(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``a' X a - X = -q`` through the vectorized (Kronecker) linear system."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = a.shape[0]
    lhs = np.kron(a.T, a.T) - np.eye(n * n)
    try:
        x = np.linalg.solve(lhs, -q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise NoSolutionError("Lyapunov equation is singular") from exc
    x = x.reshape(n, n)
    return 0.5 * (x + x.T)


def _spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a)))) if a.size else 0.0


def solve_mc(model: DiscreteAxisModel, unit_tol: float = 1e-9) -> np.ndarray:
    """Positive-definite ``Mc`` with ``A' Mc A - Mc <= 0``.

    Splits the state space into the unit-eigenvalue direction and the
    complementary invariant subspace, solves a Lyapunov equation on the
    Schur-stable block and maps back.
    """
    A = np.atleast_2d(model.A_d)
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    mags = np.abs(eig)
    if np.any(mags > 1.0 + unit_tol):
        raise UnsupportedSpectrumError("axis model has an unstable eigenvalue")
    on_circle = np.abs(eig - 1.0) <= 1e-7
    if np.count_nonzero(on_circle) != 1 or np.count_nonzero(mags > 1.0 - 1e-7) != 1:
        raise UnsupportedSpectrumError("expected exactly one simple eigenvalue at 1")

    v = scipy.linalg.null_space(A - np.eye(n), rcond=1e-9)
    w = scipy.linalg.null_space((A - np.eye(n)).T, rcond=1e-9)
    if v.shape[1] != 1 or w.shape[1] != 1:
        raise UnsupportedSpectrumError("unit eigenvalue is not simple")
    v = v[:, 0]
    w = w[:, 0]
    if abs(w @ v) < 1e-9:
        raise UnsupportedSpectrumError("unit eigenvalue is defective")
    if n == 1:
        return np.array([[1.0 / (v[0] ** 2)]])
    stable_basis = scipy.linalg.null_space(w[None, :])
    T = np.column_stack([v, stable_basis])
    T_inv = np.linalg.inv(T)
    A_s = (T_inv @ A @ T)[1:, 1:]
    if _spectral_radius(A_s) >= 1.0:
        raise UnsupportedSpectrumError("complementary block is not Schur stable")
    M_s = dlyap_vec(A_s, np.eye(n - 1))
    core = scipy.linalg.block_diag(1.0, M_s)
    M_c = T_inv.T @ core @ T_inv
    return 0.5 * (M_c + M_c.T)


def small_gain(model: DiscreteAxisModel, m_c: np.ndarray, margin: float = KAPPA_MARGIN):
    """Return ``(kappa, K)`` with ``K = -kappa B' Mc A`` and ``kappa B' Mc B < 1``."""
    A = np.atleast_2d(model.A_d)
    B = np.reshape(model.B_d, (A.shape[0], -1))
    bmb = B.T @ m_c @ B
    top = float(np.max(np.linalg.eigvalsh(0.5 * (bmb + bmb.T))))
    if not top > 0:
        raise InvalidParameterError("B' Mc B vanishes; the axis model is not controllable")
    kappa = margin / top
    K = -kappa * B.T @ m_c @ A
    return kappa, K


def solve_mq(model: DiscreteAxisModel, k_gain: np.ndarray) -> np.ndarray:
    """Solve ``(A+BK)' Mq (A+BK) - Mq = -I``."""
    A = np.atleast_2d(model.A_d)
    B = np.reshape(model.B_d, (A.shape[0], -1))
    a_cl = A + B @ np.reshape(k_gain, (B.shape[1], -1))
    if _spectral_radius(a_cl) >= 1.0:
        raise NoSolutionError("closed loop A + B K is not Schur stable")
    return dlyap_vec(a_cl, np.eye(A.shape[0]))


def delta_star(schedule, alpha: float, beta: float) -> float:
    """Largest symmetric constant input bound inside every unified interval.

    ``schedule`` is the full-trajectory sequence ``Delta(k)``.
    """
    d = np.asarray(getattr(schedule, "deltas", schedule), dtype=float)
    if d.size < 2:
        raise InvalidParameterError("schedule needs at least two entries")
    ab = alpha + beta
    tilde = np.min(d[1:] - ab * d[:-1])
    bar = np.min(d[1:] - alpha * d[:-1])
    if not (tilde > 0 and bar > 0 and d.min() > 0):
        raise FeasibilityViolatedError(
            f"bound schedule drops too fast: worst margin {tilde:.6g} (need > 0)"
        )
    return float(min(tilde / (1.0 - ab), bar / (1.0 - alpha), d.min()))


def lambda_coeff(kappa: float, l_u: float, model: DiscreteAxisModel, m_q, m_c) -> float:
    A = np.atleast_2d(model.A_d)
    B = np.reshape(model.B_d, (A.shape[0], -1))
    sigma = float(np.linalg.norm(A.T @ m_q @ B, 2))
    lam_min = float(np.min(np.linalg.eigvalsh(m_c)))
    return 2.0 * kappa * l_u * sigma / math.sqrt(lam_min)


def theta_coeff(q_mat, r_mat, kappa: float, model: DiscreteAxisModel, m_c) -> float:
    A = np.atleast_2d(model.A_d)
    B = np.reshape(model.B_d, (A.shape[0], -1))
    q = np.atleast_2d(np.asarray(q_mat, dtype=float))
    r = np.atleast_2d(np.asarray(r_mat, dtype=float))
    F = B.T @ m_c @ A
    S = q + kappa**2 * F.T @ r @ F
    return float(np.max(np.linalg.eigvalsh(0.5 * (S + S.T))))


def lyapunov_value(x, certs: CertificateSet) -> float:
    """``W(x)`` without the ``theta`` factor."""
    x = np.asarray(x, dtype=float)
    quad = x @ certs.m_q @ x
    cx = x @ certs.m_c @ x
    return float(quad + certs.lambda_coeff * max(cx, 0.0) ** 1.5)


def terminal_cost(x, certs: CertificateSet):
    """Value, gradient and Hessian of ``V = theta * W``."""
    x = np.asarray(x, dtype=float)
    th, lam = certs.theta_coeff, certs.lambda_coeff
    Mq, Mc = certs.m_q, certs.m_c
    mcx = Mc @ x
    cx = max(float(x @ mcx), 0.0)
    s = math.sqrt(cx)
    value = th * (float(x @ Mq @ x) + lam * cx * s)
    grad = th * (2.0 * Mq @ x + 3.0 * lam * s * mcx)
    if s > 0.0:
        hess = th * (2.0 * Mq + 3.0 * lam * (s * Mc + np.outer(mcx, mcx) / s))
    else:
        hess = th * 2.0 * Mq
    return value, grad, hess


def feasibility_condition(schedule, h: float, gamma: float):
    """Check ``Delta(k+1) > (alpha+beta) Delta(k)`` for all k.

    Returns ``(ok, worst_margin)``.
    """
    d = np.asarray(getattr(schedule, "deltas", schedule), dtype=float)
    r = h / gamma
    ab = math.exp(-r) * (1.0 + r)
    if d.size < 2:
        return True, float("inf")
    margin = float(np.min(d[1:] - ab * d[:-1]))
    return margin > 0.0, margin


def lyapunov_decrease(x, model: DiscreteAxisModel, certs: CertificateSet) -> float:
    """One-step change of ``W`` under the saturated small-gain law."""
    x = np.asarray(x, dtype=float)
    u = np.clip(certs.k_gain @ x, -certs.delta_star, certs.delta_star)
    x_next = model.A_d @ x + model.B_d @ u
    return lyapunov_value(x_next, certs) - lyapunov_value(x, certs)


def synthesize(
    model: DiscreteAxisModel,
    schedule,
    q_mat,
    r_mat,
) -> CertificateSet:
    """Build the full certificate for one axis from its full-trajectory bound sequence."""
    m_c = solve_mc(model)
    kappa, K = small_gain(model, m_c)
    m_q = solve_mq(model, K)
    d_star = delta_star(schedule, model.alpha, model.beta)
    l_u = LU_MARGIN / d_star
    lam = lambda_coeff(kappa, l_u, model, m_q, m_c)
    theta = theta_coeff(q_mat, r_mat, kappa, model, m_c)
    return CertificateSet(m_c, m_q, K, kappa, lam, theta, l_u, d_star)
