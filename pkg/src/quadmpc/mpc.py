"""Per-axis receding-horizon controller.

The finite-horizon problem for one axis is

    min_U  sum_{i<N} x_i' Q x_i + R u_i**2  +  V(x_N)
    s.t.   |u_i| <= Delta_i,  |a_d,i+1| <= Delta_{i+1},  |eta_{i+1}| <= Delta_{i+1}

with the predicted states eliminated (condensed form), so the decision vector
is the input sequence only.  ``V`` carries a cubic term, so the problem is a
smooth convex program rather than a QP; it is solved by a damped-Newton
primal-dual interior-point method.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .certificates import CertificateSet, terminal_cost
from .exceptions import InfeasibleStartError, InvalidParameterError
from .model import ConstraintSchedule, DiscreteAxisModel

__all__ = [
    "MpcConfig",
    "CondensedPrediction",
    "MpcSolution",
    "InputInterval",
    "condense",
    "build_constraints",
    "unified_input_bounds",
    "objective",
    "solve",
    "RecedingHorizonController",
    "STATUS_OPTIMAL",
    "STATUS_MAX_ITER",
    "STATUS_INFEASIBLE",
]

log = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max-iter"
STATUS_INFEASIBLE = "infeasible"

# Indices of a_d and eta in the axis state.
AD_INDEX = 2
ETA_INDEX = 3


@dataclass(frozen=True)
class MpcConfig:
    n_horizon: int = 20
    q_mat: np.ndarray = field(default_factory=lambda: np.diag([100.0, 1.0, 1.0, 1.0]))
    r_mat: float = 0.01
    kkt_tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        q = np.array(np.atleast_2d(self.q_mat), dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q_mat", q)
        object.__setattr__(self, "r_mat", float(np.asarray(self.r_mat, dtype=float).reshape(-1)[0]))
        if self.n_horizon < 1:
            raise InvalidParameterError("n_horizon must be >= 1")
        if q.shape[0] != q.shape[1] or not np.allclose(q, q.T):
            raise InvalidParameterError("Q must be square and symmetric")
        if np.min(np.linalg.eigvalsh(q)) <= 0:
            raise InvalidParameterError("Q must be positive definite")
        if not self.r_mat > 0:
            raise InvalidParameterError("R must be positive")
        if not self.kkt_tol > 0:
            raise InvalidParameterError("kkt_tol must be positive")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be >= 1")


@dataclass(frozen=True)
class CondensedPrediction:
    """Stacked maps with ``x_i = phi[i*n:(i+1)*n] @ x_0 + gamma_mat[i*n:(i+1)*n] @ U``."""

    phi: np.ndarray
    gamma_mat: np.ndarray
    n_states: int
    n_horizon: int

    def block(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_states
        return self.phi[i * n:(i + 1) * n], self.gamma_mat[i * n:(i + 1) * n]

    def rollout(self, x0, U) -> np.ndarray:
        """All predicted states, shape ``(N+1, n)``."""
        X = self.phi @ np.asarray(x0, dtype=float) + self.gamma_mat @ np.asarray(U, dtype=float)
        return X.reshape(self.n_horizon + 1, self.n_states)


@dataclass
class MpcSolution:
    u_seq: np.ndarray
    cost: float
    kkt_residual: float
    iterations: int
    status: str
    n_active: int = 0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL


class InputInterval(NamedTuple):
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return self.lo > self.hi


def condense(model: DiscreteAxisModel, N: int) -> CondensedPrediction:
    if N < 1:
        raise InvalidParameterError("horizon must be >= 1")
    A = np.atleast_2d(model.A_d)
    B = np.reshape(model.B_d, (A.shape[0], 1))
    n = A.shape[0]
    phi = np.zeros(((N + 1) * n, n))
    gam = np.zeros(((N + 1) * n, N))
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    for i in range(N + 1):
        phi[i * n:(i + 1) * n] = powers[i]
        for j in range(i):
            gam[i * n:(i + 1) * n, j] = (powers[i - 1 - j] @ B)[:, 0]
    phi.setflags(write=False)
    gam.setflags(write=False)
    return CondensedPrediction(phi, gam, n, N)


def _bounded_states(n_states: int) -> tuple[int, ...]:
    return (AD_INDEX, ETA_INDEX) if n_states == 4 else ()


def build_constraints(x_k, schedule, pred: CondensedPrediction):
    """Linear inequalities ``G U <= g`` for the box bounds on u, a_d and eta.

    Row order: ``+u_i, -u_i`` for i = 0..N-1, then for i = 1..N
    ``+a_d, -a_d, +eta, -eta``.
    """
    x_k = np.asarray(x_k, dtype=float)
    deltas = np.asarray(getattr(schedule, "deltas", schedule), dtype=float)
    N, n = pred.n_horizon, pred.n_states
    if deltas.size < N + 1:
        raise InvalidParameterError(f"schedule has {deltas.size} entries, need {N + 1}")
    states = _bounded_states(n)
    d0 = deltas[0]
    slack = 1e-12 * max(1.0, d0)
    for idx, name in zip(states, ("a_d", "eta")):
        if abs(x_k[idx]) > d0 + slack:
            raise InfeasibleStartError(
                f"initial {name}={x_k[idx]:.6g} exceeds its bound {d0:.6g}", name, float(x_k[idx]), float(d0)
            )

    n_rows = 2 * N + 2 * len(states) * N
    G = np.zeros((n_rows, N))
    g = np.zeros(n_rows)
    eye = np.eye(N)
    G[0:2 * N:2] = eye
    G[1:2 * N:2] = -eye
    g[0:2 * N:2] = deltas[:N]
    g[1:2 * N:2] = deltas[:N]
    row = 2 * N
    for i in range(1, N + 1):
        phi_i, gam_i = pred.block(i)
        for idx in states:
            free = phi_i[idx] @ x_k
            G[row] = gam_i[idx]
            g[row] = deltas[i] - free
            G[row + 1] = -gam_i[idx]
            g[row + 1] = deltas[i] + free
            row += 2
    return G, g


def unified_input_bounds(a_d_i, eta_i, delta_i, delta_next, alpha, beta) -> InputInterval:
    """Input interval that keeps u, a_d and eta of the next step inside their bounds."""
    ab = alpha + beta
    drift_a = alpha * a_d_i + beta * eta_i
    tilde_hi = (delta_next - drift_a) / (1.0 - ab)
    tilde_lo = (-delta_next - drift_a) / (1.0 - ab)
    bar_hi = (delta_next - alpha * eta_i) / (1.0 - alpha)
    bar_lo = -(delta_next + alpha * eta_i) / (1.0 - alpha)
    return InputInterval(max(-delta_i, tilde_lo, bar_lo), min(delta_i, tilde_hi, bar_hi))


class _AxisProblem:
    """Cached condensed cost for one axis; owned by one controller."""

    def __init__(self, pred: CondensedPrediction, config: MpcConfig, certs: CertificateSet):
        self.pred = pred
        self.config = config
        self.certs = certs
        n, N = pred.n_states, pred.n_horizon
        self.phi_s = np.array(pred.phi[: N * n])
        self.gam_s = np.array(pred.gamma_mat[: N * n])
        self.phi_N, self.gam_N = (np.array(a) for a in pred.block(N))
        q_bar = np.kron(np.eye(N), config.q_mat)
        self.qg = q_bar @ self.gam_s
        self.qphi = q_bar @ self.phi_s
        self.h_stage = 2.0 * (self.gam_s.T @ self.qg + config.r_mat * np.eye(N))

    def evaluate(self, x_k, U, hessian: bool = True):
        x_k = np.asarray(x_k, dtype=float)
        U = np.asarray(U, dtype=float)
        Xs = self.phi_s @ x_k + self.gam_s @ U
        xN = self.phi_N @ x_k + self.gam_N @ U
        stage = float(Xs @ (self.qphi @ x_k + self.qg @ U)) + self.config.r_mat * float(U @ U)
        vN, gN, hN = terminal_cost(xN, self.certs)
        J = stage + vN
        grad = self.h_stage @ U + 2.0 * (self.qg.T @ self.phi_s @ x_k) + self.gam_N.T @ gN
        if not hessian:
            return J, grad
        H = self.h_stage + self.gam_N.T @ hN @ self.gam_N
        return J, grad, H


def objective(x_k, U, config: MpcConfig, certs: CertificateSet, pred: CondensedPrediction):
    """Cost ``J(x_k, U)`` and its gradient with respect to ``U``."""
    return _AxisProblem(pred, config, certs).evaluate(x_k, U, hessian=False)


def _strict_start(G, g, candidates):
    for U in candidates:
        if U is None:
            continue
        s = g - G @ U
        if np.all(s > 1e-10 * (1.0 + np.abs(g))):
            return U
    # Phase I: maximize the uniform margin.
    m, N = G.shape
    c = np.zeros(N + 1)
    c[-1] = -1.0
    A_ub = np.hstack([G, np.ones((m, 1))])
    bounds = [(None, None)] * N + [(None, 1.0)]
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=g, bounds=bounds, method="highs")
    if res.status == 0 and res.x[-1] > 1e-10:
        return np.asarray(res.x[:N])
    return None


def _interior_point(problem: _AxisProblem, x_k, G, g, U0, tol, max_iter):
    m = G.shape[0]
    U = np.array(U0, dtype=float)
    s = g - G @ U
    J, grad, H = problem.evaluate(x_k, U)
    scale = 1.0 / max(1.0, float(np.max(np.abs(grad))) / 10.0)
    z = 0.1 / s
    mu_factor = 10.0
    best = None

    def residual(grad_, z_, s_, t_):
        rd = scale * grad_ + G.T @ z_
        rc = z_ * s_ - 1.0 / t_
        return rd, rc

    it = 0
    status = STATUS_MAX_ITER
    kkt = float("inf")
    while True:
        rd = scale * grad + G.T @ z
        gap = float(s @ z)
        kkt = max(float(np.max(np.abs(rd))), gap / m)
        if best is None or kkt < best[0]:
            best = (kkt, U.copy(), J, z.copy(), s.copy())
        if float(np.max(np.abs(rd))) <= tol and gap / m <= tol:
            status = STATUS_OPTIMAL
            break
        if it >= max_iter:
            break
        it += 1
        t = mu_factor * m / gap
        w = z / s
        Hs = scale * H + G.T @ (w[:, None] * G)
        rhs = -(scale * grad + G.T @ (1.0 / (t * s)))
        try:
            cho = scipy.linalg.cho_factor(Hs, check_finite=False)
            dU = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            dU = np.linalg.lstsq(Hs, rhs, rcond=None)[0]
        GdU = G @ dU
        ds = -GdU
        dz = -z + 1.0 / (t * s) + w * GdU

        neg = dz < 0
        step = min(1.0, float(np.min(-z[neg] / dz[neg]))) if np.any(neg) else 1.0
        step *= 0.99
        negs = ds < 0
        if np.any(negs):
            step = min(step, 0.99 * float(np.min(-s[negs] / ds[negs])))
        rd0, rc0 = residual(grad, z, s, t)
        norm0 = math.sqrt(float(rd0 @ rd0 + rc0 @ rc0))
        for _ in range(60):
            U_new = U + step * dU
            s_new = g - G @ U_new
            z_new = z + step * dz
            if np.all(s_new > 0):
                J_new, grad_new = problem.evaluate(x_k, U_new, hessian=False)
                rd1, rc1 = residual(grad_new, z_new, s_new, t)
                if math.sqrt(float(rd1 @ rd1 + rc1 @ rc1)) <= (1.0 - 0.01 * step) * norm0:
                    break
            step *= 0.5
        else:
            break
        U, s, z = U_new, s_new, z_new
        J, grad, H = problem.evaluate(x_k, U)

    if status != STATUS_OPTIMAL:
        kkt, U, J, z, s = best
    return U, J, kkt, it, status, z, s


def solve(
    x_k,
    schedule,
    config: MpcConfig,
    certs: CertificateSet,
    model: DiscreteAxisModel,
    warm_start: Optional[Sequence[float]] = None,
    pred: Optional[CondensedPrediction] = None,
    problem: Optional[_AxisProblem] = None,
) -> MpcSolution:
    """Solve the finite-horizon problem for one axis at one sampling instant."""
    N = config.n_horizon
    if problem is None:
        if pred is None:
            pred = condense(model, N)
        problem = _AxisProblem(pred, config, certs)
    pred = problem.pred
    G, g = build_constraints(x_k, schedule, pred)
    candidates = []
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.shape == (N,):
            candidates.extend([ws, 0.5 * ws, 0.1 * ws])
    candidates.append(np.zeros(N))
    U0 = _strict_start(G, g, candidates)
    if U0 is None:
        U = np.zeros(N)
        J = problem.evaluate(x_k, U, hessian=False)[0]
        return MpcSolution(U, float(J), float("inf"), 0, STATUS_INFEASIBLE, 0)
    U, J, kkt, it, status, z, s = _interior_point(problem, x_k, G, g, U0, config.kkt_tol, config.max_iter)
    J = float(problem.evaluate(x_k, U, hessian=False)[0])
    n_active = int(np.count_nonzero(s <= 1e-6 * (1.0 + np.abs(g))))
    return MpcSolution(np.asarray(U), J, float(kkt), int(it), status, n_active)


class RecedingHorizonController:
    """Receding-horizon law ``u_k = U*_0(x_k)`` for one axis with warm starting.

    ``schedule_source(k)`` must return the ``N+1`` bounds ``Delta_{i|k}``.
    """

    def __init__(
        self,
        model: DiscreteAxisModel,
        config: MpcConfig,
        certs: CertificateSet,
        schedule_source: Callable[[int], ConstraintSchedule],
    ):
        self.model = model
        self.config = config
        self.certs = certs
        self.schedule_source = schedule_source
        self.pred = condense(model, config.n_horizon)
        self._problem = _AxisProblem(self.pred, config, certs)
        self.warm_start: Optional[np.ndarray] = None
        self.last_solution: Optional[MpcSolution] = None
        self.fallback_count = 0
        self.max_iter_count = 0

    def reset(self) -> None:
        self.warm_start = None
        self.last_solution = None
        self.fallback_count = 0
        self.max_iter_count = 0

    def fallback(self, x_k, schedule) -> float:
        """Saturated small-gain law at the current bound, kept inside the unified interval."""
        x_k = np.asarray(x_k, dtype=float)
        d0 = float(schedule[0])
        u = float(np.clip(self.certs.k_gain @ x_k, -d0, d0)[0])
        if self.model.n_states == 4 and len(schedule) > 1:
            box = unified_input_bounds(
                x_k[AD_INDEX], x_k[ETA_INDEX], d0, float(schedule[1]), self.model.alpha, self.model.beta
            )
            if not box.empty:
                u = min(max(u, box.lo), box.hi)
        return u

    def step(self, x_k, k: int) -> float:
        schedule = self.schedule_source(k)
        try:
            sol = solve(
                x_k, schedule, self.config, self.certs, self.model,
                warm_start=self.warm_start, problem=self._problem,
            )
        except Exception as exc:  # noqa: BLE001 - any solver fault falls back
            log.warning("MPC solve failed at k=%d (%s); using saturated small-gain law", k, exc)
            sol = None
        if sol is None or sol.status == STATUS_INFEASIBLE or not np.all(np.isfinite(sol.u_seq)):
            self.fallback_count += 1
            u0 = self.fallback(x_k, schedule)
            self.last_solution = sol
            self.warm_start = None
            return u0
        if sol.status == STATUS_MAX_ITER:
            self.max_iter_count += 1
            log.info("MPC hit max_iter at k=%d (kkt=%.3g); using best iterate", k, sol.kkt_residual)
        self.last_solution = sol
        self.warm_start = np.append(sol.u_seq[1:], sol.u_seq[-1])
        return float(sol.u_seq[0])
