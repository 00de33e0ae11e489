"""Closed-loop scenario runner: per-axis MPC outer loop, geometric inner loop, RK4 plant."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificates import CertificateSet, feasibility_condition, synthesize
from .exceptions import FeasibilityViolatedError, InfeasibleReferenceError
from .flatness import _sample, check_reference_feasibility, make_trajectory, thrust_profile
from .model import ConstraintSchedule, ContinuousAxisModel, delta_bound, discretize_axis, interval_bounds
from .mpc import MpcConfig, RecedingHorizonController, unified_input_bounds
from .quadsim import (
    QuadPlant,
    QuadState,
    _desired_attitude,
    _rates_from_stencil,
    euler_xyz,
    inner_loop_torque,
)
from .scenario import Scenario

__all__ = [
    "CSV_COLUMNS",
    "MPC_COLUMNS",
    "RunResult",
    "Setup",
    "prepare",
    "run_scenario",
    "rmse",
    "emit",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "t", "px", "py", "pz", "pbx", "pby", "pbz", "ex", "ey", "ez",
    "adx", "ady", "adz", "delta_t", "T", "tau1", "tau2", "tau3",
    "u1", "u2", "u3", "Jstar_x", "Jstar_y", "Jstar_z", "solve_ms",
)
MPC_COLUMNS = (
    "k", "t", "axis", "u", "u_lo", "u_hi", "delta0", "delta1",
    "cost", "kkt", "iterations", "optimal", "grid_exit",
)
_COL = {name: i for i, name in enumerate(CSV_COLUMNS)}
AD_TOL = 1e-9
GRID_POINTS = 41


@dataclass
class Setup:
    """Everything derived from a scenario before the loop starts."""

    scenario: Scenario
    traj: object
    schedule: np.ndarray
    models: list
    certs: list
    feasibility_margin: float
    t_bar_range: tuple


@dataclass
class RunResult:
    scenario: Scenario
    rows: np.ndarray
    mpc_rows: np.ndarray
    rmse: np.ndarray
    solve_ms_mean: float
    solve_ms_max: float
    violations: dict
    certificates: list
    counters: dict
    attitude_error: np.ndarray = field(repr=False, default=None)
    outer_norm: np.ndarray = field(repr=False, default=None)
    wall_time_s: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, _COL[name]]

    def summary(self) -> dict:
        return {
            "rmse": [float(v) for v in self.rmse],
            "solve_ms": {"mean": self.solve_ms_mean, "max": self.solve_ms_max},
            "violations": self.violations,
            "counters": self.counters,
            "certificates": self.certificates,
            "rows": int(self.rows.shape[0]),
            "wall_time_s": self.wall_time_s,
            "config": self.scenario.to_dict(),
        }


def _cert_summary(c: CertificateSet, axis: str) -> dict:
    return {
        "axis": axis,
        "kappa": c.kappa,
        "lambda": c.lambda_coeff,
        "theta": c.theta_coeff,
        "delta_star": c.delta_star,
        "l_u": c.l_u,
    }


def prepare(scn: Scenario) -> Setup:
    """Check the reference, build the bound schedule and synthesize the certificates."""
    traj = make_trajectory(scn.traj_kind, scn.traj_params)
    N, h = scn.n_horizon, scn.h
    horizon_end = scn.duration + (N + 1) * h
    report = check_reference_feasibility(traj, scn.env, (0.0, horizon_end), scn.dt, scn.quad)
    if not report.ok:
        raise InfeasibleReferenceError(
            f"reference thrust leaves [{scn.env.eps1}, {scn.env.t_max - scn.env.eps2}] "
            f"at t={report.violations[0]:.4f} s (range {report.t_bar_min:.4f}..{report.t_bar_max:.4f})"
        )
    oversample = scn.oversample or scn.steps_per_sample
    full = interval_bounds(thrust_profile(traj, scn.quad), 0, scn.n_samples + N + 1, h, scn.env, oversample)
    if scn.variant == "ti":
        full = np.full_like(full, full.min())
    ok, margin = feasibility_condition(full, h, scn.gamma)
    if not ok:
        raise FeasibilityViolatedError(f"bound schedule fails the feasibility condition (margin {margin:.4g})")
    q = np.asarray(scn.q_mat)
    models, certs = [], []
    for i in range(3):
        model = discretize_axis(ContinuousAxisModel(float(scn.quad.drag[i]), scn.gamma), h)
        models.append(model)
        certs.append(synthesize(model, full, q, scn.r_mat))
    return Setup(scn, traj, full, models, certs, margin, (report.t_bar_min, report.t_bar_max))


def _initial_state(scn: Scenario, ref, rng: np.random.Generator) -> QuadState:
    ic = scn.init
    p = np.asarray(ic.p_scale) * ref.p_bar + np.asarray(ic.p_offset)
    if ic.noise > 0:
        p = p + ic.noise * rng.standard_normal(3)
    v = ref.v_bar.copy() if isinstance(ic.v, str) else np.asarray(ic.v, dtype=float)
    w = ref.w_bar.copy() if isinstance(ic.w, str) else np.asarray(ic.w, dtype=float)
    r = euler_xyz(*np.radians(ic.euler_deg))
    return QuadState(p, v, r, w)


def _grid_exit(a, eta, lo, hi, d0, d1, alpha, beta) -> bool:
    if lo > hi:
        return True
    u = np.linspace(lo, hi, GRID_POINTS)
    a_next = alpha * a + beta * eta + (1.0 - alpha - beta) * u
    e_next = alpha * eta + (1.0 - alpha) * u
    tol = AD_TOL * max(1.0, d1)
    return bool(
        np.any(np.abs(a_next) > d1 + tol) or np.any(np.abs(e_next) > d1 + tol) or np.any(np.abs(u) > d0 + tol)
    )


def run_scenario(scn: Scenario, timing: bool = False, setup: Setup | None = None) -> RunResult:
    """Simulate the full cascade.

    With ``timing`` the per-step solve time is written to the log; otherwise
    that column is NaN so repeated runs produce identical logs.
    """
    wall0 = time.perf_counter()
    if setup is None:
        setup = prepare(scn)
    traj, full = setup.traj, setup.schedule
    quad, env, gains = scn.quad, scn.env, scn.gains
    N, h, dt, gamma = scn.n_horizon, scn.h, scn.dt, scn.gamma
    sps = scn.steps_per_sample
    config = MpcConfig(N, scn.q_mat, scn.r_mat, scn.kkt_tol, scn.max_iter)

    def source(k: int) -> ConstraintSchedule:
        return ConstraintSchedule(full[k:k + N + 1])

    controllers = [RecedingHorizonController(m, config, c, source) for m, c in zip(setup.models, setup.certs)]
    alpha, beta = setup.models[0].alpha, setup.models[0].beta

    rng = np.random.default_rng(scn.seed)
    ref, _, _ = _sample(traj, 0.0, quad, env, 1e-5)
    plant = QuadPlant(quad, _initial_state(scn, ref, rng))
    ad = np.asarray(scn.init.ad, dtype=float).copy()
    eta = np.asarray(scn.init.eta, dtype=float).copy()

    n_rows = scn.n_plant_steps + 1
    rows = np.empty((n_rows, len(CSV_COLUMNS)))
    att_err = np.empty(n_rows)
    outer_norm = np.empty(n_rows)
    mpc_rows = []
    solve_times = []
    counters = {"fallback": 0, "max_iter": 0, "thrust_out_of_range": 0, "interval_empty": 0,
                "grid_exit": 0, "u_outside_interval": 0}
    ad_violations = 0
    worst_ad_margin = -math.inf

    u = np.zeros(3)
    jstar = np.full(3, np.nan)
    ad_k, eta_k, t_k = ad.copy(), eta.copy(), 0.0
    offsets = np.arange(-2, 3) * 1e-5
    eye = np.eye(3)

    for j in range(n_rows):
        t = j * dt
        state = plant.state
        ref, t_bars, r_bars = _sample(traj, t, quad, env, 1e-5)
        solve_ms = math.nan
        if j % sps == 0:
            k = j // sps
            if j > 0:
                # filter states at the new sampling instant
                ad_k = alpha * ad_k + beta * eta_k + (1.0 - alpha - beta) * u
                eta_k = alpha * eta_k + (1.0 - alpha) * u
            t_k = t
            p_err = ref.p_bar - state.p
            v_err = ref.v_bar - state.v
            d0, d1 = float(full[k]), float(full[k + 1])
            tic = time.perf_counter()
            for i, ctrl in enumerate(controllers):
                x = np.array([p_err[i], v_err[i], ad_k[i], eta_k[i]])
                t0 = time.perf_counter()
                u[i] = ctrl.step(x, k)
                solve_times.append(1e3 * (time.perf_counter() - t0))
                sol = ctrl.last_solution
                jstar[i] = sol.cost if sol is not None and sol.status != "infeasible" else math.nan
                box = unified_input_bounds(ad_k[i], eta_k[i], d0, d1, alpha, beta)
                slack = AD_TOL * max(1.0, d0)
                if box.empty:
                    counters["interval_empty"] += 1
                elif not box.lo - slack <= u[i] <= box.hi + slack:
                    counters["u_outside_interval"] += 1
                exits = _grid_exit(ad_k[i], eta_k[i], box.lo, box.hi, d0, d1, alpha, beta)
                counters["grid_exit"] += int(exits)
                mpc_rows.append((
                    k, t, i, u[i], box.lo, box.hi, d0, d1, jstar[i],
                    sol.kkt_residual if sol is not None else math.nan,
                    sol.iterations if sol is not None else 0,
                    int(sol is not None and sol.ok), int(exits),
                ))
            if timing:
                solve_ms = 1e3 * (time.perf_counter() - tic)

        s = t - t_k
        r = s / gamma
        al = math.exp(-r)
        be = r * al
        ad_t = al * ad_k + be * eta_k + (1.0 - al - be) * u

        thrust_vec = ad_t + ref.t_bar * ref.z_b_bar
        T = float(np.linalg.norm(thrust_vec))
        if not 0.0 < T <= quad.t_max:
            counters["thrust_out_of_range"] += 1

        # desired attitude and rates on the reference stencil
        rs = (s + offsets)[:, None] / gamma
        als = np.exp(-rs)
        bes = rs * als
        ad_s = als * ad_k + bes * eta_k + (1.0 - als - bes) * u
        R_ds = _desired_attitude(ad_s, r_bars, t_bars)
        w = _rates_from_stencil(R_ds, 1e-5)
        R_d, w_d, w_d_dot = R_ds[2], w[1], (w[2] - w[0]) / 2e-5
        tau = inner_loop_torque(state, ref, R_d, w_d, w_d_dot, gains, quad)

        R_e = R_d.T @ (ref.r_bar.T @ state.r)
        att_err[j] = float(np.linalg.norm(R_e - eye))
        delta_t = delta_bound(ref.t_bar, env)
        margin = float(np.max(np.abs(ad_t))) - delta_t
        worst_ad_margin = max(worst_ad_margin, margin)
        if margin > AD_TOL:
            ad_violations += 1
        p_err = ref.p_bar - state.p
        outer_norm[j] = float(np.linalg.norm(np.concatenate([p_err, ref.v_bar - state.v, ad_t])))

        row = rows[j]
        row[0] = t
        row[1:4] = state.p
        row[4:7] = ref.p_bar
        row[7:10] = p_err
        row[10:13] = ad_t
        row[13] = delta_t
        row[14] = T
        row[15:18] = tau
        row[18:21] = u
        row[21:24] = jstar
        row[24] = solve_ms

        if j < n_rows - 1:
            plant.step(T, tau, dt)

    for c in controllers:
        counters["fallback"] += c.fallback_count
        counters["max_iter"] += c.max_iter_count
    counters["thrust_clamp"] = plant.clamp_events
    errs = rows[:, 7:10]
    result = RunResult(
        scenario=scn,
        rows=rows,
        mpc_rows=np.array(mpc_rows, dtype=float).reshape(-1, len(MPC_COLUMNS)),
        rmse=np.sqrt(np.mean(errs**2, axis=0)),
        solve_ms_mean=float(np.mean(solve_times)) if solve_times else math.nan,
        solve_ms_max=float(np.max(solve_times)) if solve_times else math.nan,
        violations={
            "ad_bound": ad_violations,
            "ad_worst_margin": worst_ad_margin,
            "thrust": counters["thrust_out_of_range"],
            "thrust_clamp": plant.clamp_events,
            "interval_empty": counters["interval_empty"],
            "grid_exit": counters["grid_exit"],
        },
        certificates=[_cert_summary(c, a) for c, a in zip(setup.certs, "xyz")],
        counters=counters,
        attitude_error=att_err,
        outer_norm=outer_norm,
    )
    result.certificates.append({"feasibility_margin": setup.feasibility_margin,
                                "t_bar_min": setup.t_bar_range[0], "t_bar_max": setup.t_bar_range[1]})
    result.wall_time_s = time.perf_counter() - wall0
    return result


def rmse(log, axis: int) -> float:
    """Root-mean-square position error of one axis over all logged plant steps."""
    rows = log.rows if isinstance(log, RunResult) else np.asarray(log, dtype=float)
    if rows.size == 0:
        return 0.0
    e = rows[:, _COL["ex"] + int(axis)]
    return float(np.sqrt(np.mean(e**2)))


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def emit(result: RunResult, out_dir, stem: str | None = None) -> dict:
    """Write ``<stem>.csv``, ``<stem>_mpc.csv`` and ``<stem>_summary.json``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{result.scenario.name}_{result.scenario.variant}"
    paths = {
        "csv": out / f"{stem}.csv",
        "mpc": out / f"{stem}_mpc.csv",
        "summary": out / f"{stem}_summary.json",
    }
    _write_csv(paths["csv"], CSV_COLUMNS, result.rows)
    _write_csv(paths["mpc"], MPC_COLUMNS, result.mpc_rows)
    with open(paths["summary"], "w", newline="\n") as f:
        json.dump(_jsonable(result.summary()), f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
