import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadmpc.exceptions import AttitudeSingularityError, InvalidParameterError
from quadmpc.flatness import hover_trajectory, make_trajectory, reference_frame, sample_reference
from quadmpc.quadsim import (
    InnerLoopGains,
    OuterAxisState,
    QuadParams,
    QuadPlant,
    QuadState,
    ad_intersample,
    attitude_error,
    desired_attitude,
    desired_rates,
    dynamics_deriv,
    error_coords,
    eta_intersample,
    euler_xyz,
    inner_loop_torque,
    project_so3,
    rk4_step,
    skew,
    thrust_command,
    vee,
)

PARAMS = QuadParams()
GAINS = InnerLoopGains.scaled(PARAMS.inertia)
E3 = np.array([0.0, 0.0, 1.0])
vec3 = st.lists(st.floats(-100, 100), min_size=3, max_size=3).map(np.array)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    return q if np.linalg.det(q) > 0 else -q


def random_state(rng):
    return QuadState(rng.normal(size=3), rng.normal(size=3), random_rotation(rng), rng.normal(size=3))


@settings(max_examples=100)
@given(vec3, vec3)
def test_skew_is_cross_product(a, b):
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-9)
    np.testing.assert_array_equal(vee(skew(a)), a)


def test_skew_basis():
    np.testing.assert_array_equal(skew([1, 0, 0]) @ np.array([0, 1, 0]), [0, 0, 1])


def rhs_oracle(state, T, tau, p):
    # second implementation, written from the equations with explicit loops
    R, v, w = state.r, state.v, state.w
    J = p.inertia
    z_b = np.array([R[0][2], R[1][2], R[2][2]])
    v_dot = [p.g * (i == 2) - T * z_b[i] - p.drag[i] * v[i] for i in range(3)]
    Jw = [sum(J[i][k] * w[k] for k in range(3)) for i in range(3)]
    gyro = [Jw[1] * w[2] - Jw[2] * w[1], Jw[2] * w[0] - Jw[0] * w[2], Jw[0] * w[1] - Jw[1] * w[0]]
    Rtv = [sum(R[k][i] * v[k] for k in range(3)) for i in range(3)]
    rhs = [gyro[i] - p.tau_g[i] - sum(p.a_mat[i][k] * Rtv[k] for k in range(3))
           - sum(p.c_mat[i][k] * w[k] for k in range(3)) + tau[i] for i in range(3)]
    w_dot = np.linalg.solve(J, rhs)
    W = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    R_dot = [[sum(R[i][k] * W[k][j] for k in range(3)) for j in range(3)] for i in range(3)]
    return np.array(v), np.array(v_dot), np.array(R_dot), w_dot


def test_dynamics_match_second_implementation():
    rng = np.random.default_rng(0)
    p = QuadParams(tau_g=[0.01, -0.02, 0.005], a_mat=0.1 * np.eye(3) + 0.01, c_mat=np.diag([0.5, 0.4, 0.3]))
    for _ in range(50):
        s = random_state(rng)
        T = rng.uniform(0, 40)
        tau = rng.normal(size=3) * 0.05
        d = dynamics_deriv(s, T, tau, p)
        pd, vd, Rd, wd = rhs_oracle(s, T, tau, p)
        for a, b in ((d.p, pd), (d.v, vd), (d.r, Rd), (d.w, wd)):
            assert np.max(np.abs(a - b)) <= 1e-14 * max(1.0, np.max(np.abs(b)))


def test_hover_is_equilibrium():
    s = QuadState.hover([1, 2, -3])
    d = dynamics_deriv(s, PARAMS.g, PARAMS.tau_g, PARAMS)
    for part in (d.p, d.v, d.r, d.w):
        np.testing.assert_array_equal(part, 0.0)
    out = rk4_step(s, PARAMS.g, PARAMS.tau_g, 0.001, PARAMS)
    np.testing.assert_allclose(out.to_vector(), s.to_vector(), atol=1e-12)


def test_gyroscopic_term_is_power_neutral():
    rng = np.random.default_rng(1)
    p = QuadParams(inertia=np.diag([1.0, 2.0, 3.0]), drag=[1e-9] * 3, a_mat=np.zeros((3, 3)), c_mat=np.zeros((3, 3)))
    s = random_state(rng)
    d = dynamics_deriv(s, 0.0, np.zeros(3), p)
    assert s.w @ p.inertia @ d.w == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(d.v, p.g * E3 - 1e-9 * s.v)


def test_rk4_fourth_order():
    rng = np.random.default_rng(2)
    s0 = random_state(rng)
    T, tau, horizon = 12.0, np.array([0.01, -0.02, 0.015]), 0.02

    def integrate(dt):
        s = s0.copy()
        for _ in range(int(round(horizon / dt))):
            s = rk4_step(s, T, tau, dt, PARAMS)
        return s.to_vector()

    ref = integrate(1e-5)
    e1 = np.linalg.norm(integrate(1e-3) - ref)
    e2 = np.linalg.norm(integrate(5e-4) - ref)
    assert 12.0 < e1 / e2 < 20.0


def test_rotation_drift_stays_small():
    steps = 1_000_000 if os.environ.get("QUADMPC_LONG") else 100_000
    s = QuadState(np.zeros(3), np.zeros(3), euler_xyz(0.3, -0.2, 1.0), np.array([3.0, -2.0, 5.0]))
    tau = np.zeros(3)
    plant = QuadPlant(QuadParams(c_mat=np.zeros((3, 3)), a_mat=np.zeros((3, 3))), s)
    for _ in range(steps):
        plant.step(9.81, tau, 1e-3)
    R = plant.state.r
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-9
    assert plant.clamp_events == 0


def test_plant_counts_clamps():
    plant = QuadPlant(PARAMS, QuadState.hover())
    plant.step(60.0, np.zeros(3), 1e-3)
    plant.step(-1.0, np.zeros(3), 1e-3)
    assert plant.clamp_events == 2


def test_rk4_rejects_bad_step():
    with pytest.raises(InvalidParameterError):
        rk4_step(QuadState.hover(), 9.81, np.zeros(3), 0.0, PARAMS)


def test_project_so3():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    np.testing.assert_allclose(project_so3(R + 1e-6 * rng.normal(size=(3, 3))), R, atol=1e-5)
    Rp = project_so3(rng.normal(size=(3, 3)))
    np.testing.assert_allclose(Rp.T @ Rp, np.eye(3), atol=1e-12)
    assert np.linalg.det(Rp) == pytest.approx(1.0)


def test_error_coords():
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    ref = sample_reference(circle, 1.3, PARAMS)
    same = QuadState(ref.p_bar, ref.v_bar, ref.r_bar, ref.w_bar)
    p_e, v_e, R_t, w_t = error_coords(same, ref)
    np.testing.assert_allclose(p_e, 0, atol=1e-15)
    np.testing.assert_allclose(R_t, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(w_t, 0, atol=1e-14)
    rng = np.random.default_rng(4)
    s = random_state(rng)
    p_e, _, R_t, _ = error_coords(s, ref)
    np.testing.assert_allclose(ref.p_bar - p_e, s.p)
    np.testing.assert_allclose(R_t.T @ R_t, np.eye(3), atol=1e-12)


def test_thrust_command_examples():
    ref = sample_reference(hover_trajectory(), 0.0, PARAMS)
    assert thrust_command(np.zeros(3), ref) == pytest.approx(9.81)
    eps = 1e-3
    assert thrust_command(-ref.t_bar * ref.z_b_bar + eps * E3, ref) == pytest.approx(eps)
    rng = np.random.default_rng(5)
    delta = (9.81 - 0.1) / np.sqrt(3)
    for a in rng.uniform(-delta, delta, size=(2000, 3)):
        T = thrust_command(a, ref)
        assert 0 < T <= 45.21


def test_desired_attitude_examples():
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    ref = sample_reference(circle, 0.7, PARAMS)
    np.testing.assert_allclose(desired_attitude(np.zeros(3), ref), np.eye(3), atol=1e-15)
    rng = np.random.default_rng(6)
    for a in rng.uniform(-5, 5, size=(1000, 3)):
        R_d = desired_attitude(a, ref)
        np.testing.assert_allclose(R_d.T @ R_d, np.eye(3), atol=1e-12)
        assert np.linalg.det(R_d) == pytest.approx(1.0)
        z = ref.r_bar.T @ a + ref.t_bar * E3
        np.testing.assert_allclose(R_d[:, 2], z / np.linalg.norm(z), atol=1e-15)
        # commanded thrust direction in the world frame
        np.testing.assert_allclose(thrust_command(a, ref) * ref.r_bar @ R_d[:, 2], a + ref.t_bar * ref.z_b_bar, atol=1e-12)


def test_desired_attitude_singularity():
    ref = sample_reference(hover_trajectory(), 0.0, PARAMS)
    with pytest.raises(AttitudeSingularityError):
        desired_attitude(np.array([5.0, 0.0, -9.81]), ref)


def frame_fn(traj):
    return lambda times: reference_frame(traj, times, PARAMS)


def test_desired_rates_zero_at_hover():
    w, w_dot = desired_rates(np.zeros(3), np.zeros(3), np.zeros(3), 0.0, 0.02, frame_fn(hover_trajectory()), 0.1)
    np.testing.assert_allclose(w, 0.0, atol=1e-12)
    np.testing.assert_allclose(w_dot, 0.0, atol=1e-6)


def test_desired_rates_consistent_with_attitude_motion():
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    ad, eta, u = np.array([1.0, -0.5, 0.3]), np.array([2.0, 0.4, -1.0]), np.array([-1.5, 2.0, 0.5])
    t_k, gamma = 1.0, 0.1

    def R_d_at(t):
        a = ad_intersample(np.column_stack([np.zeros(3), np.zeros(3), ad, eta]), u, t - t_k, gamma)
        ref = sample_reference(circle, t, PARAMS)
        return desired_attitude(a, ref)

    worst = 0.0
    for t in np.linspace(1.001, 1.049, 7):
        w, _ = desired_rates(ad, eta, u, t_k, t, frame_fn(circle), gamma)
        h = 1e-5
        R_dot = (R_d_at(t + h) - R_d_at(t - h)) / (2 * h)
        worst = max(worst, np.max(np.abs(R_dot - R_d_at(t) @ skew(w))))
    assert worst <= 1e-4


def test_desired_rates_step_halving():
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    args = (np.array([1.0, -0.5, 0.3]), np.array([2.0, 0.4, -1.0]), np.array([-1.5, 2.0, 0.5]), 1.0, 1.02)
    w_ref, _ = desired_rates(*args, frame_fn(circle), 0.1, eps=1e-5)
    e1 = np.linalg.norm(desired_rates(*args, frame_fn(circle), 0.1, eps=2e-3)[0] - w_ref)
    e2 = np.linalg.norm(desired_rates(*args, frame_fn(circle), 0.1, eps=1e-3)[0] - w_ref)
    assert 3.0 < e1 / e2 < 5.0


def test_attitude_error_identities():
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    ref = sample_reference(circle, 2.0, PARAMS)
    rng = np.random.default_rng(7)
    R_d = random_rotation(rng)
    w_d = rng.normal(size=3)
    R_t = R_d
    s = QuadState(np.zeros(3), np.zeros(3), ref.r_bar @ R_t, R_t.T @ ref.w_bar + w_d)
    R_e, w_e = attitude_error(s, ref, R_d, w_d)
    np.testing.assert_allclose(R_e, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(w_e, 0.0, atol=1e-13)
    s2 = random_state(rng)
    R_e, w_e = attitude_error(s2, ref, R_d, w_d)
    R_tilde = ref.r_bar.T @ s2.r
    np.testing.assert_allclose(R_e.T @ R_e, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(w_e + R_tilde.T @ ref.w_bar + R_e.T @ w_d, s2.w, atol=1e-13)


def test_torque_renders_error_dynamics_autonomous():
    # d/dt w_e derived independently:
    #   w_e' = w' + S(w) R~' w_ref - R~' w_ref' + S(w~) R_e' w_d - R_e' w_d'
    circle = make_trajectory("circle", [2, 4, -10, 2, 2, 0.2])
    p = QuadParams(tau_g=[0.01, 0.0, -0.01])
    J = p.inertia
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        ref = sample_reference(circle, rng.uniform(0, 25), p)
        s = random_state(rng)
        R_d = random_rotation(rng)
        w_d, w_d_dot = rng.normal(size=3), rng.normal(size=3)
        tau = inner_loop_torque(s, ref, R_d, w_d, w_d_dot, GAINS, p)
        w_dot = dynamics_deriv(s, 10.0, tau, p).w
        R_t = ref.r_bar.T @ s.r
        R_e = R_d.T @ R_t
        w_tilde = s.w - R_t.T @ ref.w_bar
        w_e = w_tilde - R_e.T @ w_d
        w_e_dot = (w_dot + np.cross(s.w, R_t.T @ ref.w_bar) - R_t.T @ ref.w_bar_dot
                   + np.cross(w_tilde, R_e.T @ w_d) - R_e.T @ w_d_dot)
        target = -GAINS.k_w @ w_e + GAINS.k_r @ sum(GAINS.k_vec[i] * np.cross(np.eye(3)[i], R_e.T @ np.eye(3)[i])
                                                   for i in range(3))
        worst = max(worst, np.max(np.abs(J @ w_e_dot - target)) / (1 + np.max(np.abs(target))))
    assert worst <= 1e-10


def test_inner_loop_local_exponential_convergence():
    traj = hover_trajectory((0, 0, -5))
    ref = sample_reference(traj, 0.0, PARAMS)
    plant = QuadPlant(PARAMS, QuadState(ref.p_bar, np.zeros(3), euler_xyz(0.01, 0, 0), np.zeros(3)))
    errs = []
    for j in range(2000):
        s = plant.state
        tau = inner_loop_torque(s, ref, np.eye(3), np.zeros(3), np.zeros(3), GAINS, PARAMS)
        errs.append(np.linalg.norm(s.r - np.eye(3)))
        plant.step(PARAMS.g, tau, 1e-3)
    t = np.arange(2000) * 1e-3
    mask = (t > 0.2) & (t < 1.0)
    rate = -np.polyfit(t[mask], np.log(np.array(errs)[mask]), 1)[0]
    assert rate > 0.5
    assert errs[-1] < 1e-3 * errs[0]


def test_ad_intersample_endpoints_and_convexity():
    x = OuterAxisState(0.0, 0.0, 0.7, -0.2)
    assert ad_intersample(x, 1.0, 0.0, 0.1) == pytest.approx(0.7)
    assert ad_intersample(OuterAxisState(0, 0, 0.4, 0.4), 0.4, 0.03, 0.1) == pytest.approx(0.4)
    s = np.linspace(0, 0.05, 51)
    vals = ad_intersample(x, 1.0, s, 0.1)
    assert np.all(vals >= -0.2 - 1e-15) and np.all(vals <= 1.0 + 1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 0.05))
def test_ad_intersample_in_convex_hull(a, e, u, s):
    val = ad_intersample(np.array([0, 0, a, e]), u, s, 0.1)
    assert min(a, e, u) - 1e-12 <= val <= max(a, e, u) + 1e-12


def test_ad_intersample_vs_integration():
    gamma, u = 0.1, 1.3
    a, e = 0.4, -0.8
    dt = 1e-5
    y = np.array([a, e])
    f = lambda y: np.array([(y[1] - y[0]) / gamma, (u - y[1]) / gamma])
    for _ in range(int(0.05 / dt)):
        k1 = f(y)
        k2 = f(y + dt / 2 * k1)
        k3 = f(y + dt / 2 * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    x = OuterAxisState(0, 0, a, e)
    assert ad_intersample(x, u, 0.05, gamma) == pytest.approx(y[0], abs=1e-10)
    assert eta_intersample(x, u, 0.05, gamma) == pytest.approx(y[1], abs=1e-10)


def test_parameter_validation():
    with pytest.raises(InvalidParameterError):
        QuadParams(inertia=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        QuadParams(drag=[0.1, 0.0, 0.1])
    with pytest.raises(InvalidParameterError):
        InnerLoopGains(np.eye(3), -np.eye(3), [1, 1, 1])
    with pytest.raises(InvalidParameterError):
        InnerLoopGains(np.eye(3), np.eye(3), [1, 0, 1])
