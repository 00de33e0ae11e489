import math

import numpy as np
import pytest

from quadmpc.exceptions import InfeasibleReferenceError, InvalidParameterError
from quadmpc.model import (
    SINGULAR_TOL,
    ConstraintSchedule,
    ContinuousAxisModel,
    ThrustEnvelope,
    continuous_matrices,
    delta_bound,
    discretize_axis,
    horizon_bounds,
    interval_bounds,
    rho,
)


def expm_oracle(m):
    # scaling and squaring with a long Taylor series; independent of scipy
    norm = np.max(np.sum(np.abs(m), axis=1))
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    a = m / 2**s
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, 30):
        term = term @ a / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def zoh_oracle(d, gamma, h):
    A, B = continuous_matrices(ContinuousAxisModel(d, gamma))
    M = np.zeros((5, 5))
    M[:4, :4] = A
    M[:4, 4:] = B
    E = expm_oracle(M * h)
    return E[:4, :4], E[:4, 4:]


def test_closed_forms_match_exponential_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        d = rng.uniform(0.05, 2.0)
        gamma = rng.uniform(0.02, 0.5)
        h = rng.uniform(0.005, 0.2)
        m = discretize_axis(ContinuousAxisModel(d, gamma), h)
        A_o, B_o = zoh_oracle(d, gamma, h)
        worst = max(worst, np.max(np.abs(m.A_d - A_o)), np.max(np.abs(m.B_d - B_o)))
    assert worst <= 1e-10


def test_case_study_axis_entries():
    m = discretize_axis(ContinuousAxisModel(0.26, 0.1), 0.05)
    r = 0.5
    assert m.alpha == pytest.approx(math.exp(-r))
    assert m.beta == pytest.approx(r * math.exp(-r))
    assert m.A_d[2, 3] == pytest.approx(m.beta)
    assert m.B_d[3, 0] == pytest.approx(1 - m.alpha)
    assert m.B_d[2, 0] == pytest.approx(1 - m.alpha - m.beta)
    # position integrator stays marginal
    assert m.A_d[0, 0] == 1.0
    assert m.is_controllable()


@pytest.mark.parametrize("offset", [0.0, 1e-9, 1e-5, -5e-4])
def test_near_singular_product_uses_stable_branch(offset):
    gamma = 0.2
    d = (1.0 + offset) / gamma
    m = discretize_axis(ContinuousAxisModel(d, gamma), 0.05)
    A_o, B_o = zoh_oracle(d, gamma, 0.05)
    assert np.max(np.abs(m.A_d - A_o)) < 1e-10
    assert np.max(np.abs(m.B_d - B_o)) < 1e-10
    assert abs(offset) < SINGULAR_TOL


def test_step_matches_matrices(axis_model):
    x = np.array([1.0, -2.0, 0.5, 0.3])
    np.testing.assert_allclose(axis_model.step(x, 0.7), axis_model.A_d @ x + 0.7 * axis_model.B_d[:, 0])


def test_model_arrays_are_read_only(axis_model):
    with pytest.raises(ValueError):
        axis_model.A_d[0, 0] = 2.0


@pytest.mark.parametrize("d, gamma", [(0.0, 0.1), (-1.0, 0.1), (0.3, 0.0), (0.3, float("nan"))])
def test_continuous_model_rejects_bad_parameters(d, gamma):
    with pytest.raises(InvalidParameterError):
        ContinuousAxisModel(d, gamma)


def test_discretize_rejects_bad_period():
    with pytest.raises(InvalidParameterError):
        discretize_axis(ContinuousAxisModel(0.3, 0.1), 0.0)


def test_rho_and_delta_at_hover(envelope):
    assert rho(9.81, envelope) == pytest.approx(9.71)
    assert delta_bound(9.81, envelope) == pytest.approx(9.71 / math.sqrt(3))
    # upper side is the binding one for large thrust
    assert rho(40.0, envelope) == pytest.approx(5.21)


def test_delta_bound_is_vectorized(envelope):
    t = np.array([9.81, 20.0, 40.0])
    out = delta_bound(t, envelope)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(min(19.9, 25.21) / math.sqrt(3))


@pytest.mark.parametrize("t_bar", [0.2, 44.9, float("nan")])
def test_thrust_outside_band_is_rejected(envelope, t_bar):
    with pytest.raises(InfeasibleReferenceError):
        rho(t_bar, envelope)


def test_envelope_validation():
    with pytest.raises(InvalidParameterError):
        ThrustEnvelope(5.0)
    with pytest.raises(InvalidParameterError):
        ThrustEnvelope(45.21, delta_margin=0.6, eps1=0.5)


def test_interval_bounds_take_grid_minimum(envelope):
    profile = lambda t: 20.0 + 10.0 * np.sin(t)
    h = 0.1
    out = interval_bounds(profile, 0, 40, h, envelope, oversample=50)
    for j in (0, 13, 39):
        grid = np.linspace(j * h, (j + 1) * h, 51)
        assert out[j] == pytest.approx(np.min(delta_bound(profile(grid), envelope)))


def test_interval_bounds_accept_scalar_only_profile(envelope):
    out = interval_bounds(lambda t: 9.81 + 0.0 * float(t), 0, 3, 0.05, envelope)
    np.testing.assert_allclose(out, delta_bound(9.81, envelope))


def test_horizon_bounds_length(envelope):
    s = horizon_bounds(lambda t: np.full_like(t, 9.81), 5, 20, 0.05, 10, envelope)
    assert len(s) == 21
    assert s.oversample == 10


def test_constraint_schedule_validation():
    with pytest.raises(InvalidParameterError):
        ConstraintSchedule(np.array([1.0, 0.0]))
    with pytest.raises(InvalidParameterError):
        ConstraintSchedule(np.array([]))
    s = ConstraintSchedule.constant(2.0, 4)
    assert len(s) == 4 and s[3] == 2.0
