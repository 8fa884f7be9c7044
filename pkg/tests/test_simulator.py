import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from bilinstab.moments import ControlSignal
from bilinstab.simulator import (
    IntegrationError,
    IntegratorConfig,
    _guard,
    convergence_order,
    deviation_gap,
    energy_bound,
    forced_bound,
    integrate_bilinear,
    integrate_deviation,
    integrate_forced,
    integrate_linearized,
    linearized_state,
)
from bilinstab.spectral import SpectralModel

T = 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(steps=100)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(reference_factor=4)
    with pytest.raises(ValueError):
        IntegratorConfig(split="half")
    assert IntegratorConfig().reference.scheme == "reference_rk4_fine"


def test_no_control_is_free_evolution(dirichlet):
    u0 = np.linspace(1, 0.5, 6)
    tr = integrate_bilinear(dirichlet, None, u0, (0.0, 0.3), IntegratorConfig(steps=64))
    exact = np.exp(-np.outer(tr.times, dirichlet.eigenvalues)) * u0
    assert np.allclose(tr.coeffs, exact, rtol=1e-14, atol=0)


def test_window_offset_and_horizon_check(dirichlet, control):
    tr = integrate_bilinear(dirichlet, control, np.eye(6)[0], (2.0, 2.5), IntegratorConfig(steps=64))
    assert tr.times[0] == 2.0 and tr.times[-1] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        integrate_bilinear(dirichlet, control, np.eye(6)[0], (0.0, 0.7))
    with pytest.raises(ValueError):
        integrate_bilinear(dirichlet, control, np.eye(6)[0], (1.0, 1.0))


# the full split is exact when B commutes with A; the ground split is second order
@pytest.mark.parametrize("split,steps,tol", [("full", 256, 1e-13), ("ground", 1024, 1e-8)])
def test_identity_coupling_constant_control(split, steps, tol):
    lam = np.array([1.0, 4.0, 9.0])
    m = SpectralModel(lam, np.eye(3))
    c = 0.7
    p = ControlSignal(np.zeros(1), 1.0, np.array([c]))
    u0 = np.array([1.0, -0.5, 0.25])
    tr = integrate_bilinear(m, p, u0, (0.0, 1.0), IntegratorConfig(steps=steps, split=split))
    exact = np.exp(-np.outer(tr.times, lam + c)) * u0
    assert np.max(np.abs(tr.coeffs - exact)) <= tol


def test_endpoint_matches_fine_reference(dirichlet, control, v0, e1):
    cfg = IntegratorConfig(steps=1024)
    u0 = e1 + v0
    tr = integrate_bilinear(dirichlet, control, u0, (0.0, T), cfg)
    ref = integrate_bilinear(dirichlet, control, u0, (0.0, T), cfg.reference)
    assert np.linalg.norm(tr.coeffs[-1] - ref.coeffs[-1]) <= 1e-8


def test_reference_agrees_with_scipy(dirichlet, control, v0, e1):
    ref = integrate_bilinear(dirichlet, control, e1 + v0, (0.0, T), IntegratorConfig(steps=256).reference)
    lam, B = dirichlet.eigenvalues, dirichlet.coupling_matrix
    sol = solve_ivp(lambda t, a: -lam * a - float(control(t)) * (B @ a), (0, T), e1 + v0,
                    method="DOP853", rtol=1e-13, atol=1e-16)
    assert np.allclose(ref.coeffs[-1], sol.y[:, -1], rtol=0, atol=1e-11)


def test_strang_order(dirichlet, control, v0, e1):
    errors, order = convergence_order(dirichlet, control, e1 + v0, T)
    assert np.all(np.diff(errors) < 0)
    assert 1.8 <= order <= 2.2


def test_full_split_is_also_second_order(dirichlet, control, v0, e1):
    _, order = convergence_order(dirichlet, control, e1 + v0, T, split="full")
    assert 1.8 <= order <= 2.2


def test_splits_agree(dirichlet, control, v0, e1):
    a = integrate_bilinear(dirichlet, control, e1 + v0, (0.0, T), IntegratorConfig(split="ground"))
    b = integrate_bilinear(dirichlet, control, e1 + v0, (0.0, T), IntegratorConfig(split="full"))
    assert np.linalg.norm(a.coeffs[-1] - b.coeffs[-1]) <= 1e-5


def test_linearized_against_ode(shifted, control, v0):
    mu, b = shifted.eigenvalues, shifted.ground_coupling
    sol = solve_ivp(lambda t, v: -mu * v - float(control(t)) * b, (0, T), v0, method="DOP853",
                    rtol=1e-13, atol=1e-16, dense_output=True)
    for t in (0.1, 0.25, T):
        assert np.allclose(linearized_state(shifted, control, v0, t), sol.sol(t), rtol=0, atol=1e-12)
    end = integrate_linearized(shifted, control, v0, T)
    assert end.time == T and np.max(np.abs(end.coeffs)) <= 1e-8 * np.linalg.norm(v0)


def test_linearized_rejects_negative_exponents(dirichlet, control, v0):
    neg = SpectralModel(dirichlet.eigenvalues - 20.0, dirichlet.coupling_matrix)
    with pytest.raises(ValueError):
        linearized_state(neg, control, v0, 0.2)
    with pytest.raises(ValueError):
        linearized_state(dirichlet, control, v0, 0.9)


def test_deviation_route_matches_reference(shifted, control, v0):
    cfg = IntegratorConfig(steps=1024)
    a = integrate_deviation(shifted, control, v0, cfg)
    r = integrate_deviation(shifted, control, v0, cfg.reference)
    assert np.linalg.norm(a.v_end - r.v_end) <= 1e-3 * np.linalg.norm(r.v_end)
    assert np.allclose(a.v_end, a.linear_end + a.w_end, rtol=0, atol=1e-18)


def test_nonlinear_gap_is_quadratic(shifted, family, v0):
    from bilinstab.moments import synthesize_null_control

    w = []
    for s in (1.0, 0.5):
        p = synthesize_null_control(shifted, s * v0, T, family)
        w.append(deviation_gap(shifted, p, s * v0, T)[0])
    assert 3.5 <= w[0] / w[1] <= 4.5
    assert deviation_gap(shifted, ControlSignal.zero(shifted.eigenvalues, T), np.zeros(6), T) == (0.0, 0.0)


def test_energy_bound_along_window(shifted, control, v0):
    res = integrate_deviation(shifted, control, v0)
    assert np.max(res.trajectory.norms) ** 2 <= energy_bound(shifted, control, v0)


def test_forced_constant_source():
    lam = np.array([0.0, 2.0, 5.0])
    m = SpectralModel(lam, np.eye(3))
    f0 = np.array([1.0, -1.0, 0.5])
    u0 = np.array([0.2, 0.1, 0.0])
    tr = integrate_forced(m, lambda t: f0, u0, (0.0, 1.0), IntegratorConfig(steps=64))
    t = tr.times[:, None]
    growth = np.where(lam > 0, -np.expm1(-lam * t) / np.where(lam > 0, lam, 1.0), t)
    exact = np.exp(-lam * t) * u0 + growth * f0
    assert np.allclose(tr.coeffs, exact, rtol=1e-13, atol=1e-15)
    assert tr.norms.max() <= forced_bound(u0, np.linalg.norm(f0), 1.0)


def test_forced_reference_matches_strang():
    lam = np.array([1.0, 3.0])
    m = SpectralModel(lam, np.eye(2))

    def f(t):
        return np.array([math.sin(3 * t), math.cos(t)])

    a = integrate_forced(m, f, np.ones(2), (0.0, 1.0), IntegratorConfig(steps=512))
    b = integrate_forced(m, f, np.ones(2), (0.0, 1.0), IntegratorConfig(steps=512).reference)
    assert np.linalg.norm(a.coeffs[-1] - b.coeffs[-1]) <= 1e-5


def test_guard_flags_growth(dirichlet):
    times = np.linspace(0, 1, 3)
    coeffs = np.array([[1.0] + [0.0] * 5, [100.0] + [0.0] * 5, [1.0] + [0.0] * 5])
    with pytest.raises(IntegrationError, match="a priori"):
        _guard(dirichlet, lambda t: np.zeros_like(t), times, coeffs, 0.0, 1.0, IntegratorConfig())
    coeffs[1, 0] = np.nan
    with pytest.raises(IntegrationError, match="non-finite"):
        _guard(dirichlet, lambda t: np.zeros_like(t), times, coeffs, 0.0, 1.0, IntegratorConfig())


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
def test_a_priori_norm_bound(coeffs, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    m = SpectralModel(np.array([1.0, 4.0, 9.0, 16.0]), 0.5 * (A + A.T))
    p = ControlSignal(np.array([0.0, 1.0, 4.0]), 0.5, np.array(coeffs))
    u0 = rng.standard_normal(4)
    tr = integrate_bilinear(m, p, u0, (0.0, 0.5), IntegratorConfig(steps=64, split="full"))
    t = np.linspace(0, 0.5, 2001)
    absp = np.abs(p(t))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (absp[1:] + absp[:-1]) * np.diff(t))])
    bound = np.linalg.norm(u0) * np.exp(-1.0 * t + m.operator_norm * cum)
    assert np.all(tr.norms <= np.interp(tr.times, t, bound) * (1 + 1e-6))
