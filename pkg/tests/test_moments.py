import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import simpson
from hypothesis import strategies as st

from bilinstab.moments import (
    ControlSignal,
    MomentError,
    basis_values,
    build_biorthogonal,
    control_norm_certificate,
    gram_matrix,
    quadrature_biorthogonality,
    synthesize_null_control,
)
from bilinstab.simulator import linearized_state
from bilinstab.spectral import SpectralModel

MU6 = (np.arange(1, 7) ** 2 - 1) * math.pi**2


def test_gram_matrix_against_mpmath():
    mu = np.array([0.0, 3.0, 8.0])
    G = gram_matrix(mu, 0.7)
    for j in range(3):
        for k in range(3):
            ref = mpmath.quad(lambda t: mpmath.exp(-(mu[j] + mu[k]) * (0.7 - t)), [0, 0.7])
            assert G[j, k] == pytest.approx(float(ref), rel=1e-14)


def test_gram_rejects_duplicates():
    with pytest.raises(MomentError):
        gram_matrix([1.0, 1.0], 1.0)


def test_benchmark_family_residual_and_runtime():
    t0 = time.perf_counter()
    fam = build_biorthogonal(MU6, 0.5)
    assert time.perf_counter() - t0 < 1.0
    assert fam.residual <= 1e-8 and fam.quadrature_residual <= 1e-8
    assert fam.raw_residual_lower <= 1e-8


def test_family_is_biorthogonal_pointwise():
    fam = build_biorthogonal(MU6, 0.5)
    t = np.linspace(0, 0.5, 320001)
    for j in range(6):
        s = fam(j, t)
        for k in range(6):
            # balanced moment exp(mu_j T) int sigma_j eps_k; Simpson oracle
            moment = simpson(s * np.exp(-MU6[k] * (0.5 - t)), x=t) * math.exp(MU6[j] * 0.5)
            assert moment == pytest.approx(float(j == k), abs=1e-10)


def test_extended_precision_raw_moments():
    fam = build_biorthogonal(MU6, 0.5, precision="extended", dps=110)
    assert fam.residual <= 1e-90
    # raw entries reach exp(172); the raw residual is still tiny at this precision
    assert fam.raw_residual_mp() <= 1e-30


def test_double_precision_fails_loudly_when_ill_conditioned():
    mu = (np.arange(1, 15) ** 2 - 1) * math.pi**2
    with pytest.raises(MomentError, match="extended"):
        build_biorthogonal(mu, 0.5)
    fam = build_biorthogonal(mu, 0.5, precision="extended")
    assert fam.residual <= 1e-8


def test_unknown_precision():
    with pytest.raises(ValueError):
        build_biorthogonal(MU6, 0.5, precision="quad")


@given(
    st.lists(st.floats(0.5, 6.0), min_size=1, max_size=4),
    st.floats(0.2, 2.0),
)
def test_random_gapped_spectra(gaps, T):
    roots = np.concatenate([[0.0], np.cumsum(gaps)])
    mu = roots**2
    fam = build_biorthogonal(mu, T)
    assert quadrature_biorthogonality(mu, T, fam.balanced) <= 1e-8
    assert np.all(fam.sigma_norms > 0)


def _toy_model(mu, b):
    n = len(mu)
    B = np.zeros((n, n))
    B[:, 0] = B[0, :] = b
    return SpectralModel(np.asarray(mu, float), B, operator_norm=max(1.0, np.linalg.norm(B, 2)))


def test_linearized_endpoint_vanishes(shifted, family, v0, control):
    vbar = linearized_state(shifted, control, v0, 0.5)
    assert np.max(np.abs(vbar)) <= 1e-8 * np.linalg.norm(v0)


def test_zero_deviation_gives_zero_control(shifted, family):
    p = synthesize_null_control(shifted, np.zeros(6), 0.5, family)
    assert not np.any(p.coeffs)
    assert p.l2_norm == 0.0


def test_scalar_case_is_constant_control():
    T, b, v = 0.8, 0.3, 0.05
    m = SpectralModel(np.array([0.0]), np.array([[b]]))
    fam = build_biorthogonal(m.eigenvalues, T)
    p = synthesize_null_control(m, np.array([v]), T, fam)
    assert np.allclose(p(np.linspace(0, T, 7)), v / (b * T), rtol=1e-14)
    cert = control_norm_certificate(p, m, np.array([v]), fam)
    assert abs(cert.l2_norm - cert.bound) <= 1e-10 * cert.bound


def test_synthesis_rejects_vanishing_coupling(family, shifted):
    m = _toy_model(shifted.eigenvalues, [0.3, 0.0, 0.1, 0.1, 0.1, 0.1])
    with pytest.raises(MomentError, match="b_2"):
        synthesize_null_control(m, np.ones(6), 0.5, family)


def test_synthesis_checks_horizon(shifted, family):
    with pytest.raises(MomentError):
        synthesize_null_control(shifted, np.ones(6), 0.6, family)


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_certificate_holds(shifted, family, coeffs):
    v = np.array(coeffs)
    p = synthesize_null_control(shifted, v, 0.5, family)
    cert = control_norm_certificate(p, shifted, v, family)
    assert cert.holds


@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
def test_coefficient_text_round_trip(coeffs):
    p = ControlSignal(MU6, 0.5, np.array(coeffs))
    q = ControlSignal.from_coefficient_text(p.coefficient_text())
    assert np.array_equal(p.coeffs, q.coeffs) and np.array_equal(p.exponents, q.exponents)
    assert p.horizon == q.horizon


def test_coefficient_text_needs_horizon():
    with pytest.raises(ValueError):
        ControlSignal.from_coefficient_text("1.0 2.0\n")


def test_control_norms(control):
    t = np.linspace(0, 0.5, 200001)
    vals = control(t)
    h = t[1] - t[0]
    l2 = math.sqrt(h * (np.sum(vals**2) - 0.5 * (vals[0] ** 2 + vals[-1] ** 2)))
    assert control.l2_norm == pytest.approx(l2, rel=1e-6)
    assert control.l1_norm <= math.sqrt(0.5) * control.l2_norm * (1 + 1e-12)


def test_moments_match_target(shifted, family, v0, control):
    # int eps_k p = exp(-mu_k T) int exp(mu_k t) p = exp(-mu_k T) v0_k / b_k
    target = np.exp(-shifted.eigenvalues * 0.5) * v0 / shifted.ground_coupling
    assert np.allclose(control.moments(), target, rtol=1e-7, atol=1e-12)


def test_extended_control_agrees_with_double(shifted, v0, control):
    fam = build_biorthogonal(shifted.eigenvalues, 0.5, precision="extended")
    p = synthesize_null_control(shifted, v0, 0.5, fam)
    t = np.linspace(0, 0.5, 11)
    assert np.allclose(p(t), control(t), rtol=1e-6, atol=1e-8)
    assert p.l2_norm == pytest.approx(control.l2_norm, rel=1e-8)


def test_basis_values_shape():
    assert basis_values(MU6, 0.5, np.linspace(0, 0.5, 4)).shape == (6, 4)
