"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The lines are printed in the pytest terminal summary, and directly when the
file is run as a script: ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import ACCEPTANCE_LINES  # noqa: E402

from bilinstab.models import (  # noqa: E402
    catalog_spec,
    gauss_legendre,
    ground_coupling_closed_form,
    ground_coupling_quadrature,
    load_model,
)
from bilinstab.moments import build_biorthogonal, control_norm_certificate, synthesize_null_control  # noqa: E402
from bilinstab.simulator import convergence_order, deviation_gap, linearized_state  # noqa: E402
from bilinstab.spectral import SpectralModel, gap_alpha, shift_to_zero_ground  # noqa: E402
from bilinstab.stabilization import draw_perturbation, fit_constants, run_stabilization  # noqa: E402

T, N, RADIUS, SEED = 0.5, 6, 0.05, 0
PI2 = math.pi**2

_cache = {}


def record(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def benchmark():
    if "model" not in _cache:
        model = load_model("dirichlet-x2", N)
        shifted = shift_to_zero_ground(model)
        fam = build_biorthogonal(shifted.eigenvalues, T)
        v0 = draw_perturbation(N, RADIUS, SEED)
        _cache.update(model=model, shifted=shifted, family=fam, v0=v0,
                      p=synthesize_null_control(shifted, v0, T, fam))
    return _cache


def benchmark_run():
    if "run" not in _cache:
        b = benchmark()
        t0 = time.perf_counter()
        run = run_stabilization(b["model"], np.eye(N)[0] + b["v0"], T, 8)
        _cache["run_time"] = time.perf_counter() - t0
        _cache["run"] = run
    return _cache["run"]


def test_01_biorthogonality():
    mu = (np.arange(1, N + 1) ** 2 - 1) * PI2
    t0 = time.perf_counter()
    fam = build_biorthogonal(mu, T, precision="double")
    elapsed = time.perf_counter() - t0
    res = fam.quadrature_residual
    ok = res <= 1e-8 and elapsed < 1.0
    record(1, "biorthogonality", ok,
           f"64-panel quadrature residual {res:.2e} <= 1e-8, closed-form residual {fam.residual:.2e}, "
           f"runtime {elapsed:.3f} s < 1 s")


def test_02_linearized_null_control():
    b = benchmark()
    vbar = linearized_state(b["shifted"], b["p"], b["v0"], T)
    ratio = float(np.max(np.abs(vbar)) / np.linalg.norm(b["v0"]))
    record(2, "linearized null control", ratio <= 1e-8, f"max|vbar_k(T)| / ||v0|| = {ratio:.2e} <= 1e-8")


def test_03_fourier_coefficients():
    rule = gauss_legendre(128)
    worst = 0.0
    cases = [("neumann-x2", range(0, 21)), ("radial-r2", range(1, 21)), ("dirichlet-x2", [1])]
    for mid, ks in cases:
        spec = catalog_spec(mid)
        for k in ks:
            q = ground_coupling_quadrature(spec, k, rule)
            c = ground_coupling_closed_form(spec, k)
            worst = max(worst, abs(c - q) / abs(q))
    b2 = ground_coupling_quadrature(catalog_spec("dirichlet-x2"), 2, rule)
    err2 = abs(b2 - (-16 / (9 * PI2)))
    ok = worst <= 1e-10 and err2 <= 1e-10
    record(3, "Fourier coefficient oracle", ok,
           f"max rel closed-form error {worst:.2e} <= 1e-10; dirichlet b_2 = {b2:.9f}, "
           f"|b_2 + 16/(9 pi^2)| = {err2:.1e} <= 1e-10")


def test_04_gap_constants():
    a_d = gap_alpha(load_model("dirichlet-x2", 8))
    a_v = gap_alpha(load_model("varcoeff-x", 8))
    ok = abs(a_d - math.pi) <= 1e-12 and abs(a_v - 4.5187) <= 1e-3
    record(4, "gap constants", ok,
           f"dirichlet alpha - pi = {a_d - math.pi:.1e}; varcoeff alpha = {a_v:.6f} "
           f"(pi/ln2 = {math.pi / math.log(2):.6f})")


def test_05_quadratic_contraction():
    run = benchmark_run()
    fit = fit_constants(run)
    valid = run.valid_windows
    held = all(w.v_norm_end <= fit.K_hat * w.v_norm_start**2 * (1 + 1e-12) for w in valid)
    ok = held and len(valid) >= 3 and _cache["run_time"] < 10 and not run.failed
    record(5, "quadratic contraction", ok,
           f"K_hat = {fit.K_hat:.4f} holds on {len(valid)} windows above 1e-12 (need >= 3), "
           f"runtime {_cache['run_time']:.2f} s < 10 s")


def test_06_superexponential_rate():
    fit = fit_constants(benchmark_run())
    ok = 0.8 <= fit.omega_ratio <= 1.2
    record(6, "superexponential rate", ok,
           f"omega_hat = {fit.omega:.4f}, log2/T = {fit.omega_T:.4f}, ratio {fit.omega_ratio:.3f} in [0.8, 1.2]")


def test_07_quadratic_gap():
    b = benchmark()
    w = []
    for s in (1.0, 0.5):
        p = synthesize_null_control(b["shifted"], s * b["v0"], T, b["family"])
        w.append(deviation_gap(b["shifted"], p, s * b["v0"], T)[0])
    factor = w[0] / w[1]
    record(7, "quadratic nonlinear-linear gap", 3.5 <= factor <= 4.5,
           f"||w(T)|| = {w[0]:.3e} -> {w[1]:.3e} on halving, factor {factor:.3f} in [3.5, 4.5]")


def test_08_control_norm_certificate():
    run = benchmark_run()
    frac = np.mean([w.certificate_ok for w in run.windows])
    # N = 1: a single exponent, p constant and the Cauchy-Schwarz step is an equality
    m = SpectralModel(np.array([0.0]), np.array([[0.37]]))
    fam = build_biorthogonal(m.eigenvalues, T)
    v = np.array([0.05])
    cert = control_norm_certificate(synthesize_null_control(m, v, T, fam), m, v, fam)
    gap = abs(cert.l2_norm - cert.bound)
    ok = frac == 1.0 and gap <= 1e-10
    record(8, "control norm certificate", ok,
           f"holds on {100 * frac:.0f}% of {len(run.windows)} windows; N=1 |‖p‖ - bound| = {gap:.1e} <= 1e-10")


def test_09_integrator_order():
    b = benchmark()
    errors, order = convergence_order(b["model"], b["p"], np.eye(N)[0] + b["v0"], T)
    record(9, "integrator order", 1.8 <= order <= 2.2,
           f"Strang endpoint errors {', '.join(f'{e:.2e}' for e in errors)}; fitted order {order:.3f} in [1.8, 2.2]")


def test_10_lambda1_reinstatement():
    run = benchmark_run()
    s = run.samples
    dev = float(np.max(np.abs(s.u_distance - np.exp(-PI2 * s.times) * s.z_distance)))
    ok = abs(run.lambda1 - PI2) <= 1e-12 and dev <= 1e-12
    record(10, "lambda_1 reinstatement", ok,
           f"max |‖u - psi_1‖ - exp(-pi^2 t)‖z - phi_1‖| = {dev:.1e} <= 1e-12 over {s.times.size} samples")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
