"""Windowed stabilization loop and fits of the doubly exponential decay.

On every window ``[nT, (n+1)T]`` the problem is shifted so that the ground
eigenvalue is zero, the deviation ``v = z - e_1`` of ``z = exp(lambda_1 t) u``
is steered towards zero by the null control of the linearized system, and the
nonlinear system is integrated under that control.  The window map then
contracts quadratically, ``||v((n+1)T)|| <= K ||v(nT)||^2``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from .moments import (
    BiorthogonalFamily,
    ControlSignal,
    MomentError,
    build_biorthogonal,
    control_norm_certificate,
    synthesize_null_control,
)
from .simulator import (
    IntegrationError,
    IntegratorConfig,
    energy_bound,
    integrate_bilinear,
    integrate_deviation,
)
from .spectral import SpectralModel, StabilizationConstants, basis_vector, shift_to_zero_ground

SCHEMA_VERSION = "bilinstab.stabilization/1"
ROUTES = ("deviation", "full")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class StabilizationConfig:
    """Settings of a stabilization run.

    ``route="deviation"`` integrates ``v`` as closed-form linear part plus a
    split-stepped remainder; ``route="full"`` integrates ``z`` and subtracts
    ``e_1`` afterwards, which limits the observable decay to about ``1e-13``.
    """

    floor: float = 1e-12
    integrator: IntegratorConfig = IntegratorConfig()
    route: str = "deviation"
    precision: str = "double"
    moment_tol: float = 1e-8
    samples_per_window: int = 8

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.route not in ROUTES:
            raise ValueError(f"route must be one of {ROUTES}, got {self.route!r}")
        if self.precision not in ("double", "extended"):
            raise ValueError(f"precision must be 'double' or 'extended', got {self.precision!r}")
        if self.samples_per_window < 1 or self.integrator.steps % self.samples_per_window:
            raise ValueError("samples_per_window must divide the step count")


@dataclass(frozen=True)
class WindowRecord:
    index: int
    v_norm_start: float
    v_norm_end: float
    control_l2: float
    certificate_bound: float
    energy_bound_ok: bool
    overshoot: float

    def __post_init__(self):
        for name in ("v_norm_start", "v_norm_end", "control_l2", "certificate_bound"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def certificate_ok(self) -> bool:
        return self.control_l2 <= self.certificate_bound * (1 + 1e-12) + 1e-300

    @property
    def ratio(self) -> float:
        """``||v((n+1)T)|| / ||v(nT)||^2``."""
        return self.v_norm_end / self.v_norm_start**2 if self.v_norm_start > 0 else 0.0


@dataclass(frozen=True)
class DistanceSamples:
    """``||z(t) - phi_1||`` and ``||u(t) - psi_1(t)||`` at sample times."""

    times: np.ndarray
    z_distance: np.ndarray
    u_distance: np.ndarray


@dataclass
class StabilizationRun:
    model_id: str
    T: float
    N: int
    lambda1: float
    floor: float
    v0: np.ndarray
    windows: List[WindowRecord] = field(default_factory=list)
    samples: Optional[DistanceSamples] = None
    controls: List[ControlSignal] = field(default_factory=list, repr=False)
    failed: bool = False
    failure: str = ""
    formula: Optional[StabilizationConstants] = None
    lambda_hat: float = 0.0

    @property
    def v_norms(self) -> np.ndarray:
        """``||v(nT)||`` for n = 0 .. len(windows)."""
        if not self.windows:
            return np.array([float(np.linalg.norm(self.v0))])
        return np.array([w.v_norm_start for w in self.windows] + [self.windows[-1].v_norm_end])

    @property
    def valid_windows(self) -> List[WindowRecord]:
        return [w for w in self.windows if w.v_norm_start >= self.floor]

    @property
    def contraction_held(self) -> bool:
        return not self.failed


_FAMILY_CACHE: Dict[Tuple, BiorthogonalFamily] = {}


def cached_family(exponents: np.ndarray, T: float, tol: float = 1e-8,
                  precision: str = "double") -> BiorthogonalFamily:
    """Biorthogonal family keyed by (exponents, T, tol, precision)."""
    key = (np.asarray(exponents, float).tobytes(), float(T), float(tol), precision)
    fam = _FAMILY_CACHE.get(key)
    if fam is None:
        fam = build_biorthogonal(exponents, T, tol=tol, precision=precision)
        _FAMILY_CACHE[key] = fam
    return fam


def draw_perturbation(n: int, radius: float, seed: int, decay: float = 2.0) -> np.ndarray:
    """Seeded deviation with ``k^-decay`` weighted normal entries and norm ``radius``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(n) / np.arange(1, n + 1, dtype=float) ** decay
    return radius * d / np.linalg.norm(d)


def _window(shifted: SpectralModel, p: ControlSignal, v: np.ndarray, t0: float,
            cfg: StabilizationConfig) -> np.ndarray:
    """Deviation samples on one window, one row per grid time."""
    if cfg.route == "deviation":
        return integrate_deviation(shifted, p, v, cfg.integrator, t0=t0).trajectory.coeffs
    e1 = basis_vector(v.size)
    traj = integrate_bilinear(shifted, p, e1 + v, (t0, t0 + p.horizon), replace(cfg.integrator, split="full"))
    return traj.coeffs - e1


def run_stabilization(model: SpectralModel, u0, T: float, n_windows: int,
                      cfg: StabilizationConfig = StabilizationConfig()) -> StabilizationRun:
    """Run the windowed stabilization loop from ``u0`` for up to ``n_windows`` windows.

    The run stops early once ``||v(nT)||`` drops below ``cfg.floor``; an exactly
    zero deviation is carried through every window with ``p = 0``.  A window
    that does not contract while above the floor, or an integration blow-up,
    marks the run failed and ends it with all records kept.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if n_windows < 1:
        raise ValueError("n_windows must be positive")
    shifted = shift_to_zero_ground(model)
    lam1 = float(shifted.ground_shift)
    n = shifted.truncation
    e1 = basis_vector(n)
    v = np.asarray(getattr(u0, "coeffs", u0), dtype=float) - e1
    if v.shape != (n,):
        raise ValueError("initial state has the wrong dimension")
    fam = cached_family(shifted.eigenvalues, T, cfg.moment_tol, cfg.precision)
    run = StabilizationRun(model.name, float(T), n, lam1, cfg.floor, v.copy())
    try:
        run.formula = StabilizationConstants.from_family(shifted, fam)
    except ValueError as exc:
        raise MomentError(str(exc)) from exc
    run.lambda_hat = run.formula.C_alpha_T * run.formula.Lambda_T

    stride = cfg.integrator.steps // cfg.samples_per_window
    ts, zs = [0.0], [v.copy()]
    for k in range(n_windows):
        nv = float(np.linalg.norm(v))
        if 0 < nv < cfg.floor:
            break
        t0 = k * T
        try:
            p = synthesize_null_control(shifted, v, T, fam)
            cert = control_norm_certificate(p, shifted, v, fam)
            if nv == 0.0:
                path = np.zeros((cfg.integrator.steps + 1, n))
            else:
                path = _window(shifted, p, v, t0, cfg)
        except (IntegrationError, MomentError, FloatingPointError) as exc:
            run.failed, run.failure = True, f"window {k}: {exc}"
            break
        norms = np.linalg.norm(path, axis=1)
        v_end = path[-1]
        ne = float(norms[-1])
        if not np.isfinite(ne):
            run.failed, run.failure = True, f"window {k}: non-finite state"
            break
        sup = float(norms.max())
        run.windows.append(WindowRecord(
            index=k,
            v_norm_start=nv,
            v_norm_end=ne,
            control_l2=p.l2_norm,
            certificate_bound=cert.bound,
            energy_bound_ok=bool(sup**2 <= energy_bound(shifted, p, v) * (1 + 1e-12)),
            overshoot=sup / nv if nv > 0 else 0.0,
        ))
        run.controls.append(p)
        local = np.arange(stride, cfg.integrator.steps + 1, stride)
        ts.extend(t0 + T * local / cfg.integrator.steps)
        zs.extend(path[local])
        v = v_end
        if nv >= cfg.floor and ne > nv:
            run.failed = True
            run.failure = f"window {k}: no contraction ({nv:.3e} -> {ne:.3e})"
            break

    times = np.array(ts)
    dev = np.array(zs)
    decay = np.exp(-lam1 * times)[:, None]
    # u(t) = exp(-lambda_1 t) z(t) and psi_1(t) = exp(-lambda_1 t) phi_1, reconstructed then subtracted
    u = decay * (e1 + dev)
    psi = decay * e1
    run.samples = DistanceSamples(times, np.linalg.norm(dev, axis=1), np.linalg.norm(u - psi, axis=1))
    return run


# ---------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class FitResult:
    """Fitted constants of ``||v(nT)|| ~ M exp(-rho exp(omega nT))``.

    ``theta = K_hat ||v0||`` with the basin check ``theta < 1``;
    ``rho_theta = -log(theta) / 2`` is the rate implied by ``theta = exp(-2 rho)``.
    ``formula`` holds the constant chain evaluated with the measured family,
    an upper-bound curiosity only.
    """

    K_hat: float
    rho: float
    omega: float
    M: float
    theta: float
    omega_T: float
    windows_used: int
    residual: float
    formula: Optional[StabilizationConstants] = None

    @property
    def basin_ok(self) -> bool:
        return self.theta < 1.0

    @property
    def rho_theta(self) -> float:
        return -0.5 * math.log(self.theta) if 0 < self.theta < 1 else math.nan

    @property
    def omega_ratio(self) -> float:
        return self.omega / self.omega_T


def fit_sequence(norms, T: float, floor: float = 1e-12) -> FitResult:
    """Fit ``K``, ``rho``, ``omega``, ``M`` to the sequence ``||v(nT)||``, n = 0, 1, ...

    Every term with a predecessor above ``floor`` enters ``K_hat``; the least
    squares fit uses the terms above the floor plus the first one below it.
    """
    v = np.asarray(norms, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise FitError("norms must be a finite nonnegative sequence")
    valid = int(np.sum(np.cumprod(v[:-1] >= floor)))
    if valid < 3:
        raise FitError(f"need at least 3 windows above the floor {floor:.1e}, got {valid}")
    used = v[: valid + 1]
    if np.any(used[1:] >= used[:-1]):
        raise FitError("norm sequence is not strictly decreasing above the floor")
    if used[-1] == 0.0:
        used = used[:-1]
    K_hat = float(np.max(v[1: valid + 1] / v[:valid] ** 2))
    t = T * np.arange(used.size)
    y = np.log(used)
    omega_T = math.log(2.0) / T

    def resid(x):
        logM, logrho, omega = x
        return logM - np.exp(logrho + omega * t) - y

    x0 = np.array([0.0, math.log(max(-y[0], 1e-3)), omega_T])
    sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    logM, logrho, omega = sol.x
    return FitResult(
        K_hat=K_hat,
        rho=float(math.exp(logrho)),
        omega=float(omega),
        M=float(math.exp(logM)),
        theta=K_hat * float(v[0]),
        omega_T=omega_T,
        windows_used=valid,
        residual=float(np.max(np.abs(sol.fun))),
    )


def fit_constants(run: StabilizationRun) -> FitResult:
    """Fit the decay constants of a run; see :func:`fit_sequence`."""
    if run.failed:
        raise FitError(f"run failed: {run.failure}")
    fit = fit_sequence(run.v_norms, run.T, run.floor)
    return replace(fit, formula=run.formula)


# ---------------------------------------------------------------------------
# basin probe


def basin_probe(model: SpectralModel, T: float, cfg: StabilizationConfig = StabilizationConfig(),
                seed: int = 0, windows: int = 3, iterations: int = 40, hi: float = 1.0,
                rtol: float = 1e-3) -> float:
    """Empirical stabilizability radius along a seeded direction.

    A radius ``r`` succeeds when the ``windows``-window run from ``||v0|| = r``
    contracts on every window and satisfies its own basin condition
    ``max_n ||v((n+1)T)|| / ||v(nT)||^2 * r < 1``.  Plain monotone decay is not
    enough: far outside the basin the window map still shrinks ``||v||`` slowly
    towards the fixed point ``z = 0``.  Bisection between the largest success and
    the first failure found by doubling ``hi``.  Returns 0 when the model cannot
    be controlled (vanishing ground coupling).
    """
    n = model.truncation
    d = draw_perturbation(n, 1.0, seed)
    e1 = basis_vector(n)

    def ok(r: float) -> bool:
        run = run_stabilization(model, e1 + r * d, T, windows, cfg)
        if run.failed:
            return False
        ratios = [w.ratio for w in run.valid_windows]
        return not ratios or max(ratios) * r < 1.0

    try:
        cached_family(shift_to_zero_ground(model).eigenvalues, T, cfg.moment_tol, cfg.precision)
        lo = 1e-6
        if not ok(lo):
            return 0.0
    except MomentError:
        return 0.0
    for _ in range(20):
        if not ok(hi):
            break
        lo, hi = hi, 2 * hi
    else:
        return lo
    for _ in range(iterations):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# reports


def _num(x: float):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def run_report(run: StabilizationRun, fit: Optional[FitResult] = None, fit_error: str = "",
               config: Optional[dict] = None, timestamp: str = "") -> dict:
    """JSON-serializable report; ``timestamp`` is the only nondeterministic field."""
    rep = {
        "schema": SCHEMA_VERSION,
        "timestamp": timestamp,
        "model": run.model_id,
        "T": run.T,
        "N": run.N,
        "lambda1": run.lambda1,
        "floor": run.floor,
        "v0": [float(x) for x in run.v0],
        "status": "failed" if run.failed else "ok",
        "failure": run.failure,
        "lambda_hat": run.lambda_hat,
        "windows": [
            {**{k: _num(val) if isinstance(val, float) else val for k, val in asdict(w).items()},
             "certificate_ok": w.certificate_ok}
            for w in run.windows
        ],
    }
    if run.samples is not None:
        rep["samples"] = {
            "t": [float(x) for x in run.samples.times],
            "z_minus_phi1": [float(x) for x in run.samples.z_distance],
            "u_minus_psi1": [float(x) for x in run.samples.u_distance],
        }
    if run.formula is not None:
        f = run.formula
        rep["formula_constants"] = {k: _num(getattr(f, k)) for k in
                                    ("T", "alpha", "C_alpha_T", "Lambda_T", "C_B", "C3", "C4", "K_T", "log_K_T", "omega_T")}
    if fit is not None:
        rep["fit"] = {
            "K_hat": fit.K_hat, "rho": fit.rho, "omega": fit.omega, "M": fit.M,
            "theta": fit.theta, "basin_ok": fit.basin_ok, "rho_theta": _num(fit.rho_theta),
            "omega_T": fit.omega_T, "omega_ratio": fit.omega_ratio,
            "windows_used": fit.windows_used, "residual": fit.residual,
        }
    else:
        rep["fit"] = None
        rep["fit_error"] = fit_error
    if config is not None:
        rep["config"] = config
    return rep


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def window_csv(run: StabilizationRun) -> str:
    """CSV rows ``n, v_norm, control_l2``; the last row holds the final norm."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "v_norm", "control_l2"])
    for rec in run.windows:
        w.writerow([rec.index, repr(rec.v_norm_start), repr(rec.control_l2)])
    last = run.windows[-1].index + 1 if run.windows else 0
    w.writerow([last, repr(float(run.v_norms[-1])), ""])
    return buf.getvalue()
