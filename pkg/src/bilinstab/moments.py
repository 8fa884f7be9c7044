"""Biorthogonal families to real exponentials and null controls built from them.

Functions on [0, T] are represented in the decaying basis
``eps_k(t) = exp(-mu_k (T - t))``, which spans the same space as
``exp(mu_k t)`` but keeps every Gram entry in [0, T].  The family
``sigma_j`` biorthogonal to ``exp(mu_k t)`` satisfies

    int_0^T sigma_j(t) exp(mu_k t) dt = exp(mu_k T) int_0^T sigma_j eps_k dt,

so the rescaled functions ``exp(mu_j T) sigma_j`` are exactly the dual basis
of ``eps_k``: their coefficient matrix is the inverse Gram matrix.  All
residuals are measured on this balanced pair; the unscaled products carry
factors ``exp((mu_k - mu_j) T)`` that overflow any fixed precision long
before the family itself is inaccurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import mpmath
import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-8
QUAD_PANELS = 64
QUAD_NODES = 20


class MomentError(RuntimeError):
    """Raised when a biorthogonal family or a control cannot be certified."""


def _check_exponents(exponents, T) -> np.ndarray:
    mu = np.asarray(exponents, dtype=float)
    if mu.ndim != 1 or mu.size == 0:
        raise ValueError("exponents must be a non-empty 1-d array")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if np.any(mu < 0):
        raise ValueError("exponents must be nonnegative (shift the model first)")
    return mu


def gram_matrix(exponents, T: float) -> np.ndarray:
    """``G[j, k] = int_0^T eps_j eps_k dt`` in closed form."""
    mu = _check_exponents(exponents, T)
    if np.unique(mu).size != mu.size:
        raise MomentError("duplicate exponents make the Gram matrix singular")
    s = mu[:, None] + mu[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(s > 0, -np.expm1(-s * T) / s, T)
    return G


def _gram_mp(mu, T):
    n = len(mu)
    G = mpmath.matrix(n, n)
    for j in range(n):
        for k in range(n):
            s = mpmath.mpf(mu[j]) + mpmath.mpf(mu[k])
            G[j, k] = -mpmath.expm1(-s * T) / s if s > 0 else mpmath.mpf(T)
    return G


def _panel_rule(T: float, panels: int = QUAD_PANELS, nodes: int = QUAD_NODES):
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, T, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    return (a + 0.5 * (b - a) * (x + 1)).ravel(), (0.5 * (b - a) * w).ravel()


def basis_values(exponents, T: float, t) -> np.ndarray:
    """``eps_k(t)`` for every exponent (rows) and time (columns)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.exp(-np.asarray(exponents)[:, None] * (T - t[None, :]))


@dataclass(frozen=True)
class BiorthogonalFamily:
    """Minimal-norm family biorthogonal to ``exp(mu_k t)`` on [0, T].

    Attributes
    ----------
    balanced : ndarray
        Inverse Gram matrix; row j holds the eps-coefficients of
        ``exp(mu_j T) sigma_j``.
    residual : float
        ``max |int exp(mu_j T) sigma_j eps_k - delta_jk|`` from the closed-form
        Gram matrix.
    quadrature_residual : float
        Same quantity with the integrals done by composite Gauss quadrature.
    raw_residual_lower : float
        Unscaled residual ``max_{j >= k} |int sigma_j exp(mu_k t) - delta_jk|``;
        for ``j >= k`` it is bounded by the balanced one.
    """

    exponents: np.ndarray
    horizon: float
    balanced: np.ndarray
    tol: float
    residual: float
    quadrature_residual: float
    raw_residual_lower: float
    condition_estimate: float
    precision: str = "double"
    balanced_mp: Optional[object] = field(default=None, repr=False, compare=False)
    precision_dps: int = 15

    @property
    def size(self) -> int:
        return self.exponents.size

    @property
    def scale(self) -> np.ndarray:
        """``exp(-mu_j T)``, the factor between sigma_j and its balanced form."""
        return np.exp(-self.exponents * self.horizon)

    @property
    def coeff_matrix(self) -> np.ndarray:
        """``M[j, k]`` with ``sigma_j = sum_k M[j, k] eps_k``."""
        return self.scale[:, None] * self.balanced

    @property
    def balanced_norms(self) -> np.ndarray:
        """``||sigma_j|| exp(mu_j T) = sqrt(G^-1[j, j])``."""
        return np.sqrt(np.diag(self.balanced))

    @property
    def sigma_norms(self) -> np.ndarray:
        """``||sigma_j||_{L^2(0,T)}``."""
        return self.scale * self.balanced_norms

    def __call__(self, j: int, t) -> np.ndarray:
        """Evaluate ``sigma_j`` at times ``t``."""
        return self.coeff_matrix[j] @ basis_values(self.exponents, self.horizon, t)

    def raw_moments_mp(self, panels: int = QUAD_PANELS, degree: int = 5):
        """Unscaled matrix ``int sigma_j exp(mu_k t) dt`` in multiprecision.

        Only meaningful for extended-precision families, evaluated at the
        family's working precision.  Integrals use a composite Gauss-Legendre
        rule (``3 * 2**(degree - 1)`` nodes per panel), independent of the
        closed-form Gram matrix.  The raw entries carry factors up to
        ``exp((mu_k - mu_j) T)``, so the family precision must exceed that
        dynamic range for the residual to be small.
        """
        if self.balanced_mp is None:
            raise MomentError("raw moments need an extended-precision family")
        n = self.size
        with mpmath.workdps(self.precision_dps):
            T = mpmath.mpf(self.horizon)
            mu = [mpmath.mpf(m) for m in self.exponents]
            rule = mpmath.calculus.quadrature.GaussLegendre(mpmath.mp)
            ref = rule.calc_nodes(degree, mpmath.mp.prec)
            h = T / panels
            ts, ws = [], []
            for i in range(panels):
                c = h * (i + mpmath.mpf(0.5))
                for x, w in ref:
                    ts.append(c + h / 2 * x)
                    ws.append(h / 2 * w)
            grow = [[mpmath.exp(m * t) for t in ts] for m in mu]
            decay = [[mpmath.exp(-m * (T - t)) for t in ts] for m in mu]
            out = mpmath.matrix(n, n)
            for j in range(n):
                scale = mpmath.exp(-mu[j] * T)
                sig = [scale * mpmath.fsum(self.balanced_mp[j, l] * decay[l][i] for l in range(n))
                       for i in range(len(ts))]
                for k in range(n):
                    out[j, k] = mpmath.fsum(w * s_ * g for w, s_, g in zip(ws, sig, grow[k]))
        return out

    def raw_residual_mp(self, **kwargs) -> float:
        """``max |int sigma_j exp(mu_k t) dt - delta_jk|`` from :meth:`raw_moments_mp`."""
        raw = self.raw_moments_mp(**kwargs)
        n = self.size
        return float(max(abs(raw[j, k] - (1 if j == k else 0)) for j in range(n) for k in range(n)))


def quadrature_biorthogonality(exponents, T, balanced, panels: int = QUAD_PANELS) -> float:
    """Balanced residual with all integrals done by composite Gauss quadrature."""
    t, w = _panel_rule(T, panels)
    E = basis_values(exponents, T, t)
    S = balanced @ E
    return float(np.abs((S * w) @ E.T - np.eye(len(exponents))).max())


def _extended_dps(n: int) -> int:
    # cond(G) grows roughly like 10**(0.9 n) for square-root gapped spectra
    return max(40, 2 * n + 30)


def build_biorthogonal(
    exponents: Sequence[float],
    T: float,
    tol: float = DEFAULT_TOL,
    precision: str = "double",
    dps: Optional[int] = None,
) -> BiorthogonalFamily:
    """Minimal-norm biorthogonal family via an equilibrated Gram solve.

    Raises :class:`MomentError` when the certified residual exceeds ``tol``.
    """
    mu = _check_exponents(exponents, T)
    if mu.size > 1 and np.min(np.diff(np.sqrt(np.sort(mu)))) <= 0:
        raise MomentError("exponents must be distinct (positive square-root gap)")
    G = gram_matrix(mu, T)
    d = 1.0 / np.sqrt(np.diag(G))
    Ge = G * d[:, None] * d[None, :]
    cond = float(np.linalg.cond(Ge))

    balanced_mp = None
    if precision == "double":
        try:
            factor = scipy.linalg.cho_factor(Ge, lower=True)
        except np.linalg.LinAlgError as exc:
            raise MomentError(f"Gram factorization failed (cond ~ {cond:.2e}): {exc}") from exc
        Ginv = scipy.linalg.cho_solve(factor, np.diag(d)) * d[:, None]
        Ginv = 0.5 * (Ginv + Ginv.T)
        residual = float(np.abs(Ginv @ G - np.eye(mu.size)).max())
    elif precision == "extended":
        dps = dps or _extended_dps(mu.size)
        with mpmath.workdps(dps):
            Gm = _gram_mp(mu, T)
            balanced_mp = mpmath.inverse(Gm)
            R = balanced_mp * Gm - mpmath.eye(mu.size)
            residual = float(max(abs(R[i, j]) for i in range(mu.size) for j in range(mu.size)))
        Ginv = np.array(balanced_mp.tolist(), dtype=float)
    else:
        raise ValueError(f"unknown precision {precision!r}")

    quad_res = quadrature_biorthogonality(mu, T, Ginv) if precision == "double" else residual
    # for j >= k the unscaled residual is the balanced one times exp((mu_k - mu_j) T) <= 1
    with np.errstate(over="ignore", invalid="ignore"):
        raw = (Ginv @ G - np.eye(mu.size)) * np.exp((mu[None, :] - mu[:, None]) * T)
    raw_lower = float(np.abs(np.tril(raw)).max()) if precision == "double" else residual

    worst = max(residual, quad_res)
    if not worst <= tol:
        raise MomentError(
            f"biorthogonality residual {worst:.2e} exceeds tol {tol:.1e} "
            f"(N={mu.size}, T={T}, cond ~ {cond:.2e}); reduce N or use extended precision"
        )
    for a in (mu, Ginv):
        a.setflags(write=False)
    return BiorthogonalFamily(
        exponents=mu,
        horizon=float(T),
        balanced=Ginv,
        tol=tol,
        residual=residual,
        quadrature_residual=quad_res,
        raw_residual_lower=raw_lower,
        condition_estimate=cond,
        precision=precision,
        balanced_mp=balanced_mp,
        precision_dps=dps if precision == "extended" else 15,
    )


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True)
class ControlSignal:
    """``p(t) = sum_l coeffs[l] eps_l(t)`` on [0, horizon]."""

    exponents: np.ndarray
    horizon: float
    coeffs: np.ndarray
    coeffs_mp: Optional[list] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.exponents, dtype=float)
        q = np.asarray(self.coeffs, dtype=float)
        if mu.shape != q.shape:
            raise ValueError("one coefficient per exponent is required")
        object.__setattr__(self, "exponents", mu)
        object.__setattr__(self, "coeffs", q)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def zero(cls, exponents, T) -> "ControlSignal":
        return cls(np.asarray(exponents, float), T, np.zeros(len(exponents)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.coeffs_mp is not None:
            T = mpmath.mpf(self.horizon)
            vals = [
                float(mpmath.fsum(c * mpmath.exp(-mpmath.mpf(m) * (T - mpmath.mpf(float(s))))
                                  for c, m in zip(self.coeffs_mp, self.exponents)))
                for s in np.atleast_1d(t)
            ]
            return np.array(vals).reshape(t.shape)
        out = self.coeffs @ basis_values(self.exponents, self.horizon, t.ravel())
        return out.reshape(t.shape)

    @property
    def l2_norm(self) -> float:
        """Exact ``||p||_{L^2(0,T)}`` from the Gram quadratic form."""
        if self.coeffs_mp is not None:
            Gm = _gram_mp(self.exponents, self.horizon)
            q = mpmath.matrix(self.coeffs_mp)
            return float(mpmath.sqrt(max((q.T * Gm * q)[0, 0], 0)))
        G = gram_matrix(self.exponents, self.horizon)
        return math.sqrt(max(float(self.coeffs @ G @ self.coeffs), 0.0))

    @property
    def l1_norm(self) -> float:
        t, w = _panel_rule(self.horizon)
        return float(np.dot(w, np.abs(self(t))))

    def moments(self) -> np.ndarray:
        """``int_0^T eps_k p dt`` for every exponent."""
        return gram_matrix(self.exponents, self.horizon) @ self.coeffs

    def sample_table(self, points: int = 257, digits: int = 16) -> str:
        t = np.linspace(0.0, self.horizon, points)
        fmt = f"{{:.{digits - 1}e}}"
        rows = ["t p"] + [f"{fmt.format(a)} {fmt.format(b)}" for a, b in zip(t, self(t))]
        return "\n".join(rows) + "\n"

    def coefficient_text(self) -> str:
        """Exact text form: horizon line, then ``exponent coefficient`` rows (repr floats)."""
        lines = [f"# horizon {self.horizon!r}", "# exponent coefficient"]
        lines += [f"{m!r} {c!r}" for m, c in zip(self.exponents.tolist(), self.coeffs.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coefficient_text(cls, text: str) -> "ControlSignal":
        horizon = None
        mus, qs = [], []
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("# horizon"):
                horizon = float(line.split()[2])
            elif line and not line.startswith("#"):
                m, c = line.split()
                mus.append(float(m))
                qs.append(float(c))
        if horizon is None:
            raise ValueError("coefficient text has no horizon line")
        return cls(np.array(mus), horizon, np.array(qs))


def _coupling_floor(model, b_floor):
    return 1e-12 * model.operator_norm if b_floor is None else b_floor


def synthesize_null_control(model, v0, T: float, family: BiorthogonalFamily,
                            b_floor: Optional[float] = None) -> ControlSignal:
    """Control ``p = sum_k (v0_k / b_k) sigma_k`` steering the linearized system to 0.

    ``model`` must already have zero ground eigenvalue.
    """
    v0 = np.asarray(getattr(v0, "coeffs", v0), dtype=float)
    mu = model.eigenvalues
    if abs(T - family.horizon) > 1e-14 * max(1.0, T):
        raise MomentError(f"family horizon {family.horizon} differs from T={T}")
    if mu.shape != family.exponents.shape or not np.allclose(mu, family.exponents, rtol=1e-12, atol=1e-12):
        raise MomentError("family exponents do not match the model eigenvalues")
    if v0.shape != mu.shape:
        raise ValueError("initial deviation has the wrong dimension")
    b = model.ground_coupling
    floor = _coupling_floor(model, b_floor)
    small = np.flatnonzero(np.abs(b) <= floor)
    if small.size:
        k = model.mode_index(int(small[0]))
        raise MomentError(f"ground coupling b_{k} = {b[small[0]]:.3e} below floor {floor:.1e}")
    c = v0 / b
    if family.balanced_mp is not None:
        with mpmath.workdps(family.precision_dps):
            T_mp = mpmath.mpf(family.horizon)
            rhs = [mpmath.exp(-mpmath.mpf(m) * T_mp) * mpmath.mpf(ci) for m, ci in zip(mu, c)]
            n = mu.size
            q_mp = [mpmath.fsum(family.balanced_mp[j, l] * rhs[j] for j in range(n)) for l in range(n)]
        return ControlSignal(mu, family.horizon, np.array([float(x) for x in q_mp]), coeffs_mp=q_mp)
    # q = M^T c with M = diag(exp(-mu T)) G^-1
    q = family.balanced.T @ (family.scale * c)
    return ControlSignal(mu, family.horizon, q)


@dataclass(frozen=True)
class NormCertificate:
    l2_norm: float
    bound: float
    lambda_hat: float

    @property
    def holds(self) -> bool:
        return self.l2_norm <= self.bound * (1 + 1e-12) + 1e-300


def control_norm_certificate(p: ControlSignal, model, v0, family: BiorthogonalFamily) -> NormCertificate:
    """Compare ``||p||`` with ``Lambda_hat_T ||v0||`` (Cauchy-Schwarz over the modes)."""
    from .spectral import lambda_T_empirical

    v0 = np.asarray(getattr(v0, "coeffs", v0), dtype=float)
    lam_hat = lambda_T_empirical(model, family)
    return NormCertificate(p.l2_norm, lam_hat * float(np.linalg.norm(v0)), lam_hat)
