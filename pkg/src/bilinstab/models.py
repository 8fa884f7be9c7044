"""Catalog of 1-D and radial heat problems with closed-form eigendata.

Eigenvalues come from closed forms.  Coupling matrices are always computed
by Gauss-Legendre quadrature; the tabulated closed-form Fourier coefficients are kept as
regression references only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .spectral import MAX_TRUNCATION, SpectralModel, gap_alpha

LN2 = math.log(2.0)


class ModelKind(str, Enum):
    DIRICHLET = "dirichlet_heat"
    NEUMANN = "neumann_heat"
    VARCOEFF = "variable_coeff_heat"
    RADIAL = "radial_ball_3d"


class UnknownClosedForm(KeyError):
    pass


# closed-form potentials; tabulated ones are handled by MuTable
_MU_FUNCS = {
    "x^2": lambda x: x * x,
    "x": lambda x: x,
    "zero": lambda x: np.zeros_like(x),
    "one": lambda x: np.ones_like(x),
}
_MU_ALIASES = {"x2": "x^2", "r^2": "x^2", "r2": "x^2", "r": "x", "0": "zero", "1": "one"}


@dataclass(frozen=True)
class MuTable:
    """Potential given by samples, interpolated piecewise linearly."""

    x: np.ndarray
    values: np.ndarray
    source: str = "<table>"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise ValueError("mu table needs two columns with at least two rows")
        if np.any(np.diff(x) <= 0):
            raise ValueError("mu table abscissae must be strictly increasing")
        if x[0] > 1e-12 or x[-1] < 1 - 1e-12:
            raise ValueError("mu table must cover [0, 1]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return np.interp(x, self.x, self.values)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MuTable":
        """Read an ascii table with columns ``x mu(x)``; ``#`` starts a comment."""
        data = np.loadtxt(path, comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
        return cls(data[:, 0], data[:, 1], source=str(path))


MuDescriptor = Union[str, MuTable]


def resolve_mu(mu: MuDescriptor) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(mu, MuTable):
        return mu
    key = _MU_ALIASES.get(str(mu), str(mu))
    try:
        return _MU_FUNCS[key]
    except KeyError:
        raise ValueError(f"unresolvable potential {mu!r}; known: {sorted(_MU_FUNCS)}") from None


def _mu_key(mu: MuDescriptor) -> Optional[str]:
    if isinstance(mu, MuTable):
        return None
    return _MU_ALIASES.get(str(mu), str(mu))


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    mu: MuDescriptor = "x^2"
    truncation: int = 8
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not 2 <= self.truncation <= MAX_TRUNCATION:
            raise ValueError(f"truncation must be in [2, {MAX_TRUNCATION}], got {self.truncation}")
        resolve_mu(self.mu)

    @property
    def index_offset(self) -> int:
        return 0 if self.kind is ModelKind.NEUMANN else 1


CATALOG = {
    "dirichlet-x2": (ModelKind.DIRICHLET, "x^2"),
    "neumann-x2": (ModelKind.NEUMANN, "x^2"),
    "varcoeff-x": (ModelKind.VARCOEFF, "x"),
    "radial-r2": (ModelKind.RADIAL, "x^2"),
}


def catalog_spec(model_id: str, truncation: int = 8) -> ModelSpec:
    try:
        kind, mu = CATALOG[model_id]
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; known: {sorted(CATALOG)}") from None
    return ModelSpec(kind, mu, truncation, name=model_id)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on [0, 1]; ``order`` is the polynomial exactness degree."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int = field(default=-1)

    @property
    def size(self) -> int:
        return self.nodes.size

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return QuadratureRule(a + half * (x + 1.0), half * w, order=2 * n - 1)


def composite_gauss(breaks, n: int) -> QuadratureRule:
    """Gauss-Legendre with ``n`` nodes on each panel between consecutive breaks."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = (a + 0.5 * (b - a) * (x + 1.0)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return QuadratureRule(nodes, weights, order=2 * n - 1)


def _rule_for(mu: MuDescriptor, n: int) -> QuadratureRule:
    # piecewise-linear mu has kinks at the table nodes; integrate panel by panel
    if isinstance(mu, MuTable):
        return composite_gauss(mu.x, max(8, n // 4))
    return gauss_legendre(n)


# ---------------------------------------------------------------------------
# eigendata


def eigenvalues(kind: ModelKind, n: int) -> np.ndarray:
    kind = ModelKind(kind)
    if kind is ModelKind.NEUMANN:
        k = np.arange(0, n)
    else:
        k = np.arange(1, n + 1)
    if kind is ModelKind.VARCOEFF:
        return 0.25 + (k * math.pi / LN2) ** 2
    return (k * math.pi) ** 2.0


def eigenfunction(kind: ModelKind, k: int, x: np.ndarray) -> np.ndarray:
    """Eigenfunction ``phi_k`` (model numbering) at points of [0, 1]."""
    kind = ModelKind(kind)
    x = np.asarray(x, dtype=float)
    if kind is ModelKind.DIRICHLET:
        return math.sqrt(2.0) * np.sin(k * math.pi * x)
    if kind is ModelKind.NEUMANN:
        if k == 0:
            return np.ones_like(x)
        return math.sqrt(2.0) * np.cos(k * math.pi * x)
    if kind is ModelKind.VARCOEFF:
        s = np.log1p(x) / LN2
        return math.sqrt(2.0 / LN2) / np.sqrt(1.0 + x) * np.sin(k * math.pi * s)
    # radial: phi_k(r) = sin(k pi r) / (sqrt(2 pi) r); the origin is never a Gauss node
    return np.sin(k * math.pi * x) / (math.sqrt(2.0 * math.pi) * x)


def measure_density(kind: ModelKind, x: np.ndarray) -> np.ndarray:
    """Density of the inner-product measure on [0, 1] (4 pi r^2 for the ball)."""
    if ModelKind(kind) is ModelKind.RADIAL:
        return 4.0 * math.pi * x * x
    return np.ones_like(x)


def _mode_numbers(kind: ModelKind, n: int) -> np.ndarray:
    start = 0 if ModelKind(kind) is ModelKind.NEUMANN else 1
    return np.arange(start, start + n)


def _coupling_on(spec: ModelSpec, rule: QuadratureRule) -> np.ndarray:
    x, w = rule.nodes, rule.weights * measure_density(spec.kind, rule.nodes)
    mu = resolve_mu(spec.mu)(x)
    phis = np.array([eigenfunction(spec.kind, k, x) for k in _mode_numbers(spec.kind, spec.truncation)])
    return (phis * (w * mu)) @ phis.T


def orthonormality_defect(kind: ModelKind, n: int, nodes: int = 128) -> float:
    rule = gauss_legendre(nodes)
    x, w = rule.nodes, rule.weights * measure_density(kind, rule.nodes)
    phis = np.array([eigenfunction(kind, k, x) for k in _mode_numbers(kind, n)])
    return float(np.abs((phis * w) @ phis.T - np.eye(n)).max())


class QuadratureNotConverged(RuntimeError):
    pass


def coupling_matrix(spec: ModelSpec, nodes: int = 128, check_tol: float = 1e-12) -> np.ndarray:
    """``B[j, k] = <mu phi_j, phi_k>`` with a doubled-node convergence gate."""
    B = _coupling_on(spec, _rule_for(spec.mu, nodes))
    B2 = _coupling_on(spec, _rule_for(spec.mu, 2 * nodes))
    err = float(np.abs(B - B2).max())
    if err > check_tol * max(1.0, float(np.abs(B2).max())):
        raise QuadratureNotConverged(f"coupling quadrature changed by {err:.2e} when nodes doubled")
    # symmetrize away the last ulp so B is exactly self-adjoint
    return 0.5 * (B2 + B2.T)


def build_model(spec: ModelSpec, nodes: int = 128) -> SpectralModel:
    defect = orthonormality_defect(spec.kind, spec.truncation, max(nodes, 2 * spec.truncation + 8))
    if defect > 1e-12:
        raise RuntimeError(f"eigenbasis not orthonormal under quadrature (defect {defect:.2e})")
    return SpectralModel(
        eigenvalues=eigenvalues(spec.kind, spec.truncation),
        coupling_matrix=coupling_matrix(spec, nodes),
        index_offset=spec.index_offset,
        name=spec.name or f"{spec.kind.value}:{spec.mu if isinstance(spec.mu, str) else 'table'}",
    )


def load_model(model_id: str, truncation: int = 8) -> SpectralModel:
    return build_model(catalog_spec(model_id, truncation))


# ---------------------------------------------------------------------------
# Fourier coefficients of B phi_1


def ground_coupling_closed_form(spec: ModelSpec, k: int) -> float:
    """Tabulated closed form of ``<mu phi_1, phi_k>`` (``phi_0`` for Neumann).

    The Dirichlet ``x^2`` display for ``k >= 2`` disagrees with direct
    integration (wrong power of pi and sign); it is returned unchanged.
    :func:`corrected_dirichlet_x2` gives the value the integral actually has.
    """
    key = _mu_key(spec.mu)
    pi2 = math.pi**2
    if key == "zero":
        return 0.0
    if key == "x^2" and spec.kind in (ModelKind.DIRICHLET, ModelKind.RADIAL):
        if k < 1:
            raise ValueError("Dirichlet-type modes start at k=1")
        if k == 1:
            return (2 * pi2 - 3) / (6 * pi2)
        if spec.kind is ModelKind.DIRICHLET:
            return 4.0 * k * (-1) ** k / (k * k - 1) ** 2
        return 8.0 * (-1) ** (k + 1) * k / ((k * k - 1) ** 2 * pi2)
    if key == "x^2" and spec.kind is ModelKind.NEUMANN:
        if k < 0:
            raise ValueError("Neumann modes start at k=0")
        if k == 0:
            return 1.0 / 3.0
        return 2.0 * math.sqrt(2.0) * (-1) ** k / (k * math.pi) ** 2
    raise UnknownClosedForm(f"no closed form for ({spec.kind.value}, {spec.mu!r}, k={k})")


def corrected_dirichlet_x2(k: int) -> float:
    """``sqrt(2) int_0^1 x^2 phi_1 sin(k pi x) dx`` from the cosine antiderivative."""
    if k == 1:
        return (2 * math.pi**2 - 3) / (6 * math.pi**2)
    # 2 sin(a)sin(b) = cos(a-b) - cos(a+b) and int_0^1 x^2 cos(m pi x) dx = 2 (-1)^m / (m pi)^2
    def c(m):
        return 2.0 * (-1) ** m / (m * math.pi) ** 2

    return c(k - 1) - c(k + 1)


def ground_coupling_quadrature(spec: ModelSpec, k: int, rule: Optional[QuadratureRule] = None) -> float:
    """``int mu phi_first phi_k`` with the model's measure; the reference oracle."""
    rule = gauss_legendre(128) if rule is None else rule
    if rule.size < 2 * abs(k):
        raise ValueError(f"{rule.size} nodes cannot resolve mode {k}; need at least {2 * abs(k)}")
    first = 0 if spec.kind is ModelKind.NEUMANN else 1
    x = rule.nodes
    vals = resolve_mu(spec.mu)(x) * eigenfunction(spec.kind, first, x) * eigenfunction(spec.kind, k, x)
    return rule.integrate(vals * measure_density(spec.kind, x))


# ---------------------------------------------------------------------------
# series hypothesis for stabilization


@dataclass(frozen=True)
class HypothesisReport:
    alpha: Optional[float]
    min_abs_coupling: float
    argmin_index: int
    zero_couplings: tuple
    tau: float
    partial_sum: float
    tail_estimate: float
    decay_exponent: float
    gap_ok: bool
    coupling_ok: bool
    series_ok: bool

    @property
    def passed(self) -> bool:
        return self.gap_ok and self.coupling_ok and self.series_ok

    def lines(self):
        alpha = "n/a" if self.alpha is None else f"{self.alpha:.10g}"
        return [
            f"gap alpha            {alpha}  [{'ok' if self.gap_ok else 'FAIL'}]",
            f"min |b_k|            {self.min_abs_coupling:.6e} at k={self.argmin_index}"
            f"  [{'ok' if self.coupling_ok else 'FAIL'}]",
            *([f"vanishing couplings  k={list(self.zero_couplings)}"] if self.zero_couplings else []),
            f"series partial sum   {self.partial_sum:.6e} (tau={self.tau:g})",
            f"tail estimate        {self.tail_estimate:.6e} (|b_k| ~ k^-{self.decay_exponent:g})"
            f"  [{'ok' if self.series_ok else 'FAIL'}]",
            f"verdict              {'PASS' if self.passed else 'FAIL'}",
        ]


def hypothesis_check(
    model: SpectralModel,
    tau: float,
    b_floor: Optional[float] = None,
    decay_exponent: float = 3.0,
    tail_terms: int = 400,
) -> HypothesisReport:
    """Check the gap condition and the coupling hypotheses on the truncation.

    The tail of ``sum exp(-2 lambda_k tau) / b_k^2`` beyond N is estimated by
    assuming ``|b_k| >= c k^-decay_exponent`` with ``c`` fitted on the computed
    modes and ``lambda_k`` growing like ``k^2``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    lam = model.eigenvalues
    b = model.ground_coupling
    floor = 1e-12 * model.operator_norm if b_floor is None else b_floor

    try:
        alpha = gap_alpha(lam - min(lam[0], 0.0))
    except ValueError:
        alpha = None
    absb = np.abs(b)
    i_min = int(np.argmin(absb))
    zeros = tuple(model.mode_index(int(i)) for i in np.flatnonzero(absb <= floor))
    coupling_ok = not zeros

    with np.errstate(divide="ignore"):
        terms = np.exp(-2.0 * lam * tau) / b**2
    partial = float(np.sum(terms))

    k = np.arange(1, model.truncation + 1, dtype=float)
    tail = math.inf
    if coupling_ok:
        c = float(np.min(absb * k**decay_exponent))
        n = model.truncation
        kk = np.arange(n + 1, n + 1 + tail_terms, dtype=float)
        lam_tail = lam[-1] * (kk / n) ** 2
        tail = float(np.sum(np.exp(-2.0 * lam_tail * tau) * kk ** (2 * decay_exponent) / c**2))
    series_ok = bool(np.isfinite(partial) and np.isfinite(tail) and tail <= partial)

    return HypothesisReport(
        alpha=alpha,
        min_abs_coupling=float(absb[i_min]),
        argmin_index=model.mode_index(i_min),
        zero_couplings=zeros,
        tau=float(tau),
        partial_sum=partial,
        tail_estimate=tail,
        decay_exponent=decay_exponent,
        gap_ok=alpha is not None and alpha > 0,
        coupling_ok=coupling_ok,
        series_ok=series_ok,
    )
