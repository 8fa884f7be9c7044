"""Truncated abstract problem in the eigenbasis of A.

The operator A is carried by its spectrum, the bounded operator B by its
matrix in the same orthonormal basis.  States are coefficient vectors; the
Euclidean norm of a coefficient vector is the norm of the state (Parseval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Tuple

import numpy as np

MAX_TRUNCATION = 32


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpectralModel:
    """Spectral truncation of the pair (A, B).

    Parameters
    ----------
    eigenvalues : array_like, shape (N,)
        Nondecreasing eigenvalues of A.
    coupling_matrix : array_like, shape (N, N)
        ``B[j, k] = <B phi_j, phi_k>``.
    operator_norm : float, optional
        Bound ``C_B`` on the norm of B.  Defaults to the spectral norm of the
        coupling matrix, floored at 1.
    index_offset : int
        Index of the first mode in the usual numbering of the model
        (0 for Neumann, 1 otherwise).  Only used for reporting.
    name : str
        Catalog id or free label.
    ground_shift : float
        Sum of ground eigenvalues removed by :func:`shift_to_zero_ground`.
    """

    eigenvalues: np.ndarray
    coupling_matrix: np.ndarray
    operator_norm: Optional[float] = None
    index_offset: int = 1
    name: str = "custom"
    ground_shift: float = 0.0

    def __post_init__(self):
        lam = _frozen(self.eigenvalues, 1)
        B = _frozen(self.coupling_matrix, 2)
        n = lam.size
        if n < 1 or n > MAX_TRUNCATION:
            raise ValueError(f"truncation must be in [1, {MAX_TRUNCATION}], got {n}")
        if B.shape != (n, n):
            raise ValueError(f"coupling matrix shape {B.shape} does not match N={n}")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(B))):
            raise ValueError("model data must be finite")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        spec_norm = float(np.linalg.norm(B, 2))
        c_b = max(spec_norm, 1.0) if self.operator_norm is None else float(self.operator_norm)
        if c_b < 1.0 or c_b < spec_norm * (1 - 1e-12):
            raise ValueError(f"operator_norm {c_b} must be >= max(1, ||B||_2 = {spec_norm})")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "coupling_matrix", B)
        object.__setattr__(self, "operator_norm", c_b)

    @property
    def truncation(self) -> int:
        return self.eigenvalues.size

    @property
    def ground_coupling(self) -> np.ndarray:
        """``b_k = <B phi_1, phi_k>``, the first column of the coupling matrix."""
        return self.coupling_matrix[:, 0]

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def is_symmetric(self) -> bool:
        B = self.coupling_matrix
        return bool(np.max(np.abs(B - B.T), initial=0.0) <= 1e-12 * max(1.0, np.abs(B).max()))

    def mode_index(self, i: int) -> int:
        """Model-numbering index of the ``i``-th stored mode (0-based ``i``)."""
        return i + self.index_offset


@dataclass(frozen=True)
class StateCoefficients:
    """State expanded in the eigenbasis, stamped with a time."""

    coeffs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = _frozen(self.coeffs, 1)
        if not np.all(np.isfinite(a)):
            raise ValueError("state coefficients must be finite")
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "time", float(self.time))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __sub__(self, other: "StateCoefficients") -> np.ndarray:
        return self.coeffs - other.coeffs


def basis_vector(n: int, i: int = 0) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped coefficient vectors on a window.

    ``coeffs[i]`` is the state at ``times[i]``.
    """

    times: np.ndarray
    coeffs: np.ndarray
    window: Tuple[float, float]

    def __post_init__(self):
        t = _frozen(self.times, 1)
        a = _frozen(self.coeffs, 2)
        if a.shape[0] != t.size:
            raise ValueError("one coefficient row per sample time is required")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        t0, t1 = map(float, self.window)
        span = max(1.0, abs(t1))
        if t.size and (t[0] < t0 - 1e-12 * span or t[-1] > t1 + 1e-12 * span):
            raise ValueError("sample times must lie in the window")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "window", (t0, t1))

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self) -> Iterator[StateCoefficients]:
        for t, a in zip(self.times, self.coeffs):
            yield StateCoefficients(a, t)

    @property
    def samples(self) -> list:
        return list(self)

    @property
    def final(self) -> StateCoefficients:
        return StateCoefficients(self.coeffs[-1], self.times[-1])

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.coeffs, axis=1)

    def to_table(self, digits: int = 16) -> str:
        """Whitespace separated table: header, then ``t a_1 ... a_N`` rows.

        Every number is written in scientific notation with ``digits``
        significant digits, so equal trajectories give identical text.
        """
        n = self.coeffs.shape[1]
        fmt = f"{{:.{digits - 1}e}}"
        lines = ["t " + " ".join(f"a_{k + 1}" for k in range(n))]
        for t, a in zip(self.times, self.coeffs):
            lines.append(" ".join(fmt.format(x) for x in (t, *a)))
        return "\n".join(lines) + "\n"


def free_evolution(model: SpectralModel, u0: StateCoefficients, t: float) -> StateCoefficients:
    """Apply the semigroup ``exp(-tA)`` mode by mode."""
    if t < 0:
        raise ValueError(f"free evolution needs t >= 0, got {t}")
    return StateCoefficients(np.exp(-model.eigenvalues * t) * u0.coeffs, u0.time + t)


def ground_state_solution(model: SpectralModel, t: float) -> StateCoefficients:
    """``psi_1(t) = exp(-lambda_1 t) phi_1``."""
    if t < 0:
        raise ValueError(f"ground state solution needs t >= 0, got {t}")
    return StateCoefficients(math.exp(-model.lambda1 * t) * basis_vector(model.truncation), t)


def shift_to_zero_ground(model: SpectralModel) -> SpectralModel:
    """Replace A by ``A - lambda_1 I``; the removed amount is kept in ``ground_shift``."""
    lam1 = model.lambda1
    if lam1 == 0.0:
        return model
    return replace(
        model,
        eigenvalues=model.eigenvalues - lam1,
        ground_shift=model.ground_shift + lam1,
    )


def gap_alpha(model_or_eigenvalues) -> float:
    """Smallest gap between consecutive square roots of the eigenvalues."""
    lam = getattr(model_or_eigenvalues, "eigenvalues", model_or_eigenvalues)
    lam = np.asarray(lam, dtype=float)
    if lam.size < 2:
        raise ValueError("gap needs at least two eigenvalues")
    if lam[0] < 0:
        raise ValueError("negative eigenvalue: shift the model before measuring the gap")
    alpha = float(np.min(np.diff(np.sqrt(lam))))
    if alpha <= 0:
        raise ValueError("repeated eigenvalue: the moment problem is degenerate")
    return alpha


def lambda_T_empirical(model: SpectralModel, family, b_floor: Optional[float] = None) -> float:
    """Measured surrogate ``(sum_k ||sigma_k||^2 / b_k^2)^(1/2)`` for ``C_alpha(T) Lambda_T``.

    ``family`` must have been built on the eigenvalues of ``model`` (after the
    ground shift).
    """
    if not np.allclose(family.exponents, model.eigenvalues, rtol=1e-12, atol=1e-12):
        raise ValueError("family exponents do not match the model eigenvalues")
    b = model.ground_coupling
    floor = 1e-12 * model.operator_norm if b_floor is None else b_floor
    bad = np.flatnonzero(np.abs(b) <= floor)
    if bad.size:
        k = model.mode_index(int(bad[0]))
        raise ValueError(f"ground coupling b_{k} = {b[bad[0]]:.3e} is below the floor {floor:.1e}")
    return float(np.sqrt(np.sum(family.sigma_norms**2 / b**2)))


@dataclass(frozen=True)
class StabilizationConstants:
    """Constant chain leading to the quadratic contraction constant ``K_T``.

    ``C3 = 2 sqrt(T) C_B C_alpha_T``, ``C4 = C_B C_alpha_T^2`` and
    ``K_T^2 = C_B C4 Lambda_T^2 exp(C3 + (C_B + 1) T) (1 + C4 Lambda_T^2)``.
    """

    T: float
    alpha: float
    C_alpha_T: float
    Lambda_T: float
    C_B: float
    C3: float = field(init=False)
    C4: float = field(init=False)
    K_T: float = field(init=False)
    log_K_T: float = field(init=False)
    omega_T: float = field(init=False)

    def __post_init__(self):
        for name in ("T", "alpha", "C_alpha_T", "Lambda_T", "C_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        T, ca, lam, cb = self.T, self.C_alpha_T, self.Lambda_T, self.C_B
        c3 = 2.0 * math.sqrt(T) * cb * ca
        c4 = cb * ca**2
        # log domain: the chain overflows for realistic C_alpha
        log_k2 = (math.log(cb) + math.log(c4) + 2 * math.log(lam) + c3 + (cb + 1.0) * T
                  + math.log1p(c4 * lam**2))
        object.__setattr__(self, "C3", c3)
        object.__setattr__(self, "C4", c4)
        object.__setattr__(self, "log_K_T", 0.5 * log_k2)
        object.__setattr__(self, "K_T", math.exp(0.5 * log_k2) if log_k2 < 1400 else math.inf)
        object.__setattr__(self, "omega_T", math.log(2.0) / T)

    @classmethod
    def from_family(cls, model: SpectralModel, family) -> "StabilizationConstants":
        """Evaluate the chain with ``C_alpha(T) := max_j ||sigma_j|| exp(mu_j T)``.

        ``Lambda_T`` is then chosen so that ``C_alpha(T) Lambda_T`` equals the
        measured surrogate :func:`lambda_T_empirical`.
        """
        c_alpha = float(np.max(family.balanced_norms))
        lam_hat = lambda_T_empirical(model, family)
        return cls(
            T=family.horizon,
            alpha=gap_alpha(model),
            C_alpha_T=c_alpha,
            Lambda_T=lam_hat / c_alpha,
            C_B=model.operator_norm,
        )
