"""Run configuration read from TOML.

Grammar (every key optional; defaults reproduce the N = 6 Dirichlet benchmark)::

    precision = "double"            # or "extended"

    [model]
    id = "dirichlet-x2"             # catalog id, or give kind + mu_table/mu
    kind = "dirichlet_heat"         # dirichlet_heat | neumann_heat | variable_coeff_heat | radial_ball_3d
    mu = "x^2"                      # named potential
    mu_table = "mu.txt"             # two-column table, relative to the config file
    truncation = 6

    [control]
    T = 0.5
    windows = 5
    tau = 0.5                       # series hypothesis parameter

    [perturbation]                  # u0 = phi_1 + v0
    coeffs = [0.01, 0.0]            # explicit v0, zero padded to N; or
    radius = 0.05
    seed = 0
    decay = 2.0

    [integrator]
    steps = 1024
    scheme = "strang_splitting"
    reference_factor = 16
    tol = 1e-8
    split = "ground"

    [tolerances]
    moment = 1e-8
    floor = 1e-12
    b_floor = 1e-12                 # relative to C_B

    [output]
    dir = "out"
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import CATALOG, ModelKind, ModelSpec, MuTable, build_model, catalog_spec
from .simulator import IntegratorConfig
from .spectral import SpectralModel, basis_vector
from .stabilization import StabilizationConfig, draw_perturbation

MAX_WINDOWS = 50


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    id: str = "dirichlet-x2"
    kind: str = ""
    mu: str = ""
    mu_table: str = ""
    truncation: int = 6


@dataclass(frozen=True)
class ControlSection:
    T: float = 0.5
    windows: int = 5
    tau: float = 0.5


@dataclass(frozen=True)
class PerturbationSection:
    coeffs: Optional[Tuple[float, ...]] = None
    radius: float = 0.05
    seed: int = 0
    decay: float = 2.0


@dataclass(frozen=True)
class ToleranceSection:
    moment: float = 1e-8
    floor: float = 1e-12
    b_floor: float = 1e-12


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = ModelSection()
    control: ControlSection = ControlSection()
    perturbation: PerturbationSection = PerturbationSection()
    integrator: IntegratorConfig = IntegratorConfig()
    tolerances: ToleranceSection = ToleranceSection()
    precision: str = "double"
    out_dir: str = "out"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.precision not in ("double", "extended"):
            raise ConfigError(f"precision must be 'double' or 'extended', got {self.precision!r}")
        if not self.control.T > 0:
            raise ConfigError("control.T must be positive")
        if not 1 <= self.control.windows <= MAX_WINDOWS:
            raise ConfigError(f"control.windows must be in [1, {MAX_WINDOWS}]")
        if not self.control.tau > 0:
            raise ConfigError("control.tau must be positive")
        if self.perturbation.radius < 0:
            raise ConfigError("perturbation.radius must be nonnegative")
        m = self.model
        if m.mu_table or m.kind:
            if not m.kind:
                raise ConfigError("model.kind is required with a custom potential")
            try:
                ModelKind(m.kind)
            except ValueError:
                raise ConfigError(f"unknown model.kind {m.kind!r}") from None
            if m.mu_table and not self.mu_table_path.is_file():
                raise ConfigError(f"mu table not found: {self.mu_table_path}")
        elif m.id not in CATALOG:
            raise ConfigError(f"unknown model id {m.id!r}; known: {sorted(CATALOG)}")

    @property
    def mu_table_path(self) -> Path:
        return Path(self.base_dir) / self.model.mu_table

    def model_spec(self) -> ModelSpec:
        m = self.model
        try:
            if m.mu_table:
                return ModelSpec(m.kind, MuTable.load(self.mu_table_path), m.truncation, name="custom")
            if m.kind:
                return ModelSpec(m.kind, m.mu or "x^2", m.truncation, name="custom")
            return catalog_spec(m.id, m.truncation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build(self) -> SpectralModel:
        return build_model(self.model_spec())

    def v0(self, n: int) -> np.ndarray:
        p = self.perturbation
        if p.coeffs is not None:
            c = np.asarray(p.coeffs, dtype=float)
            if c.size > n:
                raise ConfigError(f"perturbation.coeffs has {c.size} entries for N={n}")
            return np.concatenate([c, np.zeros(n - c.size)])
        return draw_perturbation(n, p.radius, p.seed, p.decay)

    def u0(self, n: int) -> np.ndarray:
        return basis_vector(n) + self.v0(n)

    def stabilization(self) -> StabilizationConfig:
        return StabilizationConfig(
            floor=self.tolerances.floor,
            integrator=self.integrator,
            precision=self.precision,
            moment_tol=self.tolerances.moment,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        c = d["perturbation"]["coeffs"]
        d["perturbation"]["coeffs"] = None if c is None else list(c)
        return d


def _section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    data = dict(data)
    known = {"model", "control", "perturbation", "integrator", "tolerances", "output", "precision"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    pert = dict(data.get("perturbation", {}))
    if "coeffs" in pert:
        if not isinstance(pert["coeffs"], list):
            raise ConfigError("perturbation.coeffs must be a list of numbers")
        pert["coeffs"] = tuple(float(x) for x in pert["coeffs"])
    out = data.get("output", {})
    if set(out) - {"dir"}:
        raise ConfigError(f"unknown keys in [output]: {sorted(set(out) - {'dir'})}")
    try:
        return RunConfig(
            model=_section(ModelSection, data.get("model", {}), "model"),
            control=_section(ControlSection, data.get("control", {}), "control"),
            perturbation=_section(PerturbationSection, pert, "perturbation"),
            integrator=_section(IntegratorConfig, data.get("integrator", {}), "integrator"),
            tolerances=_section(ToleranceSection, data.get("tolerances", {}), "tolerances"),
            precision=data.get("precision", "double"),
            out_dir=str(out.get("dir", "out")),
            base_dir=base_dir,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, base_dir=str(path.parent))
