"""Spectral-Galerkin toolkit for bilinear control of parabolic equations."""

from .models import (
    CATALOG,
    ModelKind,
    ModelSpec,
    MuTable,
    build_model,
    catalog_spec,
    hypothesis_check,
    load_model,
)
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
    convergence_order,
    integrate_bilinear,
    integrate_deviation,
    integrate_forced,
    integrate_linearized,
)
from .spectral import (
    SpectralModel,
    StabilizationConstants,
    StateCoefficients,
    Trajectory,
    gap_alpha,
    shift_to_zero_ground,
)
from .stabilization import (
    FitResult,
    StabilizationConfig,
    StabilizationRun,
    WindowRecord,
    basin_probe,
    draw_perturbation,
    fit_constants,
    run_stabilization,
)

__version__ = "0.1.0"
