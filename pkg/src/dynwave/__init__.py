"""Carleman-weight certification and control experiments for wave equations
with dynamic boundary conditions on annular domains."""

from .errors import (
    AdjointConsistencyError,
    BlowUpError,
    ConfigurationError,
    DynwaveError,
    EmptyBetaWindowError,
    ExtensionMismatchError,
    InfeasibleConfigError,
    InvalidBodyError,
    SingularChartError,
    WeightOverflowError,
)
from .geometry import ConvexBody, DomainSpec, GeometryCertificate, certify, counterexample_surface_hessian
from .grid import Grid
from .weights import (
    WeightParams,
    beta_window,
    eval_weights,
    feasibility,
    minimal_time,
    pick_c1,
    tangential_coefficient,
)
from .wave_solver import (
    Coefficients,
    Trajectory,
    WaveOperator,
    d_dt,
    energy_i2_series,
    energy_series,
    flux_trace,
    odd_extend,
    surface_gradient,
)
from .carleman import (
    CarlemanLedger,
    evaluate as audit_evaluate,
    ring_tangential_derivatives,
    scan as audit_scan,
    tangential_flatness,
)
from .inverse_source import (
    LipschitzReport,
    MeasurementMap,
    ReconstructionConfig,
    ReconstructionResult,
    SeparableSource,
    adjoint_measure,
    check_admissible,
    forward_measure,
    lipschitz_experiment,
    reconstruct,
    reconstruct_discrepancy,
)
from .observability import (
    ControlResult,
    FluxObservation,
    HumControl,
    ObservabilityReport,
    energy_gram,
    filtered_constant,
    hum_control,
    observability_constant,
    observability_sweep,
)

__version__ = "0.1.0"
