"""Stable feedback control of longitudinal car-following from raw RGB
pixels: procedural camera, analytic reference view synthesis, pixel-space
proportional control, and numerical certification of the stability
assumptions, the Riccati-based controller existence and ultimate
boundedness."""

from .analysis import (
    AssumptionReport,
    ErrorSignal,
    LyapunovWeights,
    QuadraticFit,
    UubCertificate,
    check_assumptions,
    error_signal,
    estimate_eps1,
    estimate_eps2,
    fit_c,
    lyapunov_V,
    lyapunov_Vdot,
    lyapunov_weights,
    uub_certify,
)
from .control import (
    ControllerConfig,
    PolicyReduction,
    SofSolution,
    generalized_pixel_control,
    ideal_control,
    pixel_control,
    sof_policy,
    sof_synthesize,
)
from .dynamics import (
    DEFAULT_VEHICLE,
    ErrorState,
    SimState,
    VehicleParams,
    decoupled_deriv,
    error_deriv,
    rk4_step,
)
from .errors import (
    AssumptionViolationError,
    ConfigError,
    InvalidStateError,
    ObjectNotFoundError,
    PixelregError,
    SimulationAbort,
    SpacingRangeError,
    SynthesisInconsistencyError,
)
from .experiment import (
    ExperimentConfig,
    LyapunovSettings,
    TrajectoryRecord,
    load_config,
    run_closed_loop,
    save_config,
    telemetry_csv,
    write_telemetry,
)
from .scene import (
    DEFAULT_SCENE,
    BackgroundParams,
    SceneParams,
    background_image,
    object_footprint,
    render,
    write_ppm,
)
from .viewsynth import (
    SynthesisReport,
    analytic_flow,
    background_view,
    bilinear_sample,
    estimate_spacing,
    identity_flow,
    read_flow,
    synthesize,
    write_flow,
)

__version__ = "0.1.0"
