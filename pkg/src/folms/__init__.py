"""Joint channel, carrier- and sampling-frequency-offset tracking with FO-LMS.

The package bundles the adaptive estimators (fixed-step FO-LMS and its
variable-step-size variant), a ground-truth link simulator, the closed-form
steady-state EMSE theory with an optimal step-size solver, and a Monte
Carlo harness with a command-line front end.
"""
from ._accel import HAS_NUMBA, backend
from .folms import (
    DivergenceError,
    FilterState,
    RunTrace,
    StepSizes,
    folms_error,
    folms_step,
    initial_state,
    measure_emse,
    run_folms,
    run_folms_on,
)
from .sigproc import (
    DEFAULT_INTERPOLATOR,
    Interpolator,
    InterpolationRangeError,
    KnownSignal,
    generate_known_signal,
    regressor_at,
    rng_stream,
    sample_at,
)
from .theory import (
    EmsePrediction,
    InfeasibleError,
    SolverResult,
    predict_emse_complete,
    predict_emse_simple,
    solve_optimal_step_sizes,
    to_db,
)
from .vss import VssConfig, VssState, run_vss, run_vss_on, vss_step
from .world import SystemParams, WorldTrace, simulate_world

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "backend",
    "DivergenceError",
    "FilterState",
    "RunTrace",
    "StepSizes",
    "folms_error",
    "folms_step",
    "initial_state",
    "measure_emse",
    "run_folms",
    "run_folms_on",
    "DEFAULT_INTERPOLATOR",
    "Interpolator",
    "InterpolationRangeError",
    "KnownSignal",
    "generate_known_signal",
    "regressor_at",
    "rng_stream",
    "sample_at",
    "EmsePrediction",
    "InfeasibleError",
    "SolverResult",
    "predict_emse_complete",
    "predict_emse_simple",
    "solve_optimal_step_sizes",
    "to_db",
    "VssConfig",
    "VssState",
    "run_vss",
    "run_vss_on",
    "vss_step",
    "SystemParams",
    "WorldTrace",
    "simulate_world",
]
