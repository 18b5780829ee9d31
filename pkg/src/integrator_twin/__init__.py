"""Software twin of a difference-integrator system for tokamak magnetic diagnostics.

Signal generators, a behavioral integrator channel with offset and
common-mode drift, reference-shot drift correction, and a TCP controller
that speaks the integrator instruction set.
"""

from .drift import CausalCorrector, DriftFit, DriftMetric, correct, fit_drift_slope, normalized_drift
from .harness import (
    MissingReferenceError,
    ShotConfig,
    ShotReport,
    cmrr_test,
    export_trace,
    fit_reference,
    import_trace,
    run_shot,
)
from .integrator import (
    BEYOND_MEASURABLE,
    IDEAL_CMRR,
    PRESETS,
    IntegratorParams,
    IntegratorState,
    Mode,
    common_mode_drift_rate,
    compute_cmrr,
    get_preset,
    ideal_integrate,
    simulate,
)
from .signals import (
    PulseSpec,
    ResolutionError,
    SignalTrace,
    add_noise,
    gen_probe_signal,
    gen_pulse_signal,
    gen_standard_signal,
)

__version__ = "0.1.0"
