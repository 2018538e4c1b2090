"""Output-only system identification of stochastically forced oscillators.

Workflow: simulate or ingest a scalar oscillation record, extract its
Hilbert envelope, estimate finite-time drift/diffusion statistics on an
(amplitude, lag) grid, and fit the three oscillator parameters by matching
those statistics against adjoint Fokker-Planck predictions with a
derivative-free damped least-squares optimizer (Nelder-Mead available as
the baseline).
"""

from .afp import (
    AfpSolution,
    ModelCoeffs,
    PdeConfig,
    model_coeffs,
    model_finite_time_km,
    solve_afp,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateSignalError,
    InitializerError,
    InsufficientDataError,
    JacobianError,
    NoDominantFrequencyError,
    NumericalError,
    OscidError,
    SelectionError,
    SimulationBlowUpError,
    StiffnessError,
)
from .ident import (
    FALLBACK_THETA,
    EvalCounter,
    FitReport,
    LmState,
    NoiseBalanceReport,
    Residual,
    StopCriteria,
    cost,
    extrapolation_guess,
    fd_jacobian,
    lm_solve,
    nelder_mead_solve,
    noise_balance_report,
    residual,
    stop_check,
)
from .km import (
    ConditionalDensity,
    KmEstimates,
    conditional_density,
    finite_time_km,
    read_km_csv,
    write_km_csv,
)
from .pipeline import GridSettings, IdentifyResult, identify, prepare_estimates
from .sde import (
    OscillatorModel,
    SimConfig,
    Theta,
    TimeSeries,
    amplitude_fixed_point,
    read_timeseries_csv,
    simulate_vdp,
    stationary_amplitude_density,
    write_timeseries_csv,
)
from .signals import (
    EnvelopeSeries,
    SampleGrid,
    analytic_envelope,
    autocorrelation,
    band_pass,
    dominant_frequency,
    segment_series,
    select_amplitude_grid,
    select_tau_grid,
)

__version__ = "0.1.0"
