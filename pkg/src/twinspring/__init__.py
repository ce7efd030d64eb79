"""Two-mode parametric squeezing of mechanical oscillators coupled through
a modulated optical spring: closed forms, simulation, and estimators."""

from .analytic import (
    AboveThresholdError,
    CovarianceState,
    QuadratureCombination,
    ZeroFreqSpectra,
    covariance_trajectory,
    identical_summary,
    min_quadrature_from_cov,
    phase_noise_corrected,
    propagate_covariance,
    stationary_covariance,
    stationary_max,
    stationary_min,
    stationary_spectrum,
    stationary_zero_freq,
)
from .estimate import Covariance4, SpectrumEstimate, ensemble_covariance, global_max, global_min, psd_welch
from .model import (
    CoupledPair,
    OpticalSpring,
    OpticalSpringConfig,
    OscillatorMode,
    build_pair,
    effective_temperature,
    force_psd,
    identical_pair,
    optical_spring,
    reference_modes,
    threshold,
)
from .sim import (
    BurstEnsemble,
    BurstSchedule,
    DivergenceError,
    apply_phase_jitter,
    fullband_run,
    lockin_demodulate,
    run_burst_ensemble,
    run_stationary_records,
)

__version__ = "0.1.0"
