//! Simulation and Fourier-domain identification of a driven two-level
//! system under Lindblad decoherence.

pub mod bloch;
pub mod error;
pub mod expm;
pub mod fit;
pub mod measurement;
pub mod spectrum;
pub mod workflow;

pub use bloch::{
    build_generator, closed_evolution_z, decay_difference, propagate, propagate_z, steady_state,
    AffineGenerator, BlochVector, DecoherenceRates, HamiltonianParams,
};
pub use error::{Error, Result};
pub use measurement::{
    derive_seed, expected_aux_series, expected_series, sample_aux_experiment, sample_experiment, AuxInterval, AuxSeries,
    ExperimentConfig, TimeSeries,
};
pub use spectrum::{
    dft, dft_shifted, estimate_eta, find_peak, noise_floor, spectrum_sum, EtaEstimate, NoiseFloor, Peak,
    Spectrum,
};
pub use fit::aux::{fit_aux_decay, AuxConstraints};
pub use fit::lm::{levenberg_marquardt, Bound, LmOptions, LmReport};
pub use fit::{
    confidence_intervals, initial_guess, iterative_refit, model_delta, model_dephasing, model_general,
    FitConstraints, FitResult, ModelKind, ModelParams, ParamName,
};
pub use workflow::{
    characterize, run_replicate, scaling_study, CharacterizeOptions, Characterization, FitReport, PadPolicy,
    ScalingConfig, ScalingStudy, Tracked, Truth,
};
