//! Online convolutional dictionary learning.
//!
//! Filters are learned from a stream of images in constant memory: each
//! sample is sparse coded under the current dictionary, its coefficient
//! spectra are folded into a forgetting-weighted per-frequency accumulator,
//! and the dictionary is refit to the accumulated surrogate by projected
//! FISTA in the frequency domain.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbpdn;
pub mod cli;
pub mod dictionary;
pub mod error;
pub mod io;
pub mod learner;
pub mod pipeline;
pub mod synthetic;
pub mod transforms;

pub use cbpdn::{
    cbpdn_objective, cbpdn_solve, soft_threshold, solve_freq_diagonal_system, CbpdnConfig,
    CbpdnSolver, CoefficientMaps, SolveStats,
};
pub use dictionary::{proj_cpn, Dictionary, Projection};
pub use error::{Error, Result};
pub use learner::{
    estimate_step_size, fista_d_update, fista_minimize, forgetting_factor, nesterov_next,
    Accumulator, FistaConfig, FistaStats, ForgettingSchedule, StepPolicy, Surrogate,
};
pub use pipeline::{
    evaluate_dictionary, online_train, online_train_with, preprocess, sample_regions, train_step,
    Evaluation, Preprocess, RegionStrategy, SampleMode, TrainConfig, TrainLogRecord, TrainOutcome,
    TrainState,
};
pub use transforms::{dict_apply, fft2, ifft2, Fft2d, Signal, Spectrum, SpectrumSet};
