//! Dynamic ensemble Kalman inversion for streaming, Tikhonov-regularized
//! linear inverse problems, with the Darcy-flow test bed used to exercise it.

pub mod darcy;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod mcmc;
pub mod problem;
pub mod random_field;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod streams;
pub mod update;

pub use diagnostics::{fit_rate, FitWindow, RecordField, RunRecord, TheoryReport};
pub use ensemble::{compute_stats, Ensemble, EnsembleStats};
pub use error::{DekiError, Result};
pub use experiment::{compare_streams, run_experiment, validate_config, ExperimentConfig};
pub use problem::{loss_j, optimal_point, reference_solution, step_size_bound, RegularizedProblem};
pub use runner::{run_deki, run_deki_observed, RunOptions, RunOutcome};
pub use schedule::StepSchedule;
pub use streams::{NoiseModel, Observation, ObservationStream};
pub use update::{deki_step_perturbed, deki_step_unperturbed, sgd_step, Variant};
