//! Least-squares disclosure attacks on threshold and binomial pool mixes.
//!
//! The crate simulates mixes fed by a synthetic (or ingested) user
//! population, recovers the users' sender profiles from the per-round
//! input/output counts an observer sees, and compares the achieved error with
//! closed-form predictions.
//!
//! ```
//! use lsda_core::{gen_population, lsda, mse_transition, simulate_trace, FreqDist, MixConfig, ProfileDist};
//!
//! let pop = gen_population(20, 5, ProfileDist::Zipf, FreqDist::Uniform, 1)?;
//! let trace = simulate_trace(&pop, &MixConfig::threshold(5), 2_000, 2)?;
//! let est = lsda(&trace)?;
//! assert!(mse_transition(&pop, &est)? < 1e-2);
//! # Ok::<(), lsda_core::Error>(())
//! ```

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod mixsim;
pub mod observe;
pub mod population;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};
pub use estimators::{
    clsda, lsda, lsda_with, project_simplex, rls, sda, zero_clip, Init, Method, ProfileEstimate,
    Regression, RlsState, SolverOptions,
};
pub use experiment::{run_experiment, ExperimentReport, ExperimentSpec};
pub use ingest::{build_rounds, load_events, EventLog};
pub use metrics::{mse_profile, mse_transition, MseReport};
pub use mixsim::{
    delay_stats, simulate_trace, simulate_trace_with, Counts, MixConfig, MixKind, SimOptions, Trace,
};
pub use observe::{convolution_matrix, expected_departures, ExpectedDepartures};
pub use population::{
    gen_population, uniformity_stats, FreqDist, ProfileDist, UniformityStats, UserPopulation,
};
pub use theory::{
    input_autocorr_inverse, predict_mse_pool, predict_mse_threshold, MsePrediction, ProfileMse,
    Regime,
};
