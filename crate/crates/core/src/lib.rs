//! Replicability analysis of paired p-values from two studies under a
//! four-state hidden Markov model.
//!
//! Each feature carries a hidden pair of signal indicators, one per study,
//! and the pairs follow a Markov chain along the feature order. The model
//! is fitted by EM with monotone nonparametric alternative densities, and
//! features are declared replicable by a step-up rule on the posterior
//! probability of the composite null.

pub mod baselines;
pub mod em;
pub mod error;
pub mod forward_backward;
pub mod io;
pub mod isotonic;
pub mod model;
pub mod sim;
pub mod testing;

pub use baselines::{BaselineMethod, BaselineOutcome};
pub use em::{fit, EmConfig, EmFit, Initializer};
pub use error::{Error, Result};
pub use forward_backward::{compute_rlis, run_forward_backward, PosteriorTables};
pub use model::{
    stationary_from_transition, validate_params, HmmParams, PairedPValues, StateCode, StationaryDist, StepDensity,
    TransitionMatrix, Violation,
};
pub use sim::{evaluate, EvalReport, Method, SimConfig};
pub use testing::{oracle_test, step_up, test_replicability, TestOutcome, TestSummary};
