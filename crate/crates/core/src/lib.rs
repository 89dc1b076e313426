//! Physics-informed neural network solver with Taylor-jet automatic
//! differentiation, an attention-gated network, conflict-resolved gradient
//! combination and the reference solutions used to score it.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod arith;
pub mod error;
pub mod experiment;
pub mod jet;
pub mod metrics;
pub mod network;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod tape;
pub mod training;
pub mod validate;

pub use error::{PinnError, Result};
pub use experiment::{run_experiment, ExperimentConfig, ResolvedExperiment, RunReport, RunStatus};
pub use jet::{Jet, JetShape};
pub use metrics::{relative_l2, relative_linf, GridEvaluator};
pub use network::{init_params, Architecture, NetworkConfig, NetworkParams};
pub use problems::ProblemSpec;
pub use sampling::{sample_problem_points, CollocationSet};
pub use tape::{GradientVector, Tape};
pub use training::{pcgrad_resolve, task_gradients, task_losses, TrainingConfig, TrainingData, Variant};
pub use validate::{validate_suite, ValidateOptions, ValidationReport};
