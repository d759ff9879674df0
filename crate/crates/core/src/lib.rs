//! Likelihood-guided inverse design of functional responses.
//!
//! A bootstrap ensemble surrogate predicts a response curve with grafted
//! covariance; the probability that the response lands inside a tolerance
//! box around a target serves as a likelihood. A particle swarm locates a
//! design with nonzero likelihood (or refuses), and a Metropolis chain then
//! samples the design posterior from there.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod initsearch;
pub mod io;
pub mod likelihood;
pub mod norm;
pub mod normal;
pub mod oracle;
pub mod pipeline;
pub mod response;
pub mod rng;
pub mod sampler;
pub mod surrogate;

pub use config::RunConfig;
pub use dataset::{Dataset, Manifest};
pub use design::{check_design_constraints, DesignConstraint, DesignVector, InterfaceLawConstraints, NonNegative};
pub use error::{Error, Result};
pub use evaluation::{GaConfig, MetricsReport};
pub use initsearch::{mahalanobis, objective_score, pso_search, PsoConfig, SupportResult};
pub use likelihood::{likelihood, mvn_box_probability, nested_bounds, BoxProbabilityResult};
pub use norm::{zscore_normalize, NormStats};
pub use oracle::{check_feasible, generate_dataset, toy_response, OracleConfig, ParameterRanges};
pub use pipeline::{benchmark, benchmark_detailed, design_for_target, BenchmarkReport, DesignOutcome};
pub use response::{tolerance_bounds, ResponseCurve, TargetSpec, Tolerance};
pub use sampler::{accept, propose, run_chain, ChainConfig, ChainOptions, ChainRecord};
pub use surrogate::{
    condition_jitter, fit_gamma, graft_covariance, train, EnsembleModel, GammaSetting, PredictiveDistribution,
    SurrogateConfig,
};
