//! GA baseline and the metrics used to compare design sets.

pub mod ga;
pub mod metrics;

pub use ga::{ga_design, ga_design_seeded, mse_fitness, GaConfig, GaResult};
pub use metrics::{
    binned_correlation, evaluate_designs, feasibility_flags, feasibility_rate, knn_novelty, likelihood_bins,
    maxmin_subset, median_bandwidth, pearson, vendi_from_kernel, vendi_score, LikelihoodBin, MetricsReport,
    DEFAULT_KNN,
};
