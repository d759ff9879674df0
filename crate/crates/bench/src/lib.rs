//! Shared fixtures for the benchmarks.

use guide_core::oracle::generate_dataset;
use guide_core::response::TargetSpec;
use guide_core::{train, Dataset, EnsembleModel, RunConfig, SurrogateConfig};

/// A small trained model plus its data, sized so setup stays under a few
/// seconds.
pub struct Fixture {
    pub data: Dataset,
    pub model: EnsembleModel,
    pub config: RunConfig,
}

impl Fixture {
    pub fn new(n_train: usize, members: usize) -> Self {
        let config = RunConfig::default();
        let data = generate_dataset(n_train, &config.data.ranges, &config.data.oracle, 11).expect("dataset");
        let surrogate = SurrogateConfig {
            members,
            ..config.surrogate.clone()
        };
        let model = train(&data, &surrogate, 12).expect("training");
        Self { data, model, config }
    }

    /// Row `i` of the data as a target with tolerance `fraction × peak`.
    pub fn target(&self, i: usize, fraction: f64) -> TargetSpec {
        let curve = self.data.curve(i);
        let eps = fraction * curve.peak();
        TargetSpec::uniform(curve, eps).expect("target")
    }
}
