//! Run-level JSON configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::GaConfig;
use crate::initsearch::PsoConfig;
use crate::likelihood::LikelihoodConfig;
use crate::oracle::{OracleConfig, ParameterRanges};
use crate::sampler::ChainOptions;
use crate::surrogate::SurrogateConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub oracle: OracleConfig,
    pub ranges: ParameterRanges,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            oracle: OracleConfig::default(),
            ranges: ParameterRanges::default(),
            n_train: 1669,
            n_test: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
    pub design: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            train: 2,
            design: 3,
        }
    }
}

impl Seeds {
    /// Applies `NAME=VALUE` for `NAME` in {data, train, design}.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("seed override must be NAME=VALUE, got {spec:?}")))?;
        let value: u64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("seed value must be an unsigned integer, got {value:?}")))?;
        match name.trim() {
            "data" => self.data = value,
            "train" => self.train = value,
            "design" => self.design = value,
            other => return Err(Error::Config(format!("unknown seed name {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `train.csv`, `test.csv` and `manifest.json`.
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub target: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            model: "model.json".into(),
            target: None,
            out_dir: "out".into(),
        }
    }
}

impl Paths {
    pub fn train_csv(&self) -> PathBuf {
        self.dataset.join("train.csv")
    }

    pub fn test_csv(&self) -> PathBuf {
        self.dataset.join("test.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dataset.join("manifest.json")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.model);
        fix(&mut self.out_dir);
        if let Some(t) = self.target.as_mut() {
            fix(t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_targets: usize,
    pub n_designs: usize,
    /// Tolerance as a fraction of each target's peak.
    pub tolerance_fraction: f64,
    /// Extra tolerance scalings used to populate low-likelihood bins.
    pub sweep_factors: Vec<f64>,
    pub ga: GaConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_targets: 10,
            n_designs: 50,
            tolerance_fraction: 0.1,
            sweep_factors: vec![0.25, 0.5, 0.75, 1.5],
            ga: GaConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub surrogate: SurrogateConfig,
    pub pso: PsoConfig,
    pub chain: ChainOptions,
    pub likelihood: LikelihoodConfig,
    pub seeds: Seeds,
    pub paths: Paths,
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.oracle.validate()?;
        self.data.ranges.validate()?;
        self.surrogate.validate(self.data.ranges.low.len())?;
        self.pso.validate()?;
        self.benchmark.ga.validate()?;
        if self.likelihood.n_mc == 0 {
            return Err(Error::Config("likelihood.n_mc must be positive".into()));
        }
        if self.chain.n_keep == 0 {
            return Err(Error::Config("chain.n_keep must be positive".into()));
        }
        if !(self.benchmark.tolerance_fraction > 0.0) {
            return Err(Error::Config("benchmark.tolerance_fraction must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with paths left out, embedded in
    /// every artifact.
    pub fn hash(&self) -> String {
        let mut bare = self.clone();
        bare.paths = Paths::default();
        let canonical = serde_json::to_string(&bare).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.data.n_train, 1669);
        assert_eq!(cfg.surrogate.members, 30);
        assert_eq!(cfg.chain.burn_in, 20);
        assert_eq!(cfg.chain.n_keep, 50);
    }

    #[test]
    fn round_trip_and_hash_stable() {
        let mut cfg = RunConfig::default();
        cfg.seeds.design = 99;
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"pso": {"swarm": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"data": {"oracle": {"k": 50}, "n_train": 10}}"#).unwrap();
        assert_eq!(cfg.data.oracle.k, 50);
        assert_eq!(cfg.data.n_train, 10);
        assert_eq!(cfg.data.oracle.grid_max, 0.04);
    }

    #[test]
    fn seed_overrides() {
        let mut s = Seeds::default();
        s.apply_override("train=42").unwrap();
        assert_eq!(s.train, 42);
        assert!(s.apply_override("chain=1").is_err());
        assert!(s.apply_override("data").is_err());
        assert!(s.apply_override("data=-1").is_err());
    }

    #[test]
    fn gamma_can_be_pinned() {
        let cfg = RunConfig::from_json(r#"{"surrogate": {"gamma": 0.35}}"#).unwrap();
        assert_eq!(cfg.surrogate.gamma, crate::surrogate::GammaSetting::Fixed(0.35));
    }
}
