//! Probabilistic forward model.
//!
//! A bootstrap ensemble of ridge regressors over random cosine features
//! supplies a pointwise predictive mean and spread; a radial kernel over the
//! response grid then grafts a full covariance onto the pointwise spread.

pub mod covariance;
pub mod features;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::design::DesignVector;
use crate::error::{Error, Result};
use crate::norm::NormStats;
use crate::rng;

pub use covariance::{
    condition_jitter, condition_jitter_with, default_gamma_grid, empirical_covariance, fit_gamma,
    graft_covariance, kernel_matrix, Conditioned, JitterLadder, DEFAULT_TARGET_CONDITION,
};
pub use features::FeatureMap;

pub const MODEL_FORMAT: &str = "guide-ensemble/v1";

/// How the kernel decay rate is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaSetting {
    /// Grid-search against the training-response covariance.
    Fit,
    Fixed(f64),
}

impl Serialize for GammaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaSetting::Fit => s.serialize_str("fit"),
            GammaSetting::Fixed(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) if g > 0.0 => Ok(GammaSetting::Fixed(g)),
            Raw::Num(g) => Err(de::Error::custom(format!("gamma must be positive, got {g}"))),
            Raw::Str(s) if s == "fit" => Ok(GammaSetting::Fit),
            Raw::Str(s) => Err(de::Error::custom(format!("expected \"fit\" or a number, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Ensemble size T.
    pub members: usize,
    /// Total feature count per member (bias + linear + random cosine).
    pub feature_dim: usize,
    pub ridge: f64,
    /// Lengthscale of the random cosine features in normalized input units.
    pub lengthscale: f64,
    pub gamma: GammaSetting,
    /// Floor on the predicted pointwise standard deviation (MPa).
    pub sigma_floor: f64,
    /// Multiplier from grid units to kernel distance units (100 = percent strain).
    pub kernel_scale: f64,
    pub target_condition: f64,
    pub jitter_base: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            members: 30,
            feature_dim: 512,
            ridge: 1e-3,
            lengthscale: 3.0,
            gamma: GammaSetting::Fit,
            sigma_floor: 1e-3,
            kernel_scale: 100.0,
            target_condition: DEFAULT_TARGET_CONDITION,
            jitter_base: 1e-9,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.members < 2 {
            return Err(Error::Config(format!(
                "ensemble needs at least 2 members, got {}",
                self.members
            )));
        }
        if self.feature_dim <= 1 + input_dim {
            return Err(Error::Config(format!(
                "feature_dim {} leaves no random features for input dimension {input_dim}",
                self.feature_dim
            )));
        }
        for (name, v) in [
            ("ridge", self.ridge),
            ("lengthscale", self.lengthscale),
            ("sigma_floor", self.sigma_floor),
            ("kernel_scale", self.kernel_scale),
            ("jitter_base", self.jitter_base),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.target_condition > 1.0) {
            return Err(Error::Config("target_condition must exceed 1".into()));
        }
        Ok(())
    }
}

/// One ridge regressor: its feature draw and a `D × k` weight matrix.
#[derive(Clone, Debug)]
pub struct Member {
    pub features: FeatureMap,
    pub bootstrap_seed: u64,
    pub weights: DMatrix<f64>,
}

impl Member {
    fn predict(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        self.features.transform(inputs) * &self.weights
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    pub members: Vec<Member>,
    pub norm: NormStats,
    pub grid: Vec<f64>,
    pub kernel_scale: f64,
    pub gamma: f64,
    pub sigma_floor: f64,
    pub target_condition: f64,
    pub jitter: JitterLadder,
    kernel: DMatrix<f64>,
}

/// Mean, marginal spread and grafted covariance of the predicted response.
#[derive(Clone, Debug)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Grafted covariance before jitter; `diag = std²`.
    pub cov: DMatrix<f64>,
    /// Jitter η added to obtain the factorized matrix.
    pub jitter: f64,
    /// Lower Cholesky factor of `cov + ηI`.
    pub chol_l: DMatrix<f64>,
}

impl PredictiveDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `cov + ηI`.
    pub fn conditioned_cov(&self) -> DMatrix<f64> {
        let mut c = self.cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += self.jitter;
        }
        c
    }

    /// Diagonal of `cov + ηI`.
    pub fn conditioned_variance(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.cov[(i, i)] + self.jitter)
            .collect()
    }
}

fn solve_ridge(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let chol = nalgebra::Cholesky::new(a)?;
    let w = chol.solve(rhs);
    w.iter().all(|v| v.is_finite()).then_some(w)
}

fn fit_member(
    inputs: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    cfg: &SurrogateConfig,
    feature_seed: u64,
    bootstrap_seed: u64,
) -> Result<Member> {
    let h = inputs.nrows();
    let d = inputs.ncols();
    let features = FeatureMap::new(feature_seed, d, cfg.feature_dim - 1 - d, cfg.lengthscale);
    let mut rng = rng::stream(bootstrap_seed, 0);
    let rows: Vec<usize> = (0..h).map(|_| rng.random_range(0..h)).collect();
    let x = inputs.select_rows(&rows);
    let y = responses.select_rows(&rows);
    let phi = features.transform(&x);
    let gram = phi.tr_mul(&phi);
    let rhs = phi.tr_mul(&y);
    let weights = solve_ridge(&gram, &rhs, cfg.ridge)
        .or_else(|| solve_ridge(&gram, &rhs, cfg.ridge * 100.0))
        .ok_or_else(|| {
            Error::TrainingFailed(format!(
                "normal equations singular for member with feature seed {feature_seed}"
            ))
        })?;
    Ok(Member {
        features,
        bootstrap_seed,
        weights,
    })
}

fn normalized_inputs(norm: &NormStats, xs: &[&[f64]]) -> Result<DMatrix<f64>> {
    let d = norm.dim();
    let mut m = DMatrix::zeros(xs.len(), d);
    for (i, x) in xs.iter().enumerate() {
        let z = norm.normalize(x)?;
        for j in 0..d {
            m[(i, j)] = z[j];
        }
    }
    Ok(m)
}

/// Fits `cfg.members` regressors, each on its own bootstrap resample with its
/// own feature draw, then chooses γ per `cfg.gamma`.
pub fn train(dataset: &Dataset, cfg: &SurrogateConfig, seed: u64) -> Result<EnsembleModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    cfg.validate(dataset.design_dim())?;
    let rows: Vec<&[f64]> = dataset.designs.iter().map(|x| x.as_slice()).collect();
    let inputs = normalized_inputs(&dataset.norm, &rows)?;
    let k = dataset.response_dim();
    let responses = DMatrix::from_fn(dataset.len(), k, |i, u| dataset.responses[i][u]);
    let members = (0..cfg.members as u64)
        .into_par_iter()
        .map(|t| {
            fit_member(
                &inputs,
                &responses,
                cfg,
                rng::derive(seed, 2 * t),
                rng::derive(seed, 2 * t + 1),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let kernel_coords: Vec<f64> = dataset.grid.iter().map(|s| s * cfg.kernel_scale).collect();
    let gamma = match cfg.gamma {
        GammaSetting::Fixed(g) => g,
        GammaSetting::Fit => {
            if dataset.len() < 2 {
                return Err(Error::TrainingFailed(
                    "fitting gamma needs at least two training rows".into(),
                ));
            }
            let train_cov = empirical_covariance(&dataset.responses)?;
            let sigma_bar: Vec<f64> = train_cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
            fit_gamma(&train_cov, &sigma_bar, &kernel_coords, &default_gamma_grid())?
        }
    };
    Ok(EnsembleModel::from_members(
        members,
        dataset.norm.clone(),
        dataset.grid.clone(),
        cfg,
        gamma,
    ))
}

impl EnsembleModel {
    pub fn from_members(
        members: Vec<Member>,
        norm: NormStats,
        grid: Vec<f64>,
        cfg: &SurrogateConfig,
        gamma: f64,
    ) -> Self {
        let coords: Vec<f64> = grid.iter().map(|s| s * cfg.kernel_scale).collect();
        let kernel = kernel_matrix(&coords, gamma);
        Self {
            members,
            norm,
            grid,
            kernel_scale: cfg.kernel_scale,
            gamma,
            sigma_floor: cfg.sigma_floor,
            target_condition: cfg.target_condition,
            jitter: JitterLadder {
                base: cfg.jitter_base,
                ..JitterLadder::default()
            },
            kernel,
        }
    }

    pub fn response_dim(&self) -> usize {
        self.grid.len()
    }

    pub fn design_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn kernel_coords(&self) -> Vec<f64> {
        self.grid.iter().map(|s| s * self.kernel_scale).collect()
    }

    /// Per-member predictions, one `n × k` matrix per member.
    pub fn member_predictions(&self, xs: &[&[f64]]) -> Result<Vec<DMatrix<f64>>> {
        let inputs = normalized_inputs(&self.norm, xs)?;
        Ok(self.members.par_iter().map(|m| m.predict(&inputs)).collect())
    }

    /// Ensemble mean and floored population standard deviation for a batch.
    pub fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let preds = self.member_predictions(xs)?;
        let t = preds.len() as f64;
        let k = self.response_dim();
        Ok((0..xs.len())
            .map(|i| {
                let mean: Vec<f64> = (0..k)
                    .map(|u| preds.iter().map(|p| p[(i, u)]).sum::<f64>() / t)
                    .collect();
                let std: Vec<f64> = (0..k)
                    .map(|u| {
                        let var = preds.iter().map(|p| (p[(i, u)] - mean[u]).powi(2)).sum::<f64>() / t;
                        var.sqrt().max(self.sigma_floor)
                    })
                    .collect();
                (mean, std)
            })
            .collect())
    }

    /// Predictive means only (no spread), for a batch.
    pub fn predict_means(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let preds = self.member_predictions(xs)?;
        let t = preds.len() as f64;
        let k = self.response_dim();
        Ok((0..xs.len())
            .map(|i| {
                (0..k)
                    .map(|u| preds.iter().map(|p| p[(i, u)]).sum::<f64>() / t)
                    .collect()
            })
            .collect())
    }

    pub fn predict_mean_std(&self, x: &DesignVector) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut out = self.predict_batch(&[x.as_slice()])?;
        Ok(out.remove(0))
    }

    /// Conditions a grafted covariance built from `std` with this model's
    /// kernel and jitter ladder.
    pub fn distribution_from(&self, mean: Vec<f64>, std: Vec<f64>) -> Result<PredictiveDistribution> {
        let cov = covariance::scale_kernel(&self.kernel, &std);
        let c = condition_jitter_with(&cov, self.target_condition, self.jitter)?;
        Ok(PredictiveDistribution {
            mean,
            std,
            cov,
            jitter: c.eta,
            chol_l: c.chol_l,
        })
    }

    pub fn predict_distribution(&self, x: &DesignVector) -> Result<PredictiveDistribution> {
        let (mean, std) = self.predict_mean_std(x)?;
        self.distribution_from(mean, std)
    }

    /// Root-mean-square error of the predictive mean over a dataset.
    pub fn rmse(&self, data: &Dataset) -> Result<f64> {
        let rows: Vec<&[f64]> = data.designs.iter().map(|x| x.as_slice()).collect();
        let mut sq = 0.0;
        let mut n = 0usize;
        for chunk in rows.chunks(256).zip(data.responses.chunks(256)) {
            let means = self.predict_means(chunk.0)?;
            for (m, y) in means.iter().zip(chunk.1) {
                for (a, b) in m.iter().zip(y) {
                    sq += (a - b).powi(2);
                    n += 1;
                }
            }
        }
        Ok((sq / n.max(1) as f64).sqrt())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&ModelFile::from(self))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_model()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct MemberFile {
    feature_seed: u64,
    bootstrap_seed: u64,
    n_random: usize,
    lengthscale: f64,
    rows: usize,
    cols: usize,
    /// Column-major.
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    norm: NormStats,
    grid: Vec<f64>,
    kernel_scale: f64,
    gamma: f64,
    sigma_floor: f64,
    target_condition: f64,
    jitter_base: f64,
    jitter_rungs: usize,
    members: Vec<MemberFile>,
}

impl From<&EnsembleModel> for ModelFile {
    fn from(m: &EnsembleModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            norm: m.norm.clone(),
            grid: m.grid.clone(),
            kernel_scale: m.kernel_scale,
            gamma: m.gamma,
            sigma_floor: m.sigma_floor,
            target_condition: m.target_condition,
            jitter_base: m.jitter.base,
            jitter_rungs: m.jitter.rungs,
            members: m
                .members
                .iter()
                .map(|mem| MemberFile {
                    feature_seed: mem.features.seed,
                    bootstrap_seed: mem.bootstrap_seed,
                    n_random: mem.features.n_random,
                    lengthscale: mem.features.lengthscale,
                    rows: mem.weights.nrows(),
                    cols: mem.weights.ncols(),
                    weights: mem.weights.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<EnsembleModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                self.format
            )));
        }
        let d = self.norm.dim();
        let k = self.grid.len();
        let members = self
            .members
            .into_iter()
            .map(|m| {
                let features = FeatureMap::new(m.feature_seed, d, m.n_random, m.lengthscale);
                if m.rows != features.dim() || m.cols != k || m.weights.len() != m.rows * m.cols {
                    return Err(Error::InvalidInput("member weight shape mismatch".into()));
                }
                Ok(Member {
                    features,
                    bootstrap_seed: m.bootstrap_seed,
                    weights: DMatrix::from_column_slice(m.rows, m.cols, &m.weights),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = SurrogateConfig {
            sigma_floor: self.sigma_floor,
            kernel_scale: self.kernel_scale,
            target_condition: self.target_condition,
            jitter_base: self.jitter_base,
            ..SurrogateConfig::default()
        };
        let mut model = EnsembleModel::from_members(members, self.norm, self.grid, &cfg, self.gamma);
        model.jitter.rungs = self.jitter_rungs;
        Ok(model)
    }
}
