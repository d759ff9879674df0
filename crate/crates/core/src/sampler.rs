//! Random-walk Metropolis over the design posterior `p(x | y*, ε) ∝ L(x)`
//! under a uniform prior box, with proposals resampled until admissible.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{DesignConstraint, DesignVector};
use crate::error::{Error, Result};
use crate::initsearch::constraint_for;
use crate::likelihood::likelihood;
use crate::norm::NormStats;
use crate::response::TargetSpec;
use crate::rng;
use crate::surrogate::{empirical_covariance, EnsembleModel};

/// Chain settings as written in a run configuration. Unset vectors are
/// derived from the training statistics by [`ChainOptions::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainOptions {
    pub burn_in: usize,
    pub n_keep: usize,
    pub psi: Option<f64>,
    /// Initial proposal std as a multiple of the training std.
    pub sigma_q_scale: f64,
    pub sigma_q_init: Option<Vec<f64>>,
    /// Prior box is `[0, x̄ + prior_alpha·σ]` unless given explicitly.
    pub prior_alpha: f64,
    pub prior_low: Option<Vec<f64>>,
    pub prior_high: Option<Vec<f64>>,
    pub max_resample: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            burn_in: 20,
            n_keep: 50,
            psi: None,
            sigma_q_scale: 0.1,
            sigma_q_init: None,
            prior_alpha: 6.0,
            prior_low: None,
            prior_high: None,
            max_resample: 1000,
        }
    }
}

impl ChainOptions {
    pub fn resolve(&self, stats: &NormStats) -> Result<ChainConfig> {
        let d = stats.dim();
        let cfg = ChainConfig {
            burn_in: self.burn_in,
            n_keep: self.n_keep,
            psi: self.psi.unwrap_or_else(|| default_psi(d)),
            sigma_q_init: self
                .sigma_q_init
                .clone()
                .unwrap_or_else(|| stats.std.iter().map(|s| self.sigma_q_scale * s).collect()),
            prior_low: self.prior_low.clone().unwrap_or_else(|| vec![0.0; d]),
            prior_high: self.prior_high.clone().unwrap_or_else(|| {
                stats
                    .mean
                    .iter()
                    .zip(&stats.std)
                    .map(|(m, s)| m + self.prior_alpha * s)
                    .collect()
            }),
            max_resample: self.max_resample,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub n_keep: usize,
    pub psi: f64,
    pub sigma_q_init: Vec<f64>,
    pub prior_low: Vec<f64>,
    pub prior_high: Vec<f64>,
    pub max_resample: usize,
}

/// `2.38/√d`.
pub fn default_psi(d: usize) -> f64 {
    2.38 / (d as f64).sqrt()
}

impl ChainConfig {
    pub fn dim(&self) -> usize {
        self.sigma_q_init.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.prior_low.len() != d || self.prior_high.len() != d {
            return Err(Error::Config("prior bounds and sigma_q_init lengths differ".into()));
        }
        if self.n_keep == 0 || !(self.psi > 0.0) || self.max_resample == 0 {
            return Err(Error::Config("n_keep, psi and max_resample must be positive".into()));
        }
        if self.sigma_q_init.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("sigma_q_init entries must be positive".into()));
        }
        // equal bounds pin a coordinate
        if self.prior_low.iter().zip(&self.prior_high).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("prior_low must not exceed prior_high".into()));
        }
        Ok(())
    }

    pub fn in_prior(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.prior_low.iter().zip(&self.prior_high))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn initial_factor(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma_q_init))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub x: DesignVector,
    pub likelihood: f64,
    pub accepted: bool,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    pub burn_in: Vec<ChainRecord>,
    pub records: Vec<ChainRecord>,
    /// Proposal covariance used after burn-in.
    pub proposal_cov: DMatrix<f64>,
    pub stuck: usize,
}

/// `x' = x_c + ψ L z`, `z ~ N(0, I)`, with `L` a lower factor of `Σ_q`.
/// Redraws until `x'` satisfies `constraint` and the prior box.
pub fn propose(
    x_c: &[f64],
    psi: f64,
    l_q: &DMatrix<f64>,
    cfg: &ChainConfig,
    constraint: &dyn DesignConstraint,
    rng: &mut rng::Rng,
) -> Result<DesignVector> {
    let d = x_c.len();
    if l_q.nrows() != d || l_q.ncols() != d {
        return Err(Error::InvalidDimension {
            expected: d,
            got: l_q.nrows(),
        });
    }
    let mut z = DVector::zeros(d);
    for _ in 0..cfg.max_resample {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let step = l_q * &z;
        let x: Vec<f64> = x_c.iter().zip(step.iter()).map(|(a, s)| a + psi * s).collect();
        if cfg.in_prior(&x) && constraint.is_admissible(&x) {
            return Ok(DesignVector::new(x));
        }
    }
    Err(Error::ProposalStuck(cfg.max_resample))
}

/// Metropolis rule `u < min(1, l_new / l_old)`.
pub fn accept(l_new: f64, l_old: f64, rng: &mut rng::Rng) -> Result<bool> {
    if !(l_old > 0.0) {
        return Err(Error::InvalidChainState);
    }
    let u: f64 = rng.random();
    Ok(u < l_new / l_old)
}

/// Burn-in covariance: half empirical, half its diagonal, plus a fraction
/// of the initial proposal variance.
pub fn adapted_proposal_cov<R: AsRef<[f64]>>(states: &[R], sigma_q_init: &[f64]) -> Result<DMatrix<f64>> {
    let s = empirical_covariance(states)?;
    let d = s.nrows();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            s[(i, i)] + 0.01 * sigma_q_init[i].powi(2)
        } else {
            0.5 * s[(i, j)]
        }
    }))
}

/// Metropolis chain driven by an arbitrary likelihood. `lik(x, seed)` must
/// be nonnegative; `l0` is the likelihood of `x0`.
pub fn run_chain_with<F>(
    x0: &DesignVector,
    l0: f64,
    cfg: &ChainConfig,
    constraint: &dyn DesignConstraint,
    seed: u64,
    mut lik: F,
) -> Result<ChainRun>
where
    F: FnMut(&[f64], u64) -> Result<f64>,
{
    cfg.validate()?;
    if x0.dim() != cfg.dim() {
        return Err(Error::InvalidDimension {
            expected: cfg.dim(),
            got: x0.dim(),
        });
    }
    if !(l0 > 0.0) {
        return Err(Error::InvalidChainState);
    }
    let mut rng = rng::stream(seed, 0);
    let mut l_q = cfg.initial_factor();
    let mut proposal_cov = &l_q * l_q.transpose();
    let mut x = x0.clone();
    let mut l = l0;
    let mut burn_in = Vec::with_capacity(cfg.burn_in);
    let mut records = Vec::with_capacity(cfg.n_keep);
    let mut stuck = 0;

    for iteration in 1..=cfg.burn_in + cfg.n_keep {
        let accepted = match propose(x.as_slice(), cfg.psi, &l_q, cfg, constraint, &mut rng) {
            Ok(candidate) => {
                let l_new = lik(candidate.as_slice(), rng::derive(seed, iteration as u64))?;
                let ok = accept(l_new, l, &mut rng)?;
                if ok {
                    x = candidate;
                    l = l_new;
                }
                ok
            }
            Err(Error::ProposalStuck(_)) => {
                stuck += 1;
                false
            }
            Err(e) => return Err(e),
        };
        let rec = ChainRecord {
            x: x.clone(),
            likelihood: l,
            accepted,
            iteration,
        };
        if iteration <= cfg.burn_in {
            burn_in.push(rec);
            if iteration == cfg.burn_in && cfg.burn_in >= 2 {
                let states: Vec<&[f64]> = burn_in.iter().map(|r: &ChainRecord| r.x.as_slice()).collect();
                let cov = adapted_proposal_cov(&states, &cfg.sigma_q_init)?;
                if let Some(c) = nalgebra::Cholesky::new(cov.clone()) {
                    l_q = c.unpack();
                    proposal_cov = cov;
                }
            }
        } else {
            records.push(rec);
        }
    }
    Ok(ChainRun {
        burn_in,
        records,
        proposal_cov,
        stuck,
    })
}

/// Surrogate-driven chain. `l0` may carry the starting likelihood already
/// computed by the support search; otherwise it is integrated here.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_full(
    model: &EnsembleModel,
    target: &TargetSpec,
    x0: &DesignVector,
    cfg: &ChainConfig,
    n_mc: usize,
    seed: u64,
    l0: Option<f64>,
) -> Result<ChainRun> {
    let l0 = match l0 {
        Some(l) => l,
        None => likelihood(model, x0, target, n_mc, rng::derive(seed, 0))?.p,
    };
    let constraint = constraint_for(model.design_dim());
    run_chain_with(x0, l0, cfg, constraint.as_ref(), seed, |x, s| {
        Ok(likelihood(model, &DesignVector::new(x.to_vec()), target, n_mc, s)?.p)
    })
}

/// Retained post-burn-in records.
pub fn run_chain(
    model: &EnsembleModel,
    target: &TargetSpec,
    x0: &DesignVector,
    cfg: &ChainConfig,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<ChainRecord>> {
    Ok(run_chain_full(model, target, x0, cfg, n_mc, seed, None)?.records)
}

pub fn acceptance_rate(records: &[ChainRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.accepted).count() as f64 / records.len() as f64
}
