//! Support search: constriction-factor PSO on the surrogate objective,
//! stopping at the first global best with nonzero likelihood.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignConstraint, DesignVector, InterfaceLawConstraints};
use crate::error::{Error, Result};
use crate::likelihood::likelihood_of;
use crate::norm::NormStats;
use crate::normal;
use crate::response::TargetSpec;
use crate::rng;
use crate::surrogate::{EnsembleModel, PredictiveDistribution};

/// Resampling attempts before a particle keeps its previous position.
const MAX_REPAIR: usize = 10_000;
const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub w: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub lambda: f64,
    pub t_stabilizer: f64,
    /// Likelihood the incumbent must exceed to end the search; 0 stops at
    /// the first positive value.
    pub support_threshold: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 80,
            c1: 1.49445,
            c2: 1.49445,
            w: 0.729,
            alpha: 4.0,
            max_iters: 300,
            lambda: 1.0,
            t_stabilizer: 1e-3,
            support_threshold: 0.0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.swarm_size >= 2
            && self.w > 0.0
            && self.c1 > 0.0
            && self.c2 > 0.0
            && self.alpha > 0.0
            && self.max_iters >= 1
            && self.lambda >= 0.0
            && self.t_stabilizer > 0.0
            && (0.0..1.0).contains(&self.support_threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PSO configuration: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportResult {
    pub found: bool,
    pub x0: Option<DesignVector>,
    pub likelihood0: Option<f64>,
    /// Seed under which `likelihood0` was integrated.
    pub likelihood_seed: Option<u64>,
    pub iterations_used: usize,
    pub best_objective: f64,
    /// Global-best objective after each iteration.
    pub history: Vec<f64>,
}

/// Box `(max(0, x̄ − ασ), x̄ + ασ)` around the training designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl SearchBounds {
    pub fn from_stats(stats: &NormStats, alpha: f64) -> Self {
        let low = stats
            .mean
            .iter()
            .zip(&stats.std)
            .map(|(m, s)| (m - alpha * s).max(0.0))
            .collect();
        let high = stats
            .mean
            .iter()
            .zip(&stats.std)
            .map(|(m, s)| m + alpha * s)
            .collect();
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
            .collect()
    }

    /// Uniform draw that also satisfies `constraint`.
    pub fn sample_admissible(&self, constraint: &dyn DesignConstraint, rng: &mut rng::Rng) -> Option<Vec<f64>> {
        (0..MAX_REPAIR)
            .map(|_| self.sample(rng))
            .find(|x| constraint.is_admissible(x))
    }
}

/// `d_M = ‖L⁻¹(y* − μ)‖` for `cov = L Lᵀ`.
pub fn mahalanobis(y_star: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let k = cov.nrows();
    if y_star.len() != k || mu.len() != k || cov.ncols() != k {
        return Err(Error::InvalidDimension {
            expected: k,
            got: y_star.len(),
        });
    }
    let l = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::IllConditioned("covariance is not positive definite".into()))?
        .unpack();
    let diff: Vec<f64> = y_star.iter().zip(mu).map(|(a, b)| a - b).collect();
    Ok(forward_norm(&l, &diff))
}

fn forward_norm(l: &DMatrix<f64>, diff: &[f64]) -> f64 {
    let k = diff.len();
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|j| l[(i, j)] * z[j]).sum();
        z[i] = (diff[i] - s) / l[(i, i)];
    }
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Distance penalty plus tolerance coverage:
/// `−log(t + d_M/√k) + (λ/k) Σ_u log(Φ(r_u + τ_u) − Φ(r_u − τ_u))`.
///
/// Only finite-tolerance, unmasked points enter either term; the covariance
/// used is the conditioned one.
pub fn objective_score(target: &TargetSpec, pred: &PredictiveDistribution, lambda: f64, t: f64) -> Result<f64> {
    let k_all = pred.dim();
    if target.len() != k_all {
        return Err(Error::InvalidDimension {
            expected: k_all,
            got: target.len(),
        });
    }
    let idx = target.constrained_points();
    if idx.is_empty() {
        return Err(Error::InvalidInput("target has no finite-tolerance points".into()));
    }
    let k = idx.len() as f64;
    let y = &target.target.values;
    let d_m = if idx.len() == k_all {
        let diff: Vec<f64> = y.iter().zip(&pred.mean).map(|(a, b)| a - b).collect();
        forward_norm(&pred.chol_l, &diff)
    } else {
        let cov = pred.conditioned_cov();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])]);
        let ys: Vec<f64> = idx.iter().map(|&u| y[u]).collect();
        let mus: Vec<f64> = idx.iter().map(|&u| pred.mean[u]).collect();
        mahalanobis(&ys, &mus, &sub)?
    };
    let var = pred.conditioned_variance();
    let coverage: f64 = idx
        .iter()
        .map(|&u| {
            let s = var[u].sqrt();
            let r = (y[u] - pred.mean[u]) / s;
            let tau = target.effective_tolerance(u) / s;
            // Φ(r+τ) − Φ(r−τ) is symmetric in r; evaluate in the lower tail
            let r = r.abs();
            let mass = normal::cdf(tau - r) - normal::cdf(-tau - r);
            mass.max(LOG_FLOOR).ln()
        })
        .sum();
    Ok(-(t + d_m / k.sqrt()).ln() + lambda / k * coverage)
}

/// Generic star-topology swarm. `score` evaluates a batch of positions
/// (higher is better); `check` is called with the incumbent global best
/// after every iteration and stops the search when it returns `Some(p)`
/// with `p > cfg.support_threshold`.
pub fn swarm_search<S, C>(
    bounds: &SearchBounds,
    constraint: &dyn DesignConstraint,
    cfg: &PsoConfig,
    seed: u64,
    initial: &[Vec<f64>],
    score: S,
    mut check: C,
) -> Result<SupportResult>
where
    S: Fn(&[Vec<f64>]) -> Vec<f64>,
    C: FnMut(usize, &[f64]) -> Result<Option<(f64, u64)>>,
{
    cfg.validate()?;
    let d = bounds.dim();
    let mut rng = rng::stream(seed, 0);
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(cfg.swarm_size);
    for x in initial.iter().take(cfg.swarm_size) {
        if x.len() != d {
            return Err(Error::InvalidDimension { expected: d, got: x.len() });
        }
        pos.push(x.clone());
    }
    while pos.len() < cfg.swarm_size {
        let x = bounds.sample_admissible(constraint, &mut rng).ok_or(Error::RangesInfeasible {
            drawn: MAX_REPAIR,
            accepted: 0,
        })?;
        pos.push(x);
    }
    let vmax: Vec<f64> = bounds.low.iter().zip(&bounds.high).map(|(l, h)| h - l).collect();
    let mut vel = vec![vec![0.0; d]; cfg.swarm_size];

    let mut fit = score(&pos);
    let mut pbest = pos.clone();
    let mut pbest_fit = fit.clone();
    let mut g = argmax(&pbest_fit);
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut last_checked: Option<Vec<f64>> = None;

    for iter in 1..=cfg.max_iters {
        if iter > 1 {
            let gbest = pbest[g].clone();
            for i in 0..cfg.swarm_size {
                for j in 0..d {
                    let r1: f64 = rng.random();
                    let r2: f64 = rng.random();
                    let v = cfg.w * vel[i][j]
                        + cfg.c1 * r1 * (pbest[i][j] - pos[i][j])
                        + cfg.c2 * r2 * (gbest[j] - pos[i][j]);
                    vel[i][j] = v.clamp(-vmax[j], vmax[j]);
                    pos[i][j] = (pos[i][j] + vel[i][j]).clamp(bounds.low[j], bounds.high[j]);
                }
                if !constraint.is_admissible(&pos[i]) {
                    if let Some(x) = bounds.sample_admissible(constraint, &mut rng) {
                        pos[i] = x;
                    } else {
                        pos[i] = pbest[i].clone();
                    }
                }
            }
            fit = score(&pos);
            for i in 0..cfg.swarm_size {
                if fit[i] > pbest_fit[i] {
                    pbest_fit[i] = fit[i];
                    pbest[i] = pos[i].clone();
                }
            }
            g = argmax(&pbest_fit);
        }
        history.push(pbest_fit[g]);

        if last_checked.as_deref() != Some(pbest[g].as_slice()) {
            last_checked = Some(pbest[g].clone());
            if let Some((p, lseed)) = check(iter, &pbest[g])? {
                if p > cfg.support_threshold {
                    return Ok(SupportResult {
                        found: true,
                        x0: Some(DesignVector::new(pbest[g].clone())),
                        likelihood0: Some(p),
                        likelihood_seed: Some(lseed),
                        iterations_used: iter,
                        best_objective: pbest_fit[g],
                        history,
                    });
                }
            }
        }
    }
    Ok(SupportResult {
        found: false,
        x0: None,
        likelihood0: None,
        likelihood_seed: None,
        iterations_used: cfg.max_iters,
        best_objective: pbest_fit[g],
        history,
    })
}

fn argmax(v: &[f64]) -> usize {
    // first index wins ties, NaN never wins
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Objective for a batch of designs; failures score `−∞`.
pub fn score_batch(model: &EnsembleModel, target: &TargetSpec, cfg: &PsoConfig, xs: &[Vec<f64>]) -> Vec<f64> {
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let Ok(preds) = model.predict_batch(&refs) else {
        return vec![f64::NEG_INFINITY; xs.len()];
    };
    preds
        .into_par_iter()
        .map(|(mean, std)| {
            model
                .distribution_from(mean, std)
                .and_then(|pred| objective_score(target, &pred, cfg.lambda, cfg.t_stabilizer))
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

/// Seed for the likelihood check after iteration `iter`.
pub fn check_seed(seed: u64, iter: usize) -> u64 {
    rng::derive(rng::derive(seed, 1), iter as u64)
}

pub fn pso_search(
    model: &EnsembleModel,
    target: &TargetSpec,
    stats: &NormStats,
    cfg: &PsoConfig,
    n_mc: usize,
    seed: u64,
) -> Result<SupportResult> {
    pso_search_seeded(model, target, stats, cfg, n_mc, seed, &[])
}

/// As [`pso_search`], with some particles placed at given positions.
pub fn pso_search_seeded(
    model: &EnsembleModel,
    target: &TargetSpec,
    stats: &NormStats,
    cfg: &PsoConfig,
    n_mc: usize,
    seed: u64,
    initial: &[Vec<f64>],
) -> Result<SupportResult> {
    if target.len() != model.response_dim() {
        return Err(Error::InvalidDimension {
            expected: model.response_dim(),
            got: target.len(),
        });
    }
    if !target.is_well_posed() {
        return Err(Error::InvalidInput("target has no finite-tolerance points".into()));
    }
    let bounds = SearchBounds::from_stats(stats, cfg.alpha);
    let constraint = constraint_for(model.design_dim());
    swarm_search(
        &bounds,
        constraint.as_ref(),
        cfg,
        seed,
        initial,
        |xs| score_batch(model, target, cfg, xs),
        |iter, x| {
            let lseed = check_seed(seed, iter);
            let pred = model.predict_distribution(&DesignVector::new(x.to_vec()))?;
            let r = likelihood_of(&pred, target, n_mc, lseed)?;
            Ok(Some((r.p, lseed)))
        },
    )
}

/// Interface-law constraints for the reference dimension, nonnegativity
/// otherwise.
pub fn constraint_for(d: usize) -> Box<dyn DesignConstraint> {
    if d == crate::design::INTERFACE_LAW_DIM {
        Box::new(InterfaceLawConstraints)
    } else {
        Box::new(crate::design::NonNegative(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::NonNegative;
    use crate::response::{linspace, ResponseCurve, Tolerance};
    use nalgebra::DVector;

    const Q975: f64 = 1.959963984540054;

    fn diag_pred(mean: Vec<f64>, sd: f64) -> PredictiveDistribution {
        let k = mean.len();
        let cov = DMatrix::from_diagonal(&DVector::from_element(k, sd * sd));
        PredictiveDistribution {
            mean,
            std: vec![sd; k],
            chol_l: DMatrix::from_diagonal(&DVector::from_element(k, sd)),
            cov,
            jitter: 0.0,
        }
    }

    fn target(values: Vec<f64>, eps: f64) -> TargetSpec {
        let k = values.len();
        let curve = ResponseCurve::new(linspace(0.0, 1.0, k), values).unwrap();
        TargetSpec::new(curve, vec![Tolerance(eps); k], None).unwrap()
    }

    #[test]
    fn exact_mean_without_coverage() {
        let pred = diag_pred(vec![1.0, 2.0, 3.0], 1.0);
        let s = objective_score(&target(vec![1.0, 2.0, 3.0], 1.0), &pred, 0.0, 1e-3).unwrap();
        assert!((s + (1e-3f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_95_coverage() {
        let pred = diag_pred(vec![0.0; 4], 2.0);
        let t = target(vec![0.0; 4], 2.0 * Q975);
        let s = objective_score(&t, &pred, 1.0, 1e-3).unwrap();
        let second = s + (1e-3f64).ln();
        assert!((second - 0.95f64.ln()).abs() < 1e-12, "{second}");
    }

    #[test]
    fn masked_points_are_ignored() {
        let pred = diag_pred(vec![0.0, 50.0], 1.0);
        let curve = ResponseCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let t = TargetSpec::new(curve, vec![Tolerance(1.0); 2], Some(vec![false, true])).unwrap();
        let s = objective_score(&t, &pred, 1.0, 1e-3).unwrap();
        let single = objective_score(&target(vec![0.0], 1.0), &diag_pred(vec![0.0], 1.0), 1.0, 1e-3).unwrap();
        assert!((s - single).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_euclidean_case() {
        let d = mahalanobis(&[3.0, 4.0], &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
        assert_eq!(mahalanobis(&[1.0, 2.0], &[1.0, 2.0], &DMatrix::identity(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_matches_explicit_inverse() {
        let mut r = rng::stream(11, 0);
        for k in 1..=5 {
            let g = DMatrix::from_fn(k, k, |_, _| r.random::<f64>() - 0.5);
            let cov = &g * g.transpose() + DMatrix::identity(k, k) * 0.1;
            let diff: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let dv = DVector::from_column_slice(&diff);
            let inv = cov.clone().try_inverse().unwrap();
            let oracle = (dv.transpose() * inv * &dv)[(0, 0)].sqrt();
            let got = mahalanobis(&diff, &vec![0.0; k], &cov).unwrap();
            assert!((got - oracle).abs() < 1e-9 * oracle.max(1.0));
        }
    }

    #[test]
    fn nonpositive_covariance_is_ill_conditioned() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            mahalanobis(&[1.0, 0.0], &[0.0, 0.0], &cov),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn score_decreases_along_rays() {
        let mut r = rng::stream(5, 0);
        let k = 6;
        let y: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 10.0).collect();
        let dir: Vec<f64> = (0..k).map(|_| r.random::<f64>() - 0.5).collect();
        let t = target(y.clone(), 0.5);
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let h = step as f64 * 0.25;
            let mean: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let s = objective_score(&t, &diag_pred(mean, 0.7), 1.0, 1e-3).unwrap();
            assert!(s < prev || step == 0);
            prev = s;
        }
    }

    #[test]
    fn lambda_zero_orders_like_distance() {
        let mut r = rng::stream(9, 0);
        let t = target(vec![0.0; 3], 1.0);
        let mut pairs = Vec::new();
        for _ in 0..30 {
            let mean: Vec<f64> = (0..3).map(|_| r.random::<f64>() * 6.0 - 3.0).collect();
            let pred = diag_pred(mean.clone(), 1.3);
            let s = objective_score(&t, &pred, 0.0, 1e-3).unwrap();
            let d = mahalanobis(&[0.0; 3], &mean, &pred.cov).unwrap();
            pairs.push((s, d));
        }
        for a in &pairs {
            for b in &pairs {
                if a.1 < b.1 {
                    assert!(a.0 > b.0);
                }
            }
        }
    }

    fn sphere_bounds() -> SearchBounds {
        SearchBounds {
            low: vec![0.0; 3],
            high: vec![4.0; 3],
        }
    }

    fn neg_sphere(xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter()
            .map(|x| -x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>())
            .collect()
    }

    #[test]
    fn global_best_nondecreasing_and_converges() {
        let cfg = PsoConfig {
            swarm_size: 20,
            max_iters: 100,
            ..PsoConfig::default()
        };
        let r = swarm_search(&sphere_bounds(), &NonNegative(3), &cfg, 3, &[], neg_sphere, |_, _| Ok(None)).unwrap();
        assert!(!r.found);
        assert_eq!(r.history.len(), 100);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.best_objective > -1e-6, "{}", r.best_objective);
    }

    #[test]
    fn evaluated_particles_respect_bounds_and_constraints() {
        struct SumBelow;
        impl DesignConstraint for SumBelow {
            fn dim(&self) -> usize {
                3
            }
            fn is_admissible(&self, x: &[f64]) -> bool {
                x.iter().sum::<f64>() <= 5.0
            }
        }
        let bounds = sphere_bounds();
        let cfg = PsoConfig {
            swarm_size: 10,
            max_iters: 30,
            ..PsoConfig::default()
        };
        let seen = std::sync::Mutex::new(Vec::new());
        swarm_search(
            &bounds,
            &SumBelow,
            &cfg,
            4,
            &[],
            |xs| {
                seen.lock().unwrap().extend(xs.iter().cloned());
                neg_sphere(xs)
            },
            |_, _| Ok(None),
        )
        .unwrap();
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen.len(), 300);
        assert!(seen.iter().all(|x| bounds.contains(x) && SumBelow.is_admissible(x)));
    }

    #[test]
    fn seeded_optimum_stops_at_first_iteration() {
        let cfg = PsoConfig {
            swarm_size: 8,
            ..PsoConfig::default()
        };
        let r = swarm_search(
            &sphere_bounds(),
            &NonNegative(3),
            &cfg,
            1,
            &[vec![1.0; 3]],
            neg_sphere,
            |_, x| Ok(Some((if x == [1.0; 3] { 0.4 } else { 0.0 }, 0))),
        )
        .unwrap();
        assert!(r.found);
        assert_eq!(r.iterations_used, 1);
        assert_eq!(r.x0.unwrap().0, vec![1.0; 3]);
        assert_eq!(r.likelihood0, Some(0.4));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = PsoConfig {
            swarm_size: 12,
            max_iters: 25,
            ..PsoConfig::default()
        };
        let run = || swarm_search(&sphere_bounds(), &NonNegative(3), &cfg, 77, &[], neg_sphere, |_, _| Ok(None)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn threshold_defers_the_stop() {
        let run = |threshold| {
            let cfg = PsoConfig {
                swarm_size: 6,
                max_iters: 5,
                support_threshold: threshold,
                ..PsoConfig::default()
            };
            swarm_search(&sphere_bounds(), &NonNegative(3), &cfg, 3, &[], neg_sphere, |_, _| Ok(Some((0.05, 0))))
                .unwrap()
        };
        assert!(run(0.0).found);
        let r = run(0.1);
        assert!(!r.found);
        assert_eq!(r.iterations_used, 5);
    }

    #[test]
    fn bounds_clip_at_zero() {
        let stats = NormStats::new(vec![1.0, 10.0], vec![1.0, 1.0]).unwrap();
        let b = SearchBounds::from_stats(&stats, 4.0);
        assert_eq!(b.low, vec![0.0, 6.0]);
        assert_eq!(b.high, vec![5.0, 14.0]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PsoConfig {
            swarm_size: 1,
            ..PsoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
