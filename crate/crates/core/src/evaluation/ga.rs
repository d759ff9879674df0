//! Surrogate-assisted genetic algorithm baseline: minimizes the squared
//! error between the predictive mean and the target.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::{DesignConstraint, DesignVector};
use crate::error::{Error, Result};
use crate::initsearch::{constraint_for, SearchBounds};
use crate::norm::NormStats;
use crate::response::TargetSpec;
use crate::rng;
use crate::surrogate::EnsembleModel;

const GENE_REPAIR_TRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation std as a fraction of the training std per parameter.
    pub mutation_scale: f64,
    pub elitism: usize,
    /// Search box half-width in training stds, as for the swarm.
    pub alpha: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_scale: 0.1,
            elitism: 2,
            alpha: 4.0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.population < 2
            || !prob(self.crossover_rate)
            || !prob(self.mutation_rate)
            || !(self.mutation_scale >= 0.0)
            || self.elitism > self.population
            || !(self.alpha > 0.0)
        {
            return Err(Error::Config(format!("invalid GA configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub designs: Vec<DesignVector>,
    pub fitness: Vec<f64>,
    /// Best fitness after each evaluated generation, starting with the
    /// initial population.
    pub best_per_generation: Vec<f64>,
}

/// Mean squared error over finite-tolerance, unmasked points.
pub fn mse_fitness(mean: &[f64], target: &TargetSpec) -> f64 {
    let idx = target.constrained_points();
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter()
        .map(|&u| (mean[u] - target.target.values[u]).powi(2))
        .sum::<f64>()
        / idx.len() as f64
}

struct Evaluator<'a> {
    model: &'a EnsembleModel,
    target: &'a TargetSpec,
}

impl Evaluator<'_> {
    fn eval(&self, pop: &[Vec<f64>]) -> Result<Vec<f64>> {
        let refs: Vec<&[f64]> = pop.iter().map(|x| x.as_slice()).collect();
        let means = self.model.predict_means(&refs)?;
        Ok(means.iter().map(|m| mse_fitness(m, self.target)).collect())
    }
}

fn tournament(fit: &[f64], rng: &mut rng::Rng) -> usize {
    let a = rng.random_range(0..fit.len());
    let b = rng.random_range(0..fit.len());
    if fit[b] < fit[a] {
        b
    } else {
        a
    }
}

fn repair(
    child: &mut Vec<f64>,
    fallback: &[f64],
    bounds: &SearchBounds,
    constraint: &dyn DesignConstraint,
    rng: &mut rng::Rng,
) {
    let d = child.len();
    for _ in 0..GENE_REPAIR_TRIES {
        if constraint.is_admissible(child) {
            return;
        }
        let j = rng.random_range(0..d);
        child[j] = if bounds.high[j] > bounds.low[j] {
            rng.random_range(bounds.low[j]..=bounds.high[j])
        } else {
            bounds.low[j]
        };
    }
    if !constraint.is_admissible(child) {
        *child = fallback.to_vec();
    }
}

/// Generational GA with tournament selection, uniform crossover, Gaussian
/// mutation and elitism. `initial` individuals replace the first random
/// ones. Returns the `n_out` best unique individuals ever evaluated.
#[allow(clippy::too_many_arguments)]
pub fn ga_design_seeded(
    model: &EnsembleModel,
    target: &TargetSpec,
    stats: &NormStats,
    cfg: &GaConfig,
    n_out: usize,
    seed: u64,
    initial: &[Vec<f64>],
) -> Result<GaResult> {
    cfg.validate()?;
    if target.len() != model.response_dim() {
        return Err(Error::InvalidDimension {
            expected: model.response_dim(),
            got: target.len(),
        });
    }
    let d = model.design_dim();
    let bounds = SearchBounds::from_stats(stats, cfg.alpha);
    let constraint = constraint_for(d);
    let eval = Evaluator { model, target };
    let mut rng = rng::stream(seed, 0);
    let step: Vec<Normal<f64>> = stats
        .std
        .iter()
        .map(|s| Normal::new(0.0, cfg.mutation_scale * s).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;

    let mut pop: Vec<Vec<f64>> = initial.iter().take(cfg.population).cloned().collect();
    if pop.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidDimension { expected: d, got: pop[0].len() });
    }
    while pop.len() < cfg.population {
        let x = bounds
            .sample_admissible(constraint.as_ref(), &mut rng)
            .ok_or(Error::RangesInfeasible { drawn: 0, accepted: 0 })?;
        pop.push(x);
    }

    let mut archive: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut best_per_generation = Vec::with_capacity(cfg.generations + 1);
    let mut fit = eval.eval(&pop)?;
    for gen in 0..=cfg.generations {
        if gen > 0 {
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
            let mut next: Vec<Vec<f64>> = order[..cfg.elitism].iter().map(|&i| pop[i].clone()).collect();
            while next.len() < cfg.population {
                let p1 = tournament(&fit, &mut rng);
                let p2 = tournament(&fit, &mut rng);
                let mut child = pop[p1].clone();
                if rng.random::<f64>() < cfg.crossover_rate {
                    for j in 0..d {
                        if rng.random::<bool>() {
                            child[j] = pop[p2][j];
                        }
                    }
                }
                for j in 0..d {
                    if rng.random::<f64>() < cfg.mutation_rate {
                        child[j] = (child[j] + step[j].sample(&mut rng)).clamp(bounds.low[j], bounds.high[j]);
                    }
                }
                repair(&mut child, &pop[p1], &bounds, constraint.as_ref(), &mut rng);
                next.push(child);
            }
            pop = next;
            fit = eval.eval(&pop)?;
        }
        archive.extend(pop.iter().cloned().zip(fit.iter().copied()));
        best_per_generation.push(fit.iter().copied().fold(f64::INFINITY, f64::min));
    }

    archive.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut designs = Vec::with_capacity(n_out);
    let mut fitness = Vec::with_capacity(n_out);
    for (x, f) in archive {
        if designs.len() == n_out {
            break;
        }
        if designs.iter().any(|y: &DesignVector| y.as_slice() == x.as_slice()) {
            continue;
        }
        designs.push(DesignVector::new(x));
        fitness.push(f);
    }
    Ok(GaResult {
        designs,
        fitness,
        best_per_generation,
    })
}

pub fn ga_design(
    model: &EnsembleModel,
    target: &TargetSpec,
    stats: &NormStats,
    cfg: &GaConfig,
    n_out: usize,
    seed: u64,
) -> Result<GaResult> {
    ga_design_seeded(model, target, stats, cfg, n_out, seed, &[])
}
