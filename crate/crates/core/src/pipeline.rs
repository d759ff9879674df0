//! Support search followed by sampling, and the GUIDe-vs-GA benchmark.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::design::DesignVector;
use crate::error::{Error, Result};
use crate::evaluation::{
    binned_correlation, feasibility_flags, ga_design, knn_novelty, median_bandwidth, vendi_score, DEFAULT_KNN,
};
use crate::initsearch::{pso_search, PsoConfig, SupportResult};
use crate::io::{dedup_records, UniqueDesign};
use crate::likelihood::likelihood;
use crate::norm::NormStats;
use crate::oracle::OracleConfig;
use crate::response::{ResponseCurve, TargetSpec};
use crate::rng;
use crate::sampler::{run_chain_full, ChainConfig, ChainRun};
use crate::surrogate::EnsembleModel;

pub const CORRELATION_BINS: usize = 20;
pub const MIN_PER_BIN: usize = 20;

/// Uniform tolerance of `fraction × peak`.
pub fn peak_fraction_target(curve: ResponseCurve, fraction: f64) -> Result<TargetSpec> {
    let eps = fraction * curve.peak();
    TargetSpec::uniform(curve, eps)
}

#[derive(Clone, Debug)]
pub enum DesignOutcome {
    Refused(SupportResult),
    Designed {
        support: SupportResult,
        run: ChainRun,
        unique: Vec<UniqueDesign>,
    },
}

impl DesignOutcome {
    pub fn is_refusal(&self) -> bool {
        matches!(self, DesignOutcome::Refused(_))
    }

    pub fn support(&self) -> &SupportResult {
        match self {
            DesignOutcome::Refused(s) => s,
            DesignOutcome::Designed { support, .. } => support,
        }
    }
}

/// PSO seeded with `derive(seed, 0)`, then a chain seeded with
/// `derive(seed, 1)` from the first positive-likelihood design.
pub fn design_for_target(
    model: &EnsembleModel,
    target: &TargetSpec,
    stats: &NormStats,
    pso: &PsoConfig,
    chain: &ChainConfig,
    n_mc: usize,
    seed: u64,
) -> Result<DesignOutcome> {
    let support = pso_search(model, target, stats, pso, n_mc, rng::derive(seed, 0))?;
    let (Some(x0), Some(l0)) = (support.x0.clone(), support.likelihood0) else {
        return Ok(DesignOutcome::Refused(support));
    };
    let run = run_chain_full(model, target, &x0, chain, n_mc, rng::derive(seed, 1), Some(l0))?;
    let unique = dedup_records(&run.records);
    Ok(DesignOutcome::Designed { support, run, unique })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub target: usize,
    pub method: String,
    pub n_designs: usize,
    pub feasibility_rate: f64,
    pub vendi: Option<f64>,
    pub knn_novelty: Option<f64>,
    pub refused: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_hash: String,
    /// Test-split rows used as targets.
    pub target_rows: Vec<usize>,
    pub rows: Vec<MethodRow>,
    /// `(likelihood, oracle-feasible)` for every retained chain record.
    pub records: Vec<(f64, bool)>,
    /// Records re-scored under swept tolerances.
    pub supplement: Vec<(f64, bool)>,
    pub pearson_r: Option<f64>,
    pub guide_mean_feasibility: f64,
    pub ga_mean_feasibility: f64,
}

struct Diversity {
    vendi: Option<f64>,
    knn: Option<f64>,
}

fn diversity(designs: &[DesignVector], train_z: &[Vec<f64>], norm: &NormStats) -> Result<Diversity> {
    if designs.is_empty() {
        return Ok(Diversity { vendi: None, knn: None });
    }
    let z: Vec<Vec<f64>> = designs
        .iter()
        .map(|x| norm.normalize(x.as_slice()))
        .collect::<Result<_>>()?;
    Ok(Diversity {
        vendi: Some(vendi_score(&z, median_bandwidth(&z))?),
        knn: Some(knn_novelty(&z, train_z, DEFAULT_KNN.min(train_z.len()))?),
    })
}

/// Oracle feasibility of each unique design at several tolerance scalings,
/// paired with the surrogate likelihood under the same scaling. Records are
/// repeated by multiplicity.
fn tolerance_sweep(
    model: &EnsembleModel,
    target: &TargetSpec,
    unique: &[UniqueDesign],
    factors: &[f64],
    oracle: &OracleConfig,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for (fi, &f) in factors.iter().enumerate() {
        let scaled = target.with_scaled_tolerance(f);
        let designs: Vec<DesignVector> = unique.iter().map(|u| u.x.clone()).collect();
        let flags = feasibility_flags(&designs, &scaled, oracle)?;
        let lik: Vec<f64> = unique
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let s = rng::derive(rng::derive(seed, fi as u64), i as u64);
                likelihood(model, &u.x, &scaled, n_mc, s).map(|r| r.p)
            })
            .collect::<Result<_>>()?;
        for ((u, l), ok) in unique.iter().zip(lik).zip(flags) {
            out.extend(std::iter::repeat_n((l, ok), u.multiplicity));
        }
    }
    Ok(out)
}

/// Picks `n` distinct test rows with a stream derived from `seed`.
pub fn pick_targets(n_rows: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > n_rows {
        return Err(Error::InvalidSubsetSize { m: n, n: n_rows });
    }
    let mut r = rng::stream(seed, 0x7a);
    let mut idx = sample(&mut r, n_rows, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// For each chosen test curve, GUIDe (support search + chain) and the GA
/// baseline each produce `n_designs`; both are validated on the oracle.
pub fn benchmark(model: &EnsembleModel, train: &Dataset, test: &Dataset, cfg: &RunConfig) -> Result<BenchmarkReport> {
    benchmark_detailed(model, train, test, cfg).map(|(r, _)| r)
}

/// [`benchmark`] plus the GUIDe outcome for each target, in target order.
pub fn benchmark_detailed(
    model: &EnsembleModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
) -> Result<(BenchmarkReport, Vec<DesignOutcome>)> {
    let b = &cfg.benchmark;
    let stats = &train.norm;
    let mut chain = cfg.chain.resolve(stats)?;
    chain.n_keep = b.n_designs;
    let target_rows = pick_targets(test.len(), b.n_targets, cfg.seeds.design)?;
    let train_z: Vec<Vec<f64>> = train
        .designs
        .iter()
        .map(|x| stats.normalize(x.as_slice()))
        .collect::<Result<_>>()?;
    let n_mc = cfg.likelihood.n_mc;

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut supplement = Vec::new();
    let mut outcomes = Vec::with_capacity(target_rows.len());
    for (t, &row) in target_rows.iter().enumerate() {
        let target = peak_fraction_target(test.curve(row), b.tolerance_fraction)?;
        let seed = rng::derive(cfg.seeds.design, t as u64);

        let outcome = design_for_target(model, &target, stats, &cfg.pso, &chain, n_mc, seed)?;
        match &outcome {
            DesignOutcome::Refused(_) => rows.push(MethodRow {
                target: row,
                method: "guide".into(),
                n_designs: 0,
                feasibility_rate: 0.0,
                vendi: None,
                knn_novelty: None,
                refused: true,
            }),
            DesignOutcome::Designed { run, unique, .. } => {
                let designs: Vec<DesignVector> = run.records.iter().map(|r| r.x.clone()).collect();
                let flags = feasibility_flags(&designs, &target, &cfg.data.oracle)?;
                records.extend(run.records.iter().zip(&flags).map(|(r, ok)| (r.likelihood, *ok)));
                let div = diversity(&designs, &train_z, stats)?;
                rows.push(MethodRow {
                    target: row,
                    method: "guide".into(),
                    n_designs: designs.len(),
                    feasibility_rate: flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64,
                    vendi: div.vendi,
                    knn_novelty: div.knn,
                    refused: false,
                });
                supplement.extend(tolerance_sweep(
                    model,
                    &target,
                    unique,
                    &b.sweep_factors,
                    &cfg.data.oracle,
                    n_mc,
                    rng::derive(seed, 2),
                )?);
            }
        }

        let ga = ga_design(model, &target, stats, &b.ga, b.n_designs, rng::derive(seed, 3))?;
        let flags = feasibility_flags(&ga.designs, &target, &cfg.data.oracle)?;
        let div = diversity(&ga.designs, &train_z, stats)?;
        rows.push(MethodRow {
            target: row,
            method: "ga".into(),
            n_designs: ga.designs.len(),
            feasibility_rate: if flags.is_empty() {
                0.0
            } else {
                flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
            },
            vendi: div.vendi,
            knn_novelty: div.knn,
            refused: false,
        });
        outcomes.push(outcome);
    }

    let mean_of = |m: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.feasibility_rate).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let pooled: Vec<(f64, bool)> = records.iter().chain(&supplement).copied().collect();
    let report = BenchmarkReport {
        config_hash: cfg.hash(),
        target_rows,
        pearson_r: binned_correlation(&pooled, CORRELATION_BINS, MIN_PER_BIN),
        guide_mean_feasibility: mean_of("guide"),
        ga_mean_feasibility: mean_of("ga"),
        rows,
        records,
        supplement,
    };
    Ok((report, outcomes))
}

/// Per-method table as CSV text.
pub fn benchmark_csv(report: &BenchmarkReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target", "method", "n_designs", "feasibility_rate", "vendi", "knn_novelty", "refused"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.target.to_string(),
            r.method.clone(),
            r.n_designs.to_string(),
            format!("{}", r.feasibility_rate),
            opt(r.vendi),
            opt(r.knn_novelty),
            r.refused.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
