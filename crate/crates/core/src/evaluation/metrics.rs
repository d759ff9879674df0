use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::{Error, Result};
use crate::norm::NormStats;
use crate::oracle::{check_feasible, OracleConfig};
use crate::response::TargetSpec;
use crate::rng;

pub const DEFAULT_KNN: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_designs: usize,
    pub feasibility_rate: f64,
    pub vendi: f64,
    pub knn_novelty: f64,
    pub pearson_r: Option<f64>,
}

/// Oracle pass/fail per design. Designs the oracle cannot evaluate
/// (constraint violations) fail.
pub fn feasibility_flags(designs: &[DesignVector], target: &TargetSpec, cfg: &OracleConfig) -> Result<Vec<bool>> {
    designs
        .par_iter()
        .map(|x| match check_feasible(x, target, cfg) {
            Ok(ok) => Ok(ok),
            Err(Error::InfeasibleDesign) => Ok(false),
            Err(e) => Err(e),
        })
        .collect()
}

pub fn feasibility_rate(designs: &[DesignVector], target: &TargetSpec, cfg: &OracleConfig) -> Result<f64> {
    if designs.is_empty() {
        return Err(Error::InvalidInput("no designs to evaluate".into()));
    }
    let flags = feasibility_flags(designs, target, cfg)?;
    Ok(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_finite<R: AsRef<[f64]>>(rows: &[R]) -> Result<()> {
    if rows.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("non-finite design coordinate".into()));
    }
    Ok(())
}

/// `exp(−Σ λ log λ)` over the eigenvalues of `K/n`, with `0·log 0 = 0`.
pub fn vendi_from_kernel(kernel: &DMatrix<f64>) -> Result<f64> {
    let n = kernel.nrows();
    if n == 0 || kernel.ncols() != n {
        return Err(Error::InvalidInput("kernel must be square and nonempty".into()));
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite kernel entry".into()));
    }
    let eig = (kernel / n as f64).symmetric_eigen();
    let entropy: f64 = eig
        .eigenvalues
        .iter()
        .filter(|l| **l > 0.0)
        .map(|l| -l * l.ln())
        .sum();
    Ok(entropy.exp())
}

/// Vendi diversity with an RBF kernel of the given bandwidth.
pub fn vendi_score<R: AsRef<[f64]> + Sync>(designs: &[R], bandwidth: f64) -> Result<f64> {
    check_finite(designs)?;
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = designs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-sq_dist(designs[i].as_ref(), designs[j].as_ref()) / (2.0 * bandwidth * bandwidth)).exp()
        }
    });
    vendi_from_kernel(&k)
}

/// Median pairwise Euclidean distance; 1 when every pair coincides.
pub fn median_bandwidth<R: AsRef<[f64]>>(designs: &[R]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..designs.len() {
        for j in i + 1..designs.len() {
            d.push(sq_dist(designs[i].as_ref(), designs[j].as_ref()).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Mean over designs of the mean distance to the `k` nearest training rows.
pub fn knn_novelty<R, S>(designs: &[R], train: &[S], k: usize) -> Result<f64>
where
    R: AsRef<[f64]> + Sync,
    S: AsRef<[f64]> + Sync,
{
    if k == 0 || k > train.len() {
        return Err(Error::InvalidK { k, rows: train.len() });
    }
    if designs.is_empty() {
        return Err(Error::InvalidInput("no designs to evaluate".into()));
    }
    check_finite(designs)?;
    check_finite(train)?;
    let total: f64 = designs
        .par_iter()
        .map(|x| {
            let mut d: Vec<f64> = train.iter().map(|t| sq_dist(x.as_ref(), t.as_ref()).sqrt()).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            let mut near = d[..k].to_vec();
            near.sort_by(f64::total_cmp);
            near.iter().sum::<f64>() / k as f64
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / designs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBin {
    pub center: f64,
    pub count: usize,
    pub feasible_fraction: f64,
}

/// Bins over `[0, 1]` with right-closed edges; bin 0 also takes `0`.
pub fn likelihood_bins(records: &[(f64, bool)], n_bins: usize) -> Vec<LikelihoodBin> {
    let mut count = vec![0usize; n_bins];
    let mut hits = vec![0usize; n_bins];
    for &(l, ok) in records {
        let l = l.clamp(0.0, 1.0);
        let b = ((l * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        hits[b] += ok as usize;
    }
    (0..n_bins)
        .map(|b| LikelihoodBin {
            center: (b as f64 + 0.5) / n_bins as f64,
            count: count[b],
            feasible_fraction: if count[b] > 0 {
                hits[b] as f64 / count[b] as f64
            } else {
                0.0
            },
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson r between bin-center likelihood and bin feasibility fraction,
/// over bins holding at least `min_per_bin` records. Absent with fewer than
/// three surviving bins or zero variance.
pub fn binned_correlation(records: &[(f64, bool)], n_bins: usize, min_per_bin: usize) -> Option<f64> {
    if records.is_empty() || n_bins == 0 {
        return None;
    }
    let bins: Vec<LikelihoodBin> = likelihood_bins(records, n_bins)
        .into_iter()
        .filter(|b| b.count >= min_per_bin && b.count > 0)
        .collect();
    if bins.len() < 3 {
        return None;
    }
    let x: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let y: Vec<f64> = bins.iter().map(|b| b.feasible_fraction).collect();
    pearson(&x, &y)
}

/// Greedy farthest-point subset of size `m`, starting from a seeded random
/// index. Ties go to the lowest index.
pub fn maxmin_subset<R: AsRef<[f64]>>(designs: &[R], m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = designs.len();
    if m > n {
        return Err(Error::InvalidSubsetSize { m, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng::stream(seed, 0);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut nearest: Vec<f64> = designs
        .iter()
        .map(|x| sq_dist(x.as_ref(), designs[first].as_ref()))
        .collect();
    while chosen.len() < m {
        let mut best = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if nearest[i] <= nearest[b] => {}
                _ => best = Some(i),
            }
        }
        let b = best.expect("m ≤ n leaves a candidate");
        taken[b] = true;
        chosen.push(b);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(designs[i].as_ref(), designs[b].as_ref()));
        }
    }
    Ok(chosen)
}

/// Feasibility, diversity and novelty of a design set, with designs and
/// training rows standardized by `norm`.
pub fn evaluate_designs(
    designs: &[DesignVector],
    train: &[DesignVector],
    norm: &NormStats,
    target: &TargetSpec,
    oracle: &OracleConfig,
    k: usize,
    pearson_r: Option<f64>,
) -> Result<MetricsReport> {
    let feasibility_rate = feasibility_rate(designs, target, oracle)?;
    let z: Vec<Vec<f64>> = designs
        .iter()
        .map(|x| norm.normalize(x.as_slice()))
        .collect::<Result<_>>()?;
    let zt: Vec<Vec<f64>> = train
        .iter()
        .map(|x| norm.normalize(x.as_slice()))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        n_designs: designs.len(),
        feasibility_rate,
        vendi: vendi_score(&z, median_bandwidth(&z))?,
        knn_novelty: knn_novelty(&z, &zt, k)?,
        pearson_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_designs_vendi_one() {
        let d = vec![vec![1.0, 2.0]; 6];
        assert!((vendi_score(&d, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn far_apart_designs_vendi_n() {
        let d: Vec<Vec<f64>> = (0..5).map(|i| vec![100.0 * i as f64]).collect();
        assert!((vendi_score(&d, 1.0).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            vendi_score(&[vec![f64::NAN]], 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn knn_zero_for_training_row() {
        let train = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(knn_novelty(&[vec![3.0, 4.0]], &train, 1).unwrap(), 0.0);
        assert_eq!(knn_novelty(&[vec![0.0, 0.0]], &train, 2).unwrap(), 2.5);
        assert!(matches!(knn_novelty(&[vec![0.0, 0.0]], &train, 0), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn flat_feasibility_has_no_correlation() {
        let recs: Vec<(f64, bool)> = (0..100).map(|i| (i as f64 / 100.0, true)).collect();
        assert_eq!(binned_correlation(&recs, 10, 1), None);
    }

    #[test]
    fn perfectly_linear_bins() {
        // in each bin the feasible fraction equals the bin center
        let mut recs = Vec::new();
        for b in 0..10 {
            let center = (b as f64 + 0.5) / 10.0;
            for i in 0..20 {
                recs.push((center, (i as f64) < center * 20.0));
            }
        }
        let r = binned_correlation(&recs, 10, 20).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn likelihood_one_lands_in_last_bin() {
        let bins = likelihood_bins(&[(1.0, true), (0.0, false), (0.5, true)], 4);
        assert_eq!(bins[3].count, 1);
        assert_eq!(bins[0].count, 1);
        // right-closed: 0.5 belongs to (0.25, 0.5]
        assert_eq!(bins[1].count, 1);
    }

    #[test]
    fn sparse_bins_dropped() {
        let recs = vec![(0.1, true), (0.5, false), (0.9, true)];
        assert_eq!(binned_correlation(&recs, 10, 2), None);
    }

    #[test]
    fn maxmin_full_and_collinear() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let all = maxmin_subset(&pts, 3, 1).unwrap();
        let mut s = all.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2]);
        for seed in 0..20 {
            let pick = maxmin_subset(&pts, 2, seed).unwrap();
            match pick[0] {
                0 => assert_eq!(pick[1], 2),
                2 => assert_eq!(pick[1], 0),
                _ => assert_eq!(pick[1], 2),
            }
        }
        assert!(matches!(maxmin_subset(&pts, 4, 1), Err(Error::InvalidSubsetSize { m: 4, n: 3 })));
    }

    fn min_pairwise(pts: &[Vec<f64>], idx: &[usize]) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                m = m.min(sq_dist(&pts[idx[i]], &pts[idx[j]]).sqrt());
            }
        }
        m
    }

    #[test]
    fn maxmin_beats_random_subsets() {
        let mut r = rng::stream(3, 0);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let greedy = min_pairwise(&pts, &maxmin_subset(&pts, 5, 7).unwrap());
        let mut random: Vec<f64> = (0..1000)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut r, 50, 5).into_vec();
                min_pairwise(&pts, &idx)
            })
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(greedy >= random[500]);
    }

    proptest! {
        #[test]
        fn vendi_bounded_and_permutation_invariant(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..12),
            bw in 0.1f64..3.0,
        ) {
            let v = vendi_score(&pts, bw).unwrap();
            prop_assert!(v >= 1.0 - 1e-9 && v <= pts.len() as f64 + 1e-9);
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert!((vendi_score(&rev, bw).unwrap() - v).abs() < 1e-9 * v);
        }

        #[test]
        fn knn_permutation_invariant(
            designs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..8),
            train in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 5..20),
        ) {
            let a = knn_novelty(&designs, &train, 5).unwrap();
            let mut d2 = designs.clone();
            d2.reverse();
            let mut t2 = train.clone();
            t2.rotate_left(2);
            prop_assert!((knn_novelty(&d2, &t2, 5).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn maxmin_indices_unique(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..30),
            seed in any::<u64>(),
        ) {
            let m = pts.len() / 2 + 1;
            let mut idx = maxmin_subset(&pts, m, seed).unwrap();
            idx.sort();
            idx.dedup();
            prop_assert_eq!(idx.len(), m);
        }
    }
}
