//! Tolerance likelihood as a multivariate normal box probability.
//!
//! `Pr(a ≤ Z ≤ b)` for `Z ~ N(0, Σ)` is estimated with the Genz sequential
//! conditioning transform: after a Cholesky factorization `Σ = L Lᵀ` and the
//! inverse-normal substitution, the integral becomes an expectation over the
//! unit hypercube of `∏_u (e_u − d_u)`, which is averaged by plain Monte
//! Carlo. Bounds are centered (`a = y* − μ − ε`), so the caller performs the
//! centering.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::{Error, Result};
use crate::normal;
use crate::response::{tolerance_bounds, TargetSpec};
use crate::rng;
use crate::surrogate::{EnsembleModel, PredictiveDistribution};

pub const DEFAULT_N_MC: usize = 4096;

/// Monte Carlo samples per independently seeded chunk.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxProbabilityResult {
    pub p: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Every hypercube sample hit a zero-width factor.
    pub underflow: bool,
}

impl BoxProbabilityResult {
    fn exact(p: f64) -> Self {
        Self {
            p,
            std_error: 0.0,
            n_samples: 0,
            underflow: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub n_mc: usize,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self { n_mc: DEFAULT_N_MC }
    }
}

/// Nested Genz bounds `(d_u, e_u)` for coordinate `u = z_prefix.len()`,
/// given the hypercube values of the preceding coordinates.
pub fn nested_bounds(l: &DMatrix<f64>, a: &[f64], b: &[f64], z_prefix: &[f64]) -> Result<(f64, f64)> {
    let u = z_prefix.len();
    if u >= l.nrows() || a.len() != l.nrows() || b.len() != l.nrows() {
        return Err(Error::InvalidDimension {
            expected: l.nrows(),
            got: a.len().max(u + 1),
        });
    }
    let luu = l[(u, u)];
    if !(luu > 0.0) {
        return Err(Error::NotCholesky { index: u, value: luu });
    }
    let shift: f64 = z_prefix
        .iter()
        .enumerate()
        .map(|(v, z)| l[(u, v)] * normal::quantile(*z))
        .sum();
    let d = if a[u] == f64::NEG_INFINITY {
        0.0
    } else {
        normal::cdf((a[u] - shift) / luu)
    };
    let e = if b[u] == f64::INFINITY {
        1.0
    } else {
        normal::cdf((b[u] - shift) / luu)
    };
    Ok((d, e))
}

/// `Φ(hi) − Φ(lo)`, evaluated in whichever tail keeps precision.
#[inline]
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        normal::cdf(-lo) - normal::cdf(-hi)
    } else {
        normal::cdf(hi) - normal::cdf(lo)
    }
}

/// Packed row-major lower triangle, for cache-friendly row sweeps.
struct PackedLower {
    data: Vec<f64>,
    diag: Vec<f64>,
}

impl PackedLower {
    fn new(l: &DMatrix<f64>) -> Self {
        let m = l.nrows();
        let mut data = Vec::with_capacity(m * (m + 1) / 2);
        for u in 0..m {
            for v in 0..u {
                data.push(l[(u, v)]);
            }
        }
        Self {
            data,
            diag: (0..m).map(|u| l[(u, u)]).collect(),
        }
    }

    #[inline]
    fn row(&self, u: usize) -> &[f64] {
        let start = u * (u.saturating_sub(1)) / 2;
        &self.data[start..start + u]
    }
}

fn genz_sample(l: &PackedLower, a: &[f64], b: &[f64], y: &mut [f64], rng: &mut rng::Rng) -> f64 {
    let m = a.len();
    let mut prod = 1.0;
    for u in 0..m {
        let shift: f64 = l.row(u).iter().zip(&y[..u]).map(|(c, yv)| c * yv).sum();
        let luu = l.diag[u];
        let lo = if a[u] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            (a[u] - shift) / luu
        };
        let hi = if b[u] == f64::INFINITY {
            f64::INFINITY
        } else {
            (b[u] - shift) / luu
        };
        let mass = interval_mass(lo, hi);
        prod *= mass.max(0.0);
        if prod == 0.0 {
            return 0.0;
        }
        if u + 1 < m {
            let d = normal::cdf(lo);
            let w: f64 = rng.random();
            y[u] = normal::quantile(d + w * mass);
        }
    }
    prod
}

/// Genz Monte Carlo estimate of `Pr(a ≤ Z ≤ b)`, `Z ~ N(0, cov)`.
///
/// Coordinates with `(−∞, +∞)` bounds are marginalized out exactly; the rest
/// are ordered by ascending standardized width before factorization.
/// Deterministic for a fixed `(seed, n_mc)` regardless of thread count.
pub fn mvn_box_probability(
    cov: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<BoxProbabilityResult> {
    let k = cov.nrows();
    if cov.ncols() != k || a.len() != k || b.len() != k {
        return Err(Error::InvalidDimension {
            expected: k,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN integration bound".into()));
    }
    if a.iter().zip(b).any(|(lo, hi)| lo > hi) {
        // empty box
        return Ok(BoxProbabilityResult::exact(0.0));
    }
    let mut active: Vec<usize> = (0..k)
        .filter(|&u| a[u] > f64::NEG_INFINITY || b[u] < f64::INFINITY)
        .collect();
    if active.is_empty() {
        return Ok(BoxProbabilityResult::exact(1.0));
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be at least 1".into()));
    }
    let width = |u: usize| (b[u] - a[u]) / cov[(u, u)].max(0.0).sqrt();
    active.sort_by(|&i, &j| width(i).total_cmp(&width(j)).then(i.cmp(&j)));

    let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| cov[(active[i], active[j])]);
    let l = nalgebra::Cholesky::new(sub)
        .ok_or_else(|| Error::IllConditioned("Cholesky factorization failed".into()))?
        .unpack();
    let packed = PackedLower::new(&l);
    let a_sub: Vec<f64> = active.iter().map(|&u| a[u]).collect();
    let b_sub: Vec<f64> = active.iter().map(|&u| b[u]).collect();

    let n_chunks = n_mc.div_ceil(CHUNK);
    let values: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::stream(seed, c as u64);
            let mut y = vec![0.0; a_sub.len()];
            let len = CHUNK.min(n_mc - c * CHUNK);
            (0..len)
                .map(|_| genz_sample(&packed, &a_sub, &b_sub, &mut y, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(BoxProbabilityResult {
        p: mean.clamp(0.0, 1.0),
        std_error: (var / n).sqrt(),
        n_samples: values.len(),
        underflow: values.iter().all(|v| *v == 0.0),
    })
}

/// Likelihood of meeting the target for an already computed predictive
/// distribution.
pub fn likelihood_of(
    pred: &PredictiveDistribution,
    target: &TargetSpec,
    n_mc: usize,
    seed: u64,
) -> Result<BoxProbabilityResult> {
    let (a, b) = tolerance_bounds(target, &pred.mean)?;
    mvn_box_probability(&pred.conditioned_cov(), &a, &b, n_mc, seed)
}

/// `L(x | y*, ε) = Pr(‖y* − ŷ(x)‖ ≤ ε)` under the surrogate's predictive
/// distribution. Masked points count as unconstrained.
pub fn likelihood(
    model: &EnsembleModel,
    x: &DesignVector,
    target: &TargetSpec,
    n_mc: usize,
    seed: u64,
) -> Result<BoxProbabilityResult> {
    if target.len() != model.response_dim() {
        return Err(Error::InvalidDimension {
            expected: model.response_dim(),
            got: target.len(),
        });
    }
    let pred = model.predict_distribution(x)?;
    likelihood_of(&pred, target, n_mc, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::{linspace, ResponseCurve, Tolerance};
    use rand_distr::{Distribution, StandardNormal};

    const Q975: f64 = 1.959963984540054;

    #[test]
    fn first_coordinate_open_bounds() {
        let l = DMatrix::identity(2, 2);
        let inf = f64::INFINITY;
        let (d, e) = nested_bounds(&l, &[-inf, 0.0], &[inf, 1.0], &[]).unwrap();
        assert_eq!((d, e), (0.0, 1.0));
    }

    #[test]
    fn first_coordinate_standard_quantiles() {
        let l = DMatrix::identity(1, 1);
        let (d, e) = nested_bounds(&l, &[-Q975], &[Q975], &[]).unwrap();
        assert!((d - 0.025).abs() < 1e-12);
        assert!((e - 0.975).abs() < 1e-12);
    }

    #[test]
    fn second_coordinate_with_median_prefix() {
        // Φ⁻¹(0.5) = 0, so only l₂₂ scales the bounds
        let l22 = 0.8660254037844386;
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, l22]);
        let (d, e) = nested_bounds(&l, &[-1.0, -1.0], &[1.0, 1.0], &[0.5]).unwrap();
        assert!((d - normal::cdf(-1.0 / l22)).abs() < 1e-15);
        assert!((e - normal::cdf(1.0 / l22)).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_diagonal_is_not_cholesky() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(
            nested_bounds(&l, &[-1.0, -1.0], &[1.0, 1.0], &[0.5]),
            Err(Error::NotCholesky { index: 1, .. })
        ));
    }

    #[test]
    fn open_box_is_exactly_one() {
        let inf = f64::INFINITY;
        let r = mvn_box_probability(&DMatrix::identity(1, 1), &[-inf], &[inf], 100, 1).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn univariate_95_interval() {
        let r = mvn_box_probability(&DMatrix::identity(1, 1), &[-Q975], &[Q975], 10_000, 3).unwrap();
        // one-dimensional: every sample carries the exact mass
        assert!((r.p - 0.95).abs() <= 3.0 * r.std_error + 1e-12, "{r:?}");
    }

    #[test]
    fn empty_box_short_circuits() {
        let r = mvn_box_probability(&DMatrix::identity(2, 2), &[0.0, 1.0], &[1.0, 0.5], 100, 1).unwrap();
        assert_eq!(r.p, 0.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn zero_width_box_underflows() {
        let r = mvn_box_probability(&DMatrix::identity(3, 3), &[0.0; 3], &[0.0; 3], 64, 1).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.underflow);
    }

    fn rejection_oracle(cov: &DMatrix<f64>, a: &[f64], b: &[f64], n: usize, seed: u64) -> (f64, f64) {
        let l = nalgebra::Cholesky::new(cov.clone()).unwrap().unpack();
        let k = a.len();
        let mut rng = rng::stream(seed, 99);
        let mut z = vec![0.0; k];
        let mut hits = 0usize;
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let inside = (0..k).all(|u| {
                let y: f64 = (0..=u).map(|v| l[(u, v)] * z[v]).sum();
                y >= a[u] && y <= b[u]
            });
            hits += inside as usize;
        }
        let p = hits as f64 / n as f64;
        (p, (p * (1.0 - p) / n as f64).sqrt())
    }

    #[test]
    fn bivariate_correlated_matches_rejection() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = [-1.0, -1.0];
        let b = [1.0, 1.0];
        let r = mvn_box_probability(&cov, &a, &b, 10_000, 5).unwrap();
        let (p, se) = rejection_oracle(&cov, &a, &b, 1_000_000, 6);
        let tol = 3.0 * (r.std_error.powi(2) + se.powi(2)).sqrt();
        assert!((r.p - p).abs() <= tol, "genz {} vs oracle {p} (tol {tol})", r.p);
    }

    #[test]
    fn diagonal_equals_product_of_marginals() {
        let sig = [0.5, 1.0, 2.0, 3.0];
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, sig.iter().map(|s| s * s)));
        let a = [-0.3, -2.0, f64::NEG_INFINITY, -1.0];
        let b = [0.9, 0.1, 1.0, f64::INFINITY];
        let exact: f64 = (0..4)
            .map(|u| normal::cdf(b[u] / sig[u]) - normal::cdf(a[u] / sig[u]))
            .product();
        let r = mvn_box_probability(&cov, &a, &b, 512, 2).unwrap();
        assert!((r.p - exact).abs() <= 3.0 * r.std_error + 1e-12);
    }

    #[test]
    fn deterministic_and_permutation_consistent() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.0, 0.2, 0.3, 0.2, 1.5]);
        let a = [-1.0, -0.5, -2.0];
        let b = [1.5, 1.0, 0.5];
        let r1 = mvn_box_probability(&cov, &a, &b, 4096, 8).unwrap();
        let r2 = mvn_box_probability(&cov, &a, &b, 4096, 8).unwrap();
        assert_eq!(r1, r2);
        let perm = [2usize, 0, 1];
        let pc = DMatrix::from_fn(3, 3, |i, j| cov[(perm[i], perm[j])]);
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let r3 = mvn_box_probability(&pc, &pa, &pb, 4096, 9).unwrap();
        let tol = 3.0 * (r1.std_error.powi(2) + r3.std_error.powi(2)).sqrt();
        assert!((r1.p - r3.p).abs() <= tol);
    }

    fn target_for(k: usize, tol: f64) -> TargetSpec {
        let curve = ResponseCurve::new(linspace(0.0, 1.0, k), vec![0.0; k]).unwrap();
        TargetSpec::new(curve, vec![Tolerance(tol); k], None).unwrap()
    }

    fn dist(k: usize) -> PredictiveDistribution {
        let std = vec![1.0; k];
        let coords: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let cov = crate::surrogate::graft_covariance(&std, &coords, 0.5).unwrap();
        let c = crate::surrogate::condition_jitter_with(&cov, 1e8, Default::default()).unwrap();
        PredictiveDistribution {
            mean: vec![0.0; k],
            std,
            cov,
            jitter: c.eta,
            chol_l: c.chol_l,
        }
    }

    #[test]
    fn infinite_tolerance_likelihood_is_one() {
        let r = likelihood_of(&dist(5), &target_for(5, f64::INFINITY), 256, 1).unwrap();
        assert_eq!((r.p, r.std_error), (1.0, 0.0));
    }

    #[test]
    fn zero_tolerance_likelihood_is_zero() {
        let r = likelihood_of(&dist(5), &target_for(5, 0.0), 256, 1).unwrap();
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn enlarging_tolerance_does_not_reduce_mass() {
        let d = dist(8);
        let mut prev = likelihood_of(&d, &target_for(8, 0.1), 4096, 4).unwrap();
        for tol in [0.2, 0.5, 1.0, 2.0] {
            let r = likelihood_of(&d, &target_for(8, tol), 4096, 4).unwrap();
            let slack = 3.0 * (r.std_error.powi(2) + prev.std_error.powi(2)).sqrt();
            assert!(r.p >= prev.p - slack);
            prev = r;
        }
    }
}
