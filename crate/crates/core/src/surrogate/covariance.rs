//! Kernel covariance grafting, decay-rate fitting and jitter conditioning.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `K_ij = exp(−γ (s_i − s_j)²)`, with the diagonal pinned to 1 so that the
/// `γ → ∞` limit is the identity rather than `exp(−∞·0)`.
pub fn kernel_matrix(coords: &[f64], gamma: f64) -> DMatrix<f64> {
    let k = coords.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            let d = coords[i] - coords[j];
            (-gamma * d * d).exp()
        }
    })
}

/// Σ_ij = σ_i σ_j exp(−γ (s_i − s_j)²).
pub fn graft_covariance(sigma: &[f64], coords: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    if sigma.len() != coords.len() {
        return Err(Error::InvalidDimension {
            expected: coords.len(),
            got: sigma.len(),
        });
    }
    if let Some(index) = sigma.iter().position(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidStd {
            index,
            value: sigma[index],
        });
    }
    Ok(scale_kernel(&kernel_matrix(coords, gamma), sigma))
}

/// `diag(σ) K diag(σ)` for a precomputed kernel.
pub(crate) fn scale_kernel(kernel: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let k = sigma.len();
    DMatrix::from_fn(k, k, |i, j| sigma[i] * sigma[j] * kernel[(i, j)])
}

/// Unbiased (h − 1) sample covariance of the rows.
pub fn empirical_covariance<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let h = rows.len();
    if h < 2 {
        return Err(Error::InvalidInput(
            "empirical covariance needs at least two rows".into(),
        ));
    }
    let k = rows[0].as_ref().len();
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= h as f64);
    let centered = DMatrix::from_fn(h, k, |i, j| rows[i].as_ref()[j] - mean[j]);
    Ok(centered.transpose() * &centered / (h - 1) as f64)
}

/// Grid search for the decay rate whose grafted covariance is closest to
/// `train_cov` in Frobenius norm. Ties go to the smaller γ.
pub fn fit_gamma(
    train_cov: &DMatrix<f64>,
    sigma_bar: &[f64],
    coords: &[f64],
    gamma_grid: &[f64],
) -> Result<f64> {
    let k = coords.len();
    if train_cov.nrows() != k || train_cov.ncols() != k {
        return Err(Error::InvalidDimension {
            expected: k,
            got: train_cov.nrows(),
        });
    }
    if gamma_grid.is_empty() {
        return Err(Error::InvalidInput("gamma grid is empty".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &gamma in gamma_grid {
        let dist = (graft_covariance(sigma_bar, coords, gamma)? - train_cov).norm();
        best = match best {
            Some((bg, bd)) if dist > bd || (dist == bd && gamma >= bg) => Some((bg, bd)),
            _ => Some((gamma, dist)),
        };
    }
    Ok(best.map(|b| b.0).unwrap_or(gamma_grid[0]))
}

/// `{0.05, 0.10, …, 2.00}`.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..=40).map(|i| i as f64 / 20.0).collect()
}

/// Geometric jitter ladder `{0, base, 10·base, …}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterLadder {
    pub base: f64,
    pub rungs: usize,
}

impl Default for JitterLadder {
    fn default() -> Self {
        Self {
            base: 1e-9,
            rungs: 30,
        }
    }
}

impl JitterLadder {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(0.0).chain((0..self.rungs).map(|i| self.base * 10f64.powi(i as i32)))
    }
}

pub const DEFAULT_TARGET_CONDITION: f64 = 1e8;

/// A jittered covariance with its lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct Conditioned {
    pub cov: DMatrix<f64>,
    pub eta: f64,
    pub chol_l: DMatrix<f64>,
    pub condition_estimate: f64,
}

const POWER_ITERS: usize = 30;
const INVERSE_ITERS: usize = 20;

fn start_vector(k: usize) -> DVector<f64> {
    let v = DVector::from_fn(k, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7).sin());
    let n = v.norm();
    v / n
}

/// Largest eigenvalue of a symmetric PSD matrix from a few power iterations,
/// bounded below by the largest diagonal entry.
pub fn estimate_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let k = a.nrows();
    if k == 0 {
        return 0.0;
    }
    let max_diag = a.diagonal().max();
    let mut v = start_vector(k);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let w = a * &v;
        lambda = v.dot(&w);
        let n = w.norm();
        if !(n > 0.0) || !n.is_finite() {
            break;
        }
        v = w / n;
    }
    lambda.max(max_diag)
}

/// Smallest eigenvalue of `L Lᵀ` from a few inverse iterations, bounded above
/// by the smallest diagonal entry.
fn estimate_min_eigenvalue(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, min_diag: f64) -> f64 {
    let k = min_diag_len(chol);
    let mut v = start_vector(k);
    let mut lambda = min_diag;
    for _ in 0..INVERSE_ITERS {
        let w = chol.solve(&v);
        let n = w.norm();
        if !(n > 0.0) || !n.is_finite() {
            return 0.0;
        }
        lambda = lambda.min(1.0 / n);
        v = w / n;
    }
    lambda
}

fn min_diag_len(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> usize {
    chol.l_dirty().nrows()
}

/// Adds the smallest ladder jitter ηI for which the Cholesky factorization
/// succeeds and the estimated condition number is at most `target_condition`.
pub fn condition_jitter_with(
    cov: &DMatrix<f64>,
    target_condition: f64,
    ladder: JitterLadder,
) -> Result<Conditioned> {
    let k = cov.nrows();
    if cov.ncols() != k {
        return Err(Error::InvalidDimension {
            expected: k,
            got: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("covariance has non-finite entries".into()));
    }
    let lambda_max = estimate_max_eigenvalue(cov);
    let min_diag = if k == 0 { 0.0 } else { cov.diagonal().min() };
    for eta in ladder.values() {
        // λ_min ≤ min diagonal, so this rung cannot reach the target
        if (lambda_max + eta) > target_condition * (min_diag + eta) {
            continue;
        }
        let mut jittered = cov.clone();
        for i in 0..k {
            jittered[(i, i)] += eta;
        }
        let Some(chol) = nalgebra::Cholesky::new(jittered.clone()) else {
            continue;
        };
        let lambda_min = estimate_min_eigenvalue(&chol, min_diag + eta);
        if !(lambda_min > 0.0) {
            continue;
        }
        let cond = (lambda_max + eta) / lambda_min;
        if cond <= target_condition {
            let chol_l = chol.unpack();
            return Ok(Conditioned {
                cov: jittered,
                eta,
                chol_l,
                condition_estimate: cond,
            });
        }
    }
    Err(Error::IllConditioned(format!(
        "no jitter up to {:e} reached condition {:e}",
        ladder.base * 10f64.powi(ladder.rungs.saturating_sub(1) as i32),
        target_condition
    )))
}

/// [`condition_jitter_with`] on the default ladder; returns `(Σ + ηI, η)`.
pub fn condition_jitter(cov: &DMatrix<f64>, target_condition: f64) -> Result<(DMatrix<f64>, f64)> {
    condition_jitter_with(cov, target_condition, JitterLadder::default()).map(|c| (c.cov, c.eta))
}
