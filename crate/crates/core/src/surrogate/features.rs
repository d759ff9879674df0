use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal, Uniform};

use crate::rng;

/// `[1, x̃, cos(Ω x̃ + b)]` with Ω ~ N(0, ℓ⁻²) and b ~ U(0, 2π), regenerated
/// from `seed` so only the seed needs persisting.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub seed: u64,
    pub input_dim: usize,
    pub n_random: usize,
    pub lengthscale: f64,
    omega: DMatrix<f64>,
    phase: DVector<f64>,
}

impl FeatureMap {
    pub fn new(seed: u64, input_dim: usize, n_random: usize, lengthscale: f64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let normal = Normal::new(0.0, 1.0 / lengthscale).expect("lengthscale must be positive");
        let omega = DMatrix::from_fn(n_random, input_dim, |_, _| normal.sample(&mut rng));
        let uniform = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let phase = DVector::from_fn(n_random, |_, _| uniform.sample(&mut rng));
        Self {
            seed,
            input_dim,
            n_random,
            lengthscale,
            omega,
            phase,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.input_dim + self.n_random
    }

    /// Feature rows for a batch of normalized inputs (one input per row).
    pub fn transform(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let n = inputs.nrows();
        let proj = inputs * self.omega.transpose();
        let mut out = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            out[(i, 0)] = 1.0;
            for j in 0..self.input_dim {
                out[(i, 1 + j)] = inputs[(i, j)];
            }
            for r in 0..self.n_random {
                out[(i, 1 + self.input_dim + r)] = (proj[(i, r)] + self.phase[r]).cos();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regenerated_from_seed() {
        let a = FeatureMap::new(7, 3, 16, 2.0);
        let b = FeatureMap::new(7, 3, 16, 2.0);
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -0.3, 2.0, 1.0, 0.0, -1.0]);
        assert_eq!(a.transform(&x), b.transform(&x));
        assert_eq!(a.dim(), 20);
        let t = a.transform(&x);
        assert_eq!(t[(0, 0)], 1.0);
        assert_eq!(t[(1, 1)], 1.0);
    }
}
