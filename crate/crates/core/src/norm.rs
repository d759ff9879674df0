//! Z-score feature normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::InvalidDimension {
                expected: mean.len(),
                got: std.len(),
            });
        }
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    /// Column means and (population) standard deviations of `rows`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit statistics on zero rows".into()));
        }
        let d = rows[0].as_ref().len();
        let mut mean = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::InvalidDimension {
                    expected: d,
                    got: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<()> {
        match self.std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            Some(index) => Err(Error::DegenerateStats {
                index,
                value: self.std[index],
            }),
            None => Ok(()),
        }
    }

    pub fn normalize(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_len(features)?;
        self.validate()?;
        Ok(features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((q, m), s)| (q - m) / s)
            .collect())
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        self.check_len(normalized)?;
        Ok(normalized
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::InvalidDimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// `(q − mean) / std`, elementwise.
pub fn zscore_normalize(features: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    stats.normalize(features)
}
