//! Deterministic analytic stand-in for the finite-element simulator.
//!
//! The two traction modes are blended into a single macroscopic trilinear
//! law (elastic rise, hardening, linear softening to zero), which is then
//! mapped from separation to strain by a geometric factor and sampled on the
//! strain grid.

use rayon::prelude::*;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::design::{
    DesignConstraint, DesignVector, InterfaceLawConstraints, INTERFACE_LAW_DIM, MODE_PARAMS,
};
use crate::error::{Error, Result};
use crate::response::{linspace, ResponseCurve, TargetSpec};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Weight of the normal-mode parameters in the blend.
    pub blend_normal: f64,
    /// Separation (mm) to macroscopic strain factor.
    pub geom_scale: f64,
    pub k: usize,
    pub grid_min: f64,
    pub grid_max: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            blend_normal: 0.7,
            geom_scale: 1.0,
            k: 100,
            grid_min: 0.0,
            grid_max: 0.04,
        }
    }
}

impl OracleConfig {
    pub fn grid(&self) -> Vec<f64> {
        linspace(self.grid_min, self.grid_max, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blend_normal) {
            return Err(Error::Config(format!(
                "blend_normal must lie in [0, 1], got {}",
                self.blend_normal
            )));
        }
        if !(self.geom_scale > 0.0) {
            return Err(Error::Config(format!(
                "geom_scale must be positive, got {}",
                self.geom_scale
            )));
        }
        if self.k < 2 || !(self.grid_min < self.grid_max) {
            return Err(Error::Config("grid needs k >= 2 and grid_min < grid_max".into()));
        }
        Ok(())
    }
}

/// Per-parameter uniform sampling box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        // σ^y, Δσ^1 (MPa); δ^y, Δδ^1, Δδ^2 (mm); same box for both modes
        let low = [50.0, 5.0, 5e-4, 5e-4, 5e-4];
        let high = [400.0, 200.0, 5e-3, 1e-2, 2e-2];
        Self {
            low: low.iter().chain(&low).copied().collect(),
            high: high.iter().chain(&high).copied().collect(),
        }
    }
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<()> {
        if self.low.len() != self.high.len() {
            return Err(Error::InvalidDimension {
                expected: self.low.len(),
                got: self.high.len(),
            });
        }
        for (i, (lo, hi)) in self.low.iter().zip(&self.high).enumerate() {
            if !(0.0 <= *lo && lo < hi) {
                return Err(Error::Config(format!(
                    "parameter range {i} must satisfy 0 <= low < high, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Macroscopic piecewise-linear stress–strain law in strain coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroLaw {
    pub yield_strain: f64,
    pub yield_stress: f64,
    pub peak_strain: f64,
    pub peak_stress: f64,
    pub failure_strain: f64,
}

impl MacroLaw {
    pub fn from_design(x: &[f64], cfg: &OracleConfig) -> Self {
        let w = cfg.blend_normal;
        let blend = |i: usize| w * x[i] + (1.0 - w) * x[i + MODE_PARAMS];
        let g = cfg.geom_scale;
        let sy = blend(0);
        let dsig = blend(1);
        let dy = blend(2);
        let dd1 = blend(3);
        let dd2 = blend(4);
        Self {
            yield_strain: g * dy,
            yield_stress: sy,
            peak_strain: g * (dy + dd1),
            peak_stress: sy + dsig,
            failure_strain: g * (dy + dd1 + dd2),
        }
    }

    pub fn stress_at(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= self.yield_strain {
            self.yield_stress * (s / self.yield_strain)
        } else if s <= self.peak_strain {
            let frac = (s - self.yield_strain) / (self.peak_strain - self.yield_strain);
            self.yield_stress + (self.peak_stress - self.yield_stress) * frac
        } else if s < self.failure_strain {
            self.peak_stress * ((self.failure_strain - s) / (self.failure_strain - self.peak_strain))
        } else {
            0.0
        }
    }
}

/// Oracle response of an admissible design.
pub fn toy_response(x: &DesignVector, cfg: &OracleConfig) -> Result<ResponseCurve> {
    if x.dim() != INTERFACE_LAW_DIM {
        return Err(Error::InvalidDimension {
            expected: INTERFACE_LAW_DIM,
            got: x.dim(),
        });
    }
    if !InterfaceLawConstraints.is_admissible(x.as_slice()) {
        return Err(Error::InfeasibleDesign);
    }
    let law = MacroLaw::from_design(x.as_slice(), cfg);
    let grid = cfg.grid();
    let values = grid.iter().map(|&s| law.stress_at(s)).collect();
    Ok(ResponseCurve { grid, values })
}

/// Draws per row before a row is declared hopeless (99.9% rejection).
const MAX_DRAWS_PER_ROW: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplingStats {
    pub draws: usize,
    pub accepted: usize,
}

impl SamplingStats {
    pub fn rejection_rate(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            1.0 - self.accepted as f64 / self.draws as f64
        }
    }
}

fn sample_row(ranges: &ParameterRanges, seed: u64, row: u64) -> Result<(DesignVector, usize)> {
    let mut rng = rng::stream(seed, row);
    for attempt in 1..=MAX_DRAWS_PER_ROW {
        let x: Vec<f64> = ranges
            .low
            .iter()
            .zip(&ranges.high)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        if InterfaceLawConstraints.is_admissible(&x) {
            return Ok((DesignVector::new(x), attempt));
        }
    }
    Err(Error::RangesInfeasible {
        drawn: MAX_DRAWS_PER_ROW,
        accepted: 0,
    })
}

/// Uniform rejection sampling of `n` admissible designs plus their oracle
/// responses. Row `i` uses its own stream `(seed, i)`.
pub fn generate_dataset_with_stats(
    n: usize,
    ranges: &ParameterRanges,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<(Dataset, SamplingStats)> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be at least 1".into()));
    }
    ranges.validate()?;
    cfg.validate()?;
    if ranges.low.len() != INTERFACE_LAW_DIM {
        return Err(Error::InvalidDimension {
            expected: INTERFACE_LAW_DIM,
            got: ranges.low.len(),
        });
    }
    let rows: Vec<(DesignVector, usize)> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_row(ranges, seed, i))
        .collect::<Result<_>>()?;
    let stats = SamplingStats {
        draws: rows.iter().map(|r| r.1).sum(),
        accepted: n,
    };
    let designs: Vec<DesignVector> = rows.into_iter().map(|r| r.0).collect();
    let responses = designs
        .par_iter()
        .map(|x| toy_response(x, cfg).map(|c| c.values))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new(designs, responses, cfg.grid(), &InterfaceLawConstraints)?;
    Ok((ds, stats))
}

pub fn generate_dataset(
    n: usize,
    ranges: &ParameterRanges,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with_stats(n, ranges, cfg, seed).map(|(d, _)| d)
}

/// L∞ check of the oracle response against the target at every unmasked,
/// finitely-toleranced point.
pub fn check_feasible(x: &DesignVector, target: &TargetSpec, cfg: &OracleConfig) -> Result<bool> {
    let curve = toy_response(x, cfg)?;
    if curve.len() != target.len() {
        return Err(Error::InvalidDimension {
            expected: target.len(),
            got: curve.len(),
        });
    }
    Ok((0..target.len()).all(|u| {
        let eps = target.effective_tolerance(u);
        eps.is_infinite() || (curve.values[u] - target.target.values[u]).abs() <= eps
    }))
}
