//! Paired design/response tables and their CSV + manifest persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{DesignConstraint, DesignVector};
use crate::error::{Error, Result};
use crate::norm::NormStats;
use crate::response::{linspace, ResponseCurve};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub designs: Vec<DesignVector>,
    pub responses: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub norm: NormStats,
}

/// Sidecar describing the shared response grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub k: usize,
    pub grid_min: f64,
    pub grid_max: f64,
}

impl Dataset {
    pub fn new(
        designs: Vec<DesignVector>,
        responses: Vec<Vec<f64>>,
        grid: Vec<f64>,
        constraint: &dyn DesignConstraint,
    ) -> Result<Self> {
        if designs.len() != responses.len() {
            return Err(Error::InvalidDimension {
                expected: designs.len(),
                got: responses.len(),
            });
        }
        if let Some(r) = responses.iter().find(|r| r.len() != grid.len()) {
            return Err(Error::InvalidDimension {
                expected: grid.len(),
                got: r.len(),
            });
        }
        if let Some(i) = designs.iter().position(|x| !constraint.is_admissible(x.as_slice())) {
            return Err(Error::InvalidInput(format!(
                "design row {i} violates the design constraints"
            )));
        }
        let norm = NormStats::fit(&designs)?;
        Ok(Self {
            designs,
            responses,
            grid,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn design_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn response_dim(&self) -> usize {
        self.grid.len()
    }

    pub fn curve(&self, row: usize) -> ResponseCurve {
        ResponseCurve {
            grid: self.grid.clone(),
            values: self.responses[row].clone(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            k: self.grid.len(),
            grid_min: self.grid.first().copied().unwrap_or(0.0),
            grid_max: self.grid.last().copied().unwrap_or(0.0),
        }
    }

    /// Writes `x_1..x_d, y_1..y_k` rows. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.design_dim();
        let k = self.response_dim();
        let header: Vec<String> = (1..=d)
            .map(|i| format!("x_{i}"))
            .chain((1..=k).map(|u| format!("y_{u}")))
            .collect();
        w.write_record(&header)?;
        for (x, y) in self.designs.iter().zip(&self.responses) {
            let row: Vec<String> = x.as_slice().iter().chain(y).map(|v| format!("{v}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn read_csv(
        path: &Path,
        manifest: &Manifest,
        constraint: &dyn DesignConstraint,
    ) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let k = manifest.k;
        let d = header
            .iter()
            .filter(|h| h.starts_with("x_"))
            .count();
        if header.len() != d + k {
            return Err(Error::InvalidDimension {
                expected: d + k,
                got: header.len(),
            });
        }
        let mut designs = Vec::new();
        let mut responses = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            designs.push(DesignVector::new(vals[..d].to_vec()));
            responses.push(vals[d..].to_vec());
        }
        let grid = linspace(manifest.grid_min, manifest.grid_max, k);
        Self::new(designs, responses, grid, constraint)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
