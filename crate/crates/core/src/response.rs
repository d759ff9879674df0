//! Response curves, targets and tolerance boxes.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A functional response sampled on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl ResponseCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::InvalidDimension {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `k` equispaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect(),
    }
}

/// Tolerance entry: a nonnegative real or `+∞`.
///
/// Serialized as a JSON number, or the string `"inf"` for `+∞`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Tolerance(pub f64);

impl Tolerance {
    pub const INFINITE: Tolerance = Tolerance(f64::INFINITY);

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for Tolerance {
    fn from(v: f64) -> Self {
        Tolerance(v)
    }
}

impl Serialize for Tolerance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Tolerance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct TolVisitor;

        impl Visitor<'_> for TolVisitor {
            type Value = Tolerance;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Tolerance, E> {
                if v >= 0.0 {
                    Ok(Tolerance(v))
                } else {
                    Err(E::custom(format!("negative tolerance {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Tolerance, E> {
                Ok(Tolerance(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Tolerance, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Tolerance, E> {
                match v {
                    "inf" | "+inf" | "Infinity" => Ok(Tolerance::INFINITE),
                    other => Err(E::custom(format!("unrecognized tolerance {other:?}"))),
                }
            }
        }

        d.deserialize_any(TolVisitor)
    }
}

/// Target curve with per-point tolerances.
///
/// `mask[u] == true` excludes point `u` from the feasibility judgment; a
/// masked point behaves exactly like an infinite tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub target: ResponseCurve,
    pub tolerance: Vec<Tolerance>,
    pub mask: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct TargetFile {
    grid: Vec<f64>,
    target: Vec<f64>,
    tolerance: Vec<Tolerance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<bool>>,
}

impl TargetSpec {
    pub fn new(
        target: ResponseCurve,
        tolerance: Vec<Tolerance>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let k = target.len();
        if tolerance.len() != k {
            return Err(Error::InvalidDimension {
                expected: k,
                got: tolerance.len(),
            });
        }
        if let Some(m) = &mask {
            if m.len() != k {
                return Err(Error::InvalidDimension {
                    expected: k,
                    got: m.len(),
                });
            }
        }
        if let Some(bad) = tolerance.iter().find(|t| !(t.0 >= 0.0)) {
            return Err(Error::InvalidInput(format!("tolerance {} is negative", bad.0)));
        }
        Ok(Self {
            target,
            tolerance,
            mask,
        })
    }

    /// Uniform finite tolerance at every point.
    pub fn uniform(target: ResponseCurve, eps: f64) -> Result<Self> {
        let k = target.len();
        Self::new(target, vec![Tolerance(eps); k], None)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn is_masked(&self, u: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[u])
    }

    /// Tolerance in effect at point `u`, with masking folded in.
    pub fn effective_tolerance(&self, u: usize) -> f64 {
        if self.is_masked(u) {
            f64::INFINITY
        } else {
            self.tolerance[u].0
        }
    }

    /// Indices with a finite effective tolerance.
    pub fn constrained_points(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&u| self.effective_tolerance(u).is_finite())
            .collect()
    }

    pub fn is_well_posed(&self) -> bool {
        (0..self.len()).any(|u| self.effective_tolerance(u).is_finite())
    }

    pub fn with_scaled_tolerance(&self, factor: f64) -> Self {
        Self {
            target: self.target.clone(),
            tolerance: self.tolerance.iter().map(|t| Tolerance(t.0 * factor)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TargetFile {
            grid: self.target.grid.clone(),
            target: self.target.values.clone(),
            tolerance: self.tolerance.clone(),
            mask: self.mask.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TargetFile = serde_json::from_str(s)?;
        let curve = ResponseCurve::new(file.grid, file.target)?;
        Self::new(curve, file.tolerance, file.mask)
    }
}

/// Centered integration bounds: `a = y* − μ − ε`, `b = y* − μ + ε`.
///
/// Infinite (or masked) tolerances give `(−∞, +∞)`.
pub fn tolerance_bounds(target: &TargetSpec, mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = target.len();
    if mu.len() != k {
        return Err(Error::InvalidDimension {
            expected: k,
            got: mu.len(),
        });
    }
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for (u, &m) in mu.iter().enumerate() {
        let eps = target.effective_tolerance(u);
        if eps.is_infinite() {
            a.push(f64::NEG_INFINITY);
            b.push(f64::INFINITY);
        } else {
            let r = target.target.values[u] - m;
            a.push(r - eps);
            b.push(r + eps);
        }
    }
    Ok((a, b))
}
