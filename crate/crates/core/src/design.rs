//! Design vectors and the physical admissibility rules of the trilinear
//! interface law.
//!
//! Parameter layout (reference problem, d = 10):
//!
//! | index | normal mode | index | shear mode |
//! |-------|-------------|-------|------------|
//! | 0     | σ_n^y       | 5     | σ_s^y      |
//! | 1     | Δσ_n^1      | 6     | Δσ_s^1     |
//! | 2     | δ_n^y       | 7     | δ_s^y      |
//! | 3     | Δδ_n^1      | 8     | Δδ_s^1     |
//! | 4     | Δδ_n^2      | 9     | Δδ_s^2     |
//!
//! Stresses are in MPa and separations in mm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of design parameters in the reference interface-law problem.
pub const INTERFACE_LAW_DIM: usize = 10;
/// Parameters per traction mode.
pub const MODE_PARAMS: usize = 5;

pub const PARAM_NAMES: [&str; INTERFACE_LAW_DIM] = [
    "sigma_n_y",
    "dsigma_n_1",
    "delta_n_y",
    "ddelta_n_1",
    "ddelta_n_2",
    "sigma_s_y",
    "dsigma_s_1",
    "delta_s_y",
    "ddelta_s_1",
    "ddelta_s_2",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignVector(pub Vec<f64>);

impl DesignVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for DesignVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for DesignVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for DesignVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One traction mode of the trilinear law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrilinearLaw {
    pub yield_stress: f64,
    pub hardening_stress: f64,
    pub yield_sep: f64,
    pub hardening_sep: f64,
    pub softening_sep: f64,
}

impl TrilinearLaw {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            yield_stress: p[0],
            hardening_stress: p[1],
            yield_sep: p[2],
            hardening_sep: p[3],
            softening_sep: p[4],
        }
    }

    /// Hardening slope strictly below the elastic slope:
    /// `Δσ¹/Δδ¹ < σʸ/δʸ`, evaluated cross-multiplied so that zero
    /// separations do not divide.
    pub fn hardening_below_elastic(&self) -> bool {
        self.hardening_stress * self.yield_sep < self.yield_stress * self.hardening_sep
    }
}

/// Admissibility predicate over design vectors.
pub trait DesignConstraint: Sync {
    fn dim(&self) -> usize;
    fn is_admissible(&self, x: &[f64]) -> bool;
}

/// The reference problem's constraint set: nonnegativity plus
/// hardening-below-elastic in both traction modes.
#[derive(Clone, Copy, Debug, Default)]
pub struct InterfaceLawConstraints;

impl DesignConstraint for InterfaceLawConstraints {
    fn dim(&self) -> usize {
        INTERFACE_LAW_DIM
    }

    fn is_admissible(&self, x: &[f64]) -> bool {
        x.len() == INTERFACE_LAW_DIM && check_slices(x)
    }
}

/// Componentwise nonnegativity only; used for generic (non interface-law) spaces.
#[derive(Clone, Copy, Debug)]
pub struct NonNegative(pub usize);

impl DesignConstraint for NonNegative {
    fn dim(&self) -> usize {
        self.0
    }

    fn is_admissible(&self, x: &[f64]) -> bool {
        x.len() == self.0 && x.iter().all(|v| *v >= 0.0)
    }
}

fn check_slices(x: &[f64]) -> bool {
    if !x.iter().all(|v| *v >= 0.0) {
        return false;
    }
    let normal = TrilinearLaw::from_slice(&x[..MODE_PARAMS]);
    let shear = TrilinearLaw::from_slice(&x[MODE_PARAMS..]);
    normal.hardening_below_elastic() && shear.hardening_below_elastic()
}

/// True iff every entry is nonnegative and both modes have their hardening
/// slope strictly below the elastic slope. Boundary equality is rejected.
pub fn check_design_constraints(x: &DesignVector) -> Result<bool> {
    if x.dim() != INTERFACE_LAW_DIM {
        return Err(Error::InvalidDimension {
            expected: INTERFACE_LAW_DIM,
            got: x.dim(),
        });
    }
    Ok(check_slices(x.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> DesignVector {
        // elastic 100/0.001 = 1e5, hardening 10/0.001 = 1e4, both modes
        DesignVector::new(vec![
            100.0, 10.0, 0.001, 0.001, 0.002, 100.0, 10.0, 0.001, 0.001, 0.002,
        ])
    }

    #[test]
    fn accepts_softening_hardening_branch() {
        assert!(check_design_constraints(&reference()).unwrap());
    }

    #[test]
    fn rejects_negative_entry() {
        for i in 0..INTERFACE_LAW_DIM {
            let mut x = reference();
            x.0[i] = -0.1;
            assert!(!check_design_constraints(&x).unwrap(), "index {i}");
        }
    }

    #[test]
    fn rejects_equal_slopes() {
        let mut x = reference();
        // Δσ/Δδ = 100/0.001 = σ^y/δ^y
        x.0[1] = 100.0;
        assert!(!check_design_constraints(&x).unwrap());
        let mut x = reference();
        x.0[6] = 100.0;
        assert!(!check_design_constraints(&x).unwrap());
    }

    #[test]
    fn rejects_steeper_hardening() {
        let mut x = reference();
        x.0[6] = 150.0;
        assert!(!check_design_constraints(&x).unwrap());
    }

    #[test]
    fn wrong_dimension_is_an_error() {
        let x = DesignVector::new(vec![1.0; 9]);
        assert!(matches!(
            check_design_constraints(&x),
            Err(Error::InvalidDimension { expected: 10, got: 9 })
        ));
    }

    proptest! {
        #[test]
        fn verdict_is_scale_consistent(
            x in proptest::collection::vec(0.0f64..10.0, INTERFACE_LAW_DIM),
            exp in -8i32..8,
            mode in 0usize..2,
        ) {
            // powers of two scale without rounding
            let c = 2f64.powi(exp);
            let before = check_design_constraints(&DesignVector::new(x.clone())).unwrap();
            let mut scaled = x;
            for i in 0..4 {
                scaled[mode * MODE_PARAMS + i] *= c;
            }
            let after = check_design_constraints(&DesignVector::new(scaled)).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}
