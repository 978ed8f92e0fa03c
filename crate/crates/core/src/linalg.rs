//! Small dense-vector helpers shared by the axis, adapter and edit modules.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Tolerance for "unit norm" contract checks.
pub const UNIT_TOL: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn ensure_unit(v: &DVector<f64>, what: &str) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!("{what} must be unit norm, got {n}")));
    }
    Ok(())
}

pub fn ensure_same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: dimension {a} != {b}")));
    }
    Ok(())
}

/// Scalar coordinate of `v` along the unit `axis`; the projected vector is
/// `project_scalar(v, axis) * axis`.
pub fn project_scalar(v: &DVector<f64>, axis: &DVector<f64>) -> Result<f64> {
    ensure_same_dim(v.len(), axis.len(), "project_scalar")?;
    ensure_unit(axis, "projection axis")?;
    Ok(v.dot(axis))
}
