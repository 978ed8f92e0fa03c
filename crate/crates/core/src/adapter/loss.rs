use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::axis::AttributeBasisSet;
use crate::error::{Error, Result};
use crate::linalg::{ensure_same_dim, ensure_unit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlidingMode {
    /// `|| (f.b) b - target ||`: the projected feature against the full
    /// interpolated mean. The off-axis part of the target is an irreducible
    /// residual; only the on-axis component carries gradient.
    #[default]
    Literal,
    /// `| f.b - target.b |`: compares scalar coordinates on the axis.
    ProjectedTarget,
}

/// Interpolated class mean `(1+alpha)/2 mu_p + (1-alpha)/2 mu_n`.
pub fn slider_interpolation(mu_p: &DVector<f64>, mu_n: &DVector<f64>, alpha: f64) -> DVector<f64> {
    mu_p * ((1.0 + alpha) / 2.0) + mu_n * ((1.0 - alpha) / 2.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sliding loss and its gradient with respect to `f`.
pub fn sliding_loss(
    f: &DVector<f64>,
    b_c: &DVector<f64>,
    mu_p: &DVector<f64>,
    mu_n: &DVector<f64>,
    alpha: f64,
) -> Result<(f64, DVector<f64>)> {
    sliding_loss_with(f, b_c, mu_p, mu_n, alpha, SlidingMode::Literal)
}

pub fn sliding_loss_with(
    f: &DVector<f64>,
    b_c: &DVector<f64>,
    mu_p: &DVector<f64>,
    mu_n: &DVector<f64>,
    alpha: f64,
    mode: SlidingMode,
) -> Result<(f64, DVector<f64>)> {
    ensure_same_dim(f.len(), b_c.len(), "sliding_loss")?;
    ensure_same_dim(mu_p.len(), b_c.len(), "sliding_loss mu_p")?;
    ensure_same_dim(mu_n.len(), b_c.len(), "sliding_loss mu_n")?;
    ensure_unit(b_c, "concept axis")?;
    let target = slider_interpolation(mu_p, mu_n, alpha);
    let coord = f.dot(b_c);
    match mode {
        SlidingMode::Literal => {
            let r = b_c * coord - &target;
            let value = r.norm();
            if value == 0.0 {
                return Ok((0.0, DVector::zeros(f.len())));
            }
            // d||r||/df = (r/||r||)^T d((f.b) b)/df = ((b.r)/||r||) b
            let grad = b_c * (b_c.dot(&r) / value);
            Ok((value, grad))
        }
        SlidingMode::ProjectedTarget => {
            let e = coord - target.dot(b_c);
            Ok((e.abs(), b_c * sign(e)))
        }
    }
}

/// Preserving loss `sum_k |(f_adapted - f_base) . b_k|` and its gradient with
/// respect to `f_adapted` (subgradient 0 at exact zeros).
pub fn preserving_loss(
    f_adapted: &DVector<f64>,
    f_base: &DVector<f64>,
    bases: &AttributeBasisSet,
) -> Result<(f64, DVector<f64>)> {
    if bases.is_empty() {
        return Err(Error::Config("preserving loss needs at least one attribute basis".into()));
    }
    ensure_same_dim(f_adapted.len(), f_base.len(), "preserving_loss")?;
    let delta = f_adapted - f_base;
    let mut value = 0.0;
    let mut grad = DVector::zeros(delta.len());
    for b in &bases.bases {
        ensure_same_dim(b.len(), delta.len(), "attribute basis")?;
        ensure_unit(b, "attribute basis")?;
        let c = delta.dot(b);
        value += c.abs();
        grad += b * sign(c);
    }
    Ok((value, grad))
}
