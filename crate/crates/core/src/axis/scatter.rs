use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{class_means, FeatureSet};

/// Within-class and between-class scatter of a positive/negative pair.
///
/// Column-vector convention: `s_b = (mu_p - mu_n)(mu_p - mu_n)^T`. A row-vector
/// quadratic form `w S w^T` is the same number as `w^T S w` here.
#[derive(Clone, Debug)]
pub struct ScatterPair {
    pub s_w: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    pub mu_p: DVector<f64>,
    pub mu_n: DVector<f64>,
    pub n_total: usize,
}

impl ScatterPair {
    pub fn dim(&self) -> usize {
        self.mu_p.len()
    }

    pub fn mean_gap(&self) -> DVector<f64> {
        &self.mu_p - &self.mu_n
    }

    /// Default ridge: `factor * trace(S_w) / D`, or `factor` itself when the
    /// scatter has zero trace (noise-free features).
    pub fn default_ridge(&self, factor: f64) -> f64 {
        let r = factor * self.s_w.trace() / self.dim() as f64;
        if r > 0.0 {
            r
        } else {
            factor
        }
    }
}

fn accumulate(s_w: &mut DMatrix<f64>, fs: &FeatureSet, mu: &DVector<f64>) {
    let d = fs.dim;
    let mut centered = DMatrix::zeros(d, fs.len());
    for (j, v) in fs.vectors().enumerate() {
        for i in 0..d {
            centered[(i, j)] = v[i] as f64 - mu[i];
        }
    }
    // s_w += C C^T
    s_w.gemm(1.0, &centered, &centered.transpose(), 1.0);
}

pub fn scatter_matrices(pos: &FeatureSet, neg: &FeatureSet) -> Result<ScatterPair> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Shape("scatter needs non-empty feature sets".into()));
    }
    let (mu_p, mu_n) = class_means(pos, neg)?;
    let d = pos.dim;
    let mut s_w = DMatrix::zeros(d, d);
    accumulate(&mut s_w, pos, &mu_p);
    accumulate(&mut s_w, neg, &mu_n);
    // exact symmetry regardless of gemm summation order
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (s_w[(i, j)] + s_w[(j, i)]);
            s_w[(i, j)] = v;
            s_w[(j, i)] = v;
        }
    }
    let gap = &mu_p - &mu_n;
    let s_b = &gap * gap.transpose();
    Ok(ScatterPair {
        s_w,
        s_b,
        mu_p,
        mu_n,
        n_total: pos.len() + neg.len(),
    })
}
