use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::{ensure_same_dim, ensure_unit};

/// Attribute directions orthogonal to the concept axis, in order of the
/// variance they explain.
#[derive(Clone, Debug)]
pub struct AttributeBasisSet {
    pub bases: Vec<DVector<f64>>,
    /// Rayleigh quotient `w^T F_k F_k^T w` of each basis on its deflated
    /// (centered, un-normalized) feature matrix. Non-increasing.
    pub explained_variance: Vec<f64>,
    pub stage: u32,
    /// Set when the deflated data ran out of variance before `k` bases were
    /// found; `bases` then holds only the informative directions.
    pub rank_deficient: bool,
}

impl AttributeBasisSet {
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

/// Relative variance below which the deflated data counts as exhausted.
const EXHAUSTED_REL: f64 = 1e-12;

/// Merged, mean-centered `D x N` matrix of both sides.
pub(crate) fn merged_centered(pos: &FeatureSet, neg: &FeatureSet) -> Result<DMatrix<f64>> {
    ensure_same_dim(pos.dim, neg.dim, "attribute_bases")?;
    let n = pos.len() + neg.len();
    if n == 0 {
        return Err(Error::Shape("attribute_bases needs features".into()));
    }
    let d = pos.dim;
    let mut f = DMatrix::zeros(d, n);
    for (j, v) in pos.vectors().chain(neg.vectors()).enumerate() {
        for i in 0..d {
            f[(i, j)] = v[i] as f64;
        }
    }
    let mean = f.column_mean();
    for mut col in f.column_iter_mut() {
        col -= &mean;
    }
    Ok(f)
}

/// Sequential deflation PCA seeded with the concept axis as the zeroth
/// component: each round removes the components along all previously accepted
/// directions from the data, then takes the leading eigenvector of the
/// deflated second-moment matrix.
pub fn attribute_bases(
    pos: &FeatureSet,
    neg: &FeatureSet,
    b_c: &DVector<f64>,
    k: usize,
) -> Result<AttributeBasisSet> {
    let f = merged_centered(pos, neg)?;
    let mut out = deflation_pca(&f, b_c, k)?;
    out.stage = pos.stage;
    Ok(out)
}

pub(crate) fn deflation_pca(f: &DMatrix<f64>, b_c: &DVector<f64>, k: usize) -> Result<AttributeBasisSet> {
    let d = f.nrows();
    ensure_same_dim(b_c.len(), d, "concept axis")?;
    ensure_unit(b_c, "concept axis")?;
    if k == 0 || k >= d {
        return Err(Error::Config(format!("K must be in [1, {}], got {k}", d - 1)));
    }
    let total = f.norm_squared();
    let mut accepted: Vec<DVector<f64>> = vec![b_c.clone()];
    let mut bases = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut rank_deficient = false;

    for _ in 0..k {
        let mut deflated = f.clone();
        for b in &accepted {
            // F <- F - b (b^T F)
            let coeffs = b.transpose() * &deflated;
            deflated -= b * coeffs;
        }
        let mut cov = &deflated * deflated.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov);
        let (imax, lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if !(lambda > EXHAUSTED_REL * total) {
            rank_deficient = true;
            break;
        }
        let mut w = eig.eigenvectors.column(imax).into_owned();
        // re-orthogonalize against round-off leakage
        for _ in 0..2 {
            for b in &accepted {
                let c = b.dot(&w);
                w -= b * c;
            }
        }
        w.normalize_mut();
        let quotient = w.dot(&(&deflated * (deflated.transpose() * &w)));
        accepted.push(w.clone());
        bases.push(w);
        explained.push(quotient);
    }
    // Round-off can perturb nearly tied quotients; keep the reported sequence
    // non-increasing.
    for i in 1..explained.len() {
        if explained[i] > explained[i - 1] {
            explained[i] = explained[i - 1];
        }
    }
    if rank_deficient {
        log::warn!(
            "attribute bases: data exhausted after {} of {k} directions",
            bases.len()
        );
    }
    Ok(AttributeBasisSet {
        bases,
        explained_variance: explained,
        stage: 0,
        rank_deficient,
    })
}
