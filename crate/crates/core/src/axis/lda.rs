use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ScatterPair;
use crate::error::{Error, Result};

/// The discriminant direction of one stage.
#[derive(Clone, Debug)]
pub struct ConceptAxis {
    /// Unit axis, oriented so that `b_c . (mu_p - mu_n) >= 0`.
    pub b_c: DVector<f64>,
    /// Maximized ratio `b^T S_b b / b^T (S_w + ridge I) b`.
    pub rayleigh_value: f64,
    pub stage: u32,
    pub ridge_used: f64,
    /// Set when the between-class scatter vanishes and every direction is
    /// equally (non-)discriminative.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSolver {
    /// `normalize((S_w + ridge I)^-1 (mu_p - mu_n))`, exact for rank-1 `S_b`.
    #[default]
    ClosedForm,
    /// Leading generalized eigenvector through a Cholesky-whitened symmetric
    /// eigenproblem.
    Eigen,
}

fn regularized(sp: &ScatterPair, ridge: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Numerical(format!("invalid ridge {ridge}")));
    }
    let d = sp.dim();
    let m = &sp.s_w + DMatrix::identity(d, d) * ridge;
    Cholesky::new(m).ok_or_else(|| {
        Error::Numerical(format!(
            "within-class scatter plus ridge {ridge:e} is not positive definite"
        ))
    })
}

/// Ratio `w^T S_b w / w^T (S_w + ridge I) w`.
pub fn rayleigh_ratio(sp: &ScatterPair, ridge: f64, w: &DVector<f64>) -> f64 {
    let num = w.dot(&(&sp.s_b * w));
    let den = w.dot(&(&sp.s_w * w)) + ridge * w.norm_squared();
    num / den
}

fn orient(mut w: DVector<f64>, gap: &DVector<f64>) -> DVector<f64> {
    w.normalize_mut();
    if w.dot(gap) < 0.0 {
        w = -w;
    }
    w
}

pub fn solve_concept_axis(sp: &ScatterPair, ridge: f64) -> Result<ConceptAxis> {
    solve_concept_axis_with(sp, ridge, AxisSolver::ClosedForm, 1)
}

pub fn solve_concept_axis_with(
    sp: &ScatterPair,
    ridge: f64,
    solver: AxisSolver,
    stage: u32,
) -> Result<ConceptAxis> {
    let chol = regularized(sp, ridge)?;
    let gap = sp.mean_gap();
    let d = sp.dim();

    if gap.norm() == 0.0 {
        let mut b_c = DVector::zeros(d);
        b_c[0] = 1.0;
        return Ok(ConceptAxis {
            b_c,
            rayleigh_value: 0.0,
            stage,
            ridge_used: ridge,
            degenerate: true,
        });
    }

    let b_c = match solver {
        AxisSolver::ClosedForm => orient(chol.solve(&gap), &gap),
        AxisSolver::Eigen => {
            // (S_w + rI) = L L^T; the eigenvectors y of L^-1 S_b L^-T map back
            // to generalized eigenvectors w = L^-T y.
            let l = chol.l();
            let l_inv = l
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
            let mut c = &l_inv * &sp.s_b * l_inv.transpose();
            c = (&c + c.transpose()) * 0.5;
            let eig = SymmetricEigen::new(c);
            let (imax, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let y = eig.eigenvectors.column(imax).into_owned();
            let w = l_inv.transpose() * y;
            orient(w, &gap)
        }
    };
    let rayleigh_value = rayleigh_ratio(sp, ridge, &b_c);
    Ok(ConceptAxis {
        b_c,
        rayleigh_value,
        stage,
        ridge_used: ridge,
        degenerate: false,
    })
}
