use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::encoder::{encode_backward, encode_latents, LatentEncoder, LatentGrid};
use crate::error::{Error, Result};
use crate::splat::{render_backward_views, render_views, SplatScene, View, PARAMS_PER_PRIMITIVE};

/// `C = sum over views and cells of b_c . z`.
pub fn concept_alignment(latents: &LatentGrid, b_c: &DVector<f64>) -> Result<f64> {
    crate::linalg::ensure_same_dim(latents.dim, b_c.len(), "concept_alignment")?;
    let b = b_c.as_slice();
    Ok((0..latents.cells()).map(|i| crate::linalg::dot(latents.latent(i), b)).sum())
}

/// Alignment divided by the number of latent vectors.
pub fn concept_coordinate(latents: &LatentGrid, b_c: &DVector<f64>) -> Result<f64> {
    let n = latents.cells();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(concept_alignment(latents, b_c)? / n as f64)
}

/// Renders, encodes and reads out the alignment and coordinate.
pub fn measure_alignment(
    scene: &SplatScene,
    views: &[View],
    b_c: &DVector<f64>,
    enc: &LatentEncoder,
) -> Result<(f64, f64)> {
    let z = encode_latents(&render_views(scene, views)?, enc)?;
    Ok((concept_alignment(&z, b_c)?, concept_coordinate(&z, b_c)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub scores: Vec<f64>,
    pub alignment: f64,
    pub views: usize,
}

/// `S_i = sum |dC/dp|` over every scalar parameter of primitive `i`.
pub fn sensitivity_scores(
    scene: &SplatScene,
    views: &[View],
    b_c: &DVector<f64>,
    enc: &LatentEncoder,
) -> Result<SensitivityReport> {
    if scene.is_empty() {
        return Err(Error::Contract("sensitivity needs a non-empty scene".into()));
    }
    if views.is_empty() {
        return Err(Error::Contract("sensitivity needs at least one view".into()));
    }
    let z = encode_latents(&render_views(scene, views)?, enc)?;
    let alignment = concept_alignment(&z, b_c)?;
    let mut dz = LatentGrid::zeros(z.views, z.height, z.width, z.dim);
    for i in 0..dz.cells() {
        dz.latent_mut(i).copy_from_slice(b_c.as_slice());
    }
    let d_images = encode_backward(&dz, enc);
    let grads = render_backward_views(scene, views, &d_images, None)?;
    let scores = grads
        .chunks(PARAMS_PER_PRIMITIVE)
        .map(|g| g.iter().map(|v| v.abs()).sum())
        .collect();
    Ok(SensitivityReport {
        scores,
        alignment,
        views: views.len(),
    })
}

/// `ceil(gamma * m)`, with a small allowance so that products like
/// `0.05 * 100` that land a hair above an integer do not round up.
pub fn selection_count(m: usize, gamma: f64) -> usize {
    let raw = gamma * m as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(m)
}

/// Marks the `ceil(gamma * M)` highest scores; ties go to the lower index.
pub fn select_primitives(report: &SensitivityReport, gamma: f64) -> Result<Vec<bool>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if report.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite sensitivity score".into()));
    }
    let m = report.scores.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| report.scores[b].total_cmp(&report.scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; m];
    for &i in &order[..selection_count(m, gamma)] {
        mask[i] = true;
    }
    Ok(mask)
}
