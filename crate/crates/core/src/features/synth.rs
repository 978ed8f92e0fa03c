use nalgebra::{DMatrix, DVector};

use super::{checked_len, ConceptSpec, FeatureSet, Side};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

/// Deterministic per-stage distribution parameters of the synthetic concept.
///
/// Features of side `s` are `mean(s) + noise_factor * xi` with `xi ~ N(0, I)`.
/// The covariance `noise_factor * noise_factor^T` has the ground-truth axis as
/// an eigenvector with standard deviation `noise_scale`; the remaining
/// directions are a seeded orthonormal frame with standard deviations spread
/// linearly from `noise_scale` down to `0.75 noise_scale`. Because the axis is an
/// eigendirection, the population discriminant direction is exactly the axis.
#[derive(Clone, Debug)]
pub struct StageParams {
    pub stage: u32,
    pub base_mean: DVector<f64>,
    pub axis: DVector<f64>,
    pub half_gap: f64,
    pub noise_factor: DMatrix<f64>,
}

impl StageParams {
    pub fn mean(&self, side: Side) -> DVector<f64> {
        match side {
            Side::Positive => &self.base_mean + &self.axis * self.half_gap,
            Side::Negative => &self.base_mean - &self.axis * self.half_gap,
            Side::Neutral => self.base_mean.clone(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.noise_factor * self.noise_factor.transpose()
    }
}

pub fn stage_params(spec: &ConceptSpec, stage: u32) -> Result<StageParams> {
    spec.validate()?;
    let axis = spec.axis_vector().ok_or_else(|| {
        Error::Config("synthetic sampling needs ground_truth_axis to be set".into())
    })?;
    let d = spec.dim;
    let seed = spec.embedding_seed;

    let mut base_rng = CounterRng::for_purpose(seed, &[tags::BASE_MEAN]);
    let base = DVector::from_vec(base_rng.normal_vec(d)) * spec.base_mean_scale;
    let mut drift_rng = CounterRng::for_purpose(seed, &[tags::MEAN_DRIFT]);
    let drift = DVector::from_vec(drift_rng.normal_vec(d)) * (0.05 * spec.base_mean_scale);
    let base_mean = base + drift * f64::from(stage.saturating_sub(1));

    // Orthonormal frame whose first column is the axis.
    let mut cov_rng = CounterRng::for_purpose(seed, &[tags::STAGE_COVARIANCE, u64::from(stage)]);
    let mut frame: Vec<DVector<f64>> = vec![axis.clone()];
    while frame.len() < d {
        let mut v = DVector::from_vec(cov_rng.normal_vec(d));
        for _ in 0..2 {
            for q in &frame {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            frame.push(v / n);
        }
    }
    let mut noise_factor = DMatrix::zeros(d, d);
    for (j, q) in frame.iter().enumerate() {
        let std = if j == 0 {
            spec.noise_scale
        } else {
            let frac = if d > 2 { (d - 1 - j) as f64 / (d - 2) as f64 } else { 1.0 };
            spec.noise_scale * (0.75 + 0.25 * frac)
        };
        noise_factor.set_column(j, &(q * std));
    }

    Ok(StageParams {
        stage,
        base_mean,
        axis,
        half_gap: spec.ground_truth_gap / 2.0,
        noise_factor,
    })
}

/// Samples `n_samples * height * width` feature vectors of one side at one
/// stage. Deterministic in all inputs.
pub fn synth_concept_sampler(
    spec: &ConceptSpec,
    stage: u32,
    side: Side,
    n_samples: usize,
    seed: u64,
) -> Result<FeatureSet> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let params = stage_params(spec, stage)?;
    let total = checked_len(n_samples, spec.height, spec.width, spec.dim)?;
    let d = spec.dim;
    let mean = params.mean(side);
    let mut rng = CounterRng::for_purpose(
        seed,
        &[tags::FEATURE_SAMPLES, u64::from(stage), side.index()],
    );
    let mut data = Vec::with_capacity(total);
    let mut xi = DVector::zeros(d);
    for _ in 0..total / d {
        for v in xi.iter_mut() {
            *v = rng.normal();
        }
        let f = &mean + &params.noise_factor * &xi;
        data.extend(f.iter().map(|&x| x as f32));
    }
    FeatureSet::new(
        side,
        stage,
        n_samples,
        spec.height,
        spec.width,
        spec.dim,
        seed,
        data,
    )
}
