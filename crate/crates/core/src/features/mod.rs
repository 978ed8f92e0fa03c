//! Labeled feature sets for the two sides (and the neutral midpoint) of a
//! concept, the seeded synthetic sampler that produces them, and the `ACSF`
//! binary file format.
//!
//! Features are stored as `f32` (matching the on-disk format, so a write/read
//! round trip is exact) and promoted to `f64` for every computation.
//!
//! The synthetic sampler is a stand-in for sampling intermediate latents of a
//! diffusion model; which layer or resolution such latents would come from is
//! not modeled. Each stage plays the role of one denoising timestep.

mod file;
mod synth;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use file::{read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{stage_params, synth_concept_sampler, StageParams};

use crate::error::{Error, Result};
use crate::linalg::ensure_same_dim;
use crate::rng::{tags, CounterRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
    Neutral,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Positive => "positive",
            Side::Negative => "negative",
            Side::Neutral => "neutral",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            Side::Positive => 0,
            Side::Negative => 1,
            Side::Neutral => 2,
        }
    }
}

/// A concept given by two opposing labels plus a neutral prompt, and the
/// parameters of its synthetic feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSpec {
    pub name: String,
    pub positive_label: String,
    pub negative_label: String,
    pub neutral_label: String,
    pub embedding_seed: u64,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    /// Unit direction separating the synthetic class means.
    pub ground_truth_axis: Option<Vec<f64>>,
    /// Distance between the synthetic class means along `ground_truth_axis`.
    pub ground_truth_gap: f64,
    /// Largest per-direction noise standard deviation (the std along the axis).
    pub noise_scale: f64,
    /// Scale of the seeded neutral mean.
    pub base_mean_scale: f64,
}

impl ConceptSpec {
    /// Seeded synthetic concept with a random ground-truth axis.
    pub fn synthetic(dim: usize, embedding_seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {dim}")));
        }
        let mut rng = CounterRng::for_purpose(embedding_seed, &[tags::AXIS_DIRECTION]);
        let raw = DVector::from_vec(rng.normal_vec(dim));
        let axis = raw.normalize();
        Ok(Self {
            name: "synthetic".into(),
            positive_label: "positive extreme".into(),
            negative_label: "negative extreme".into(),
            neutral_label: "neutral".into(),
            embedding_seed,
            dim,
            height: 8,
            width: 8,
            ground_truth_axis: Some(axis.iter().copied().collect()),
            ground_truth_gap: 1.0,
            noise_scale: 0.25,
            base_mean_scale: 0.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("height and width must be positive".into()));
        }
        if let Some(axis) = &self.ground_truth_axis {
            ensure_same_dim(axis.len(), self.dim, "ground_truth_axis")?;
            let n = crate::linalg::norm(axis);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "ground_truth_axis must have unit norm, got {n}"
                )));
            }
        }
        if !(self.ground_truth_gap >= 0.0) || !self.ground_truth_gap.is_finite() {
            return Err(Error::Config("ground_truth_gap must be finite and >= 0".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.base_mean_scale >= 0.0) {
            return Err(Error::Config("noise and mean scales must be >= 0".into()));
        }
        Ok(())
    }

    pub fn axis_vector(&self) -> Option<DVector<f64>> {
        self.ground_truth_axis
            .as_ref()
            .map(|a| DVector::from_column_slice(a))
    }
}

/// Dense feature vectors of one concept side at one stage.
///
/// `data` holds `samples * height * width` vectors of length `dim`, sample
/// major, then `y`, then `x`, then channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub side: Side,
    pub stage: u32,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub seed: u64,
    pub data: Vec<f32>,
}

impl FeatureSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        side: Side,
        stage: u32,
        samples: usize,
        height: usize,
        width: usize,
        dim: usize,
        seed: u64,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = checked_len(samples, height, width, dim)?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "feature data has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            side,
            stage,
            samples,
            height,
            width,
            dim,
            seed,
            data,
        })
    }

    /// Number of feature vectors (`samples * height * width`).
    pub fn len(&self) -> usize {
        self.samples * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Err(Error::Shape("empty feature set".into()));
        }
        let mut acc = DVector::zeros(self.dim);
        for v in self.vectors() {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x as f64;
            }
        }
        Ok(acc / self.len() as f64)
    }
}

pub(crate) fn checked_len(samples: usize, height: usize, width: usize, dim: usize) -> Result<usize> {
    samples
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(dim))
        .filter(|&v| v <= (isize::MAX as usize) / 8)
        .ok_or_else(|| {
            Error::Size(format!(
                "feature set {samples}x{height}x{width}x{dim} overflows addressable size"
            ))
        })
}

/// Per-side means over all vectors of each set.
pub fn class_means(pos: &FeatureSet, neg: &FeatureSet) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_same_dim(pos.dim, neg.dim, "class_means")?;
    if pos.side != Side::Positive || neg.side != Side::Negative {
        return Err(Error::Shape(format!(
            "class_means expects (positive, negative), got ({}, {})",
            pos.side.as_str(),
            neg.side.as_str()
        )));
    }
    Ok((pos.mean()?, neg.mean()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(side: Side, dim: usize, data: Vec<f32>) -> FeatureSet {
        let n = data.len() / dim;
        FeatureSet::new(side, 1, n, 1, 1, dim, 0, data).unwrap()
    }

    #[test]
    fn mean_of_two_vectors() {
        let pos = set(Side::Positive, 2, vec![1.0, 0.0, 3.0, 0.0]);
        let neg = set(Side::Negative, 2, vec![1.0, 0.0, 3.0, 0.0]);
        let (mp, mn) = class_means(&pos, &neg).unwrap();
        assert_eq!(mp.as_slice(), &[2.0, 0.0]);
        assert_eq!(mp, mn);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let pos = set(Side::Positive, 2, vec![1.0, 0.0]);
        let neg = set(Side::Negative, 3, vec![1.0, 0.0, 0.0]);
        assert!(matches!(class_means(&pos, &neg), Err(Error::Shape(_))));
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(FeatureSet::new(Side::Positive, 1, 2, 1, 1, 2, 0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureSet::new(Side::Positive, 1, 1, 1, 1, 2, 0, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn synthetic_spec_is_valid() {
        let spec = ConceptSpec::synthetic(16, 3).unwrap();
        spec.validate().unwrap();
        assert!(ConceptSpec::synthetic(1, 3).is_err());
    }
}
