#![allow(dead_code)]

use concept_slider::axis::{fit_axis_model, ConceptAxisModel, DEFAULT_RIDGE_FACTOR};
use concept_slider::features::{synth_concept_sampler, ConceptSpec, Side};
use concept_slider::splat::{logit, GaussianPrimitive};

/// Axis model over 10 stages fitted on 20 samples per side.
pub fn axis_model(seed: u64, base_mean_scale: f64) -> (ConceptSpec, ConceptAxisModel) {
    let mut spec = ConceptSpec::synthetic(16, seed).unwrap();
    spec.base_mean_scale = base_mean_scale;
    let pairs: Vec<_> = (1..=10u32)
        .map(|s| {
            (
                synth_concept_sampler(&spec, s, Side::Positive, 20, seed + 11).unwrap(),
                synth_concept_sampler(&spec, s, Side::Negative, 20, seed + 12).unwrap(),
            )
        })
        .collect();
    let model = fit_axis_model(&spec, &pairs, 8, DEFAULT_RIDGE_FACTOR).unwrap();
    (spec, model)
}

pub fn prim(mu: [f64; 2], scale: [f64; 2], rot: f64, opacity: f64, color: [f64; 3]) -> GaussianPrimitive {
    GaussianPrimitive {
        mu,
        scale,
        rot,
        opacity_pre: logit(opacity),
        color,
    }
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
