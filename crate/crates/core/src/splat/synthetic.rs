use serde::{Deserialize, Serialize};

use super::{logit, GaussianPrimitive, SplatScene};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

/// A few large opaque "body" primitives that cover the view, plus many tiny
/// faint "detail" primitives scattered around them, interleaved in a seeded
/// random order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneConfig {
    pub body: usize,
    pub detail: usize,
    pub body_scale: [f64; 2],
    pub body_opacity: f64,
    pub body_radius: f64,
    pub detail_scale: [f64; 2],
    pub detail_opacity: [f64; 2],
    pub detail_extent: f64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            body: 5,
            detail: 95,
            body_scale: [0.7, 1.1],
            body_opacity: 0.9,
            body_radius: 0.5,
            detail_scale: [0.03, 0.06],
            detail_opacity: [0.03, 0.08],
            detail_extent: 1.6,
        }
    }
}

pub fn synthetic_scene(cfg: &SyntheticSceneConfig, seed: u64) -> Result<SplatScene> {
    let ok_range = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
    if !ok_range(cfg.body_scale) || !ok_range(cfg.detail_scale) {
        return Err(Error::Config("scene scale ranges must satisfy 0 < lo <= hi".into()));
    }
    let opac_ok = |a: f64| a > 0.0 && a < 1.0;
    if !opac_ok(cfg.body_opacity) || !cfg.detail_opacity.iter().all(|&a| opac_ok(a)) {
        return Err(Error::Config("scene opacities must lie in (0, 1)".into()));
    }
    let mut rng = CounterRng::for_purpose(seed, &[tags::SCENE_INIT]);
    let mut prims = Vec::with_capacity(cfg.body + cfg.detail);
    for _ in 0..cfg.body {
        let r = cfg.body_radius * rng.uniform().sqrt();
        let th = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
        prims.push(GaussianPrimitive {
            mu: [r * th.cos(), r * th.sin()],
            scale: [
                rng.uniform_in(cfg.body_scale[0], cfg.body_scale[1]),
                rng.uniform_in(cfg.body_scale[0], cfg.body_scale[1]),
            ],
            rot: rng.uniform_in(0.0, std::f64::consts::PI),
            opacity_pre: logit(cfg.body_opacity),
            color: [rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7)],
        });
    }
    let ext = cfg.detail_extent;
    for _ in 0..cfg.detail {
        prims.push(GaussianPrimitive {
            mu: [rng.uniform_in(-ext, ext), rng.uniform_in(-ext, ext)],
            scale: [
                rng.uniform_in(cfg.detail_scale[0], cfg.detail_scale[1]),
                rng.uniform_in(cfg.detail_scale[0], cfg.detail_scale[1]),
            ],
            rot: rng.uniform_in(0.0, std::f64::consts::PI),
            opacity_pre: logit(rng.uniform_in(cfg.detail_opacity[0], cfg.detail_opacity[1])),
            color: [rng.uniform(), rng.uniform(), rng.uniform()],
        });
    }
    // Fisher-Yates
    for i in (1..prims.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        prims.swap(i, j);
    }
    let scene = SplatScene::new(prims);
    scene.validate()?;
    Ok(scene)
}
