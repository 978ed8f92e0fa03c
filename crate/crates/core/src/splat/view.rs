use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

/// Affine 2D camera. A pixel centre `q` maps to scene point
/// `R(rotation)^T ((q - c) / k - translation)` with `c` the image centre and
/// `k = (min(H, W) / 2) / zoom` pixels per scene unit, so `zoom` plays the
/// role of camera distance: larger values show more of the scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub rotation: f64,
    pub zoom: f64,
    pub translation: [f64; 2],
    pub height: usize,
    pub width: usize,
}

impl View {
    pub fn validate(&self) -> Result<()> {
        if !(self.zoom > 0.0 && self.zoom.is_finite()) {
            return Err(Error::Contract(format!("view zoom must be > 0, got {}", self.zoom)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Contract("view size must be positive".into()));
        }
        if !(self.rotation.is_finite() && self.translation.iter().all(|t| t.is_finite())) {
            return Err(Error::Contract("view has non-finite pose".into()));
        }
        Ok(())
    }

    pub fn pixels_per_unit(&self) -> f64 {
        (self.height.min(self.width) as f64 / 2.0) / self.zoom
    }

    /// Scene-space position of the centre of pixel `(y, x)`.
    pub fn pixel_to_scene(&self, y: usize, x: usize) -> [f64; 2] {
        let k = self.pixels_per_unit();
        let qx = (x as f64 + 0.5 - self.width as f64 / 2.0) / k - self.translation[0];
        let qy = (y as f64 + 0.5 - self.height as f64 / 2.0) / k - self.translation[1];
        let (s, c) = self.rotation.sin_cos();
        [c * qx + s * qy, -s * qx + c * qy]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub zoom_range: [f64; 2],
    pub rotation_range: [f64; 2],
    /// Translation is drawn uniformly from `[-t, t]^2`.
    pub translation_box: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            zoom_range: [1.5, 2.0],
            rotation_range: [-PI, PI],
            translation_box: 0.15,
            height: 16,
            width: 16,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        let [zl, zh] = self.zoom_range;
        let [rl, rh] = self.rotation_range;
        if !(zl > 0.0 && zl <= zh && zh.is_finite()) {
            return Err(Error::Config("view zoom_range must satisfy 0 < lo <= hi".into()));
        }
        if !(rl <= rh && rl.is_finite() && rh.is_finite()) {
            return Err(Error::Config("view rotation_range must satisfy lo <= hi".into()));
        }
        if !(self.translation_box >= 0.0) {
            return Err(Error::Config("view translation_box must be >= 0".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("view size must be positive".into()));
        }
        Ok(())
    }
}

pub fn sample_view(seed: u64, cfg: &ViewConfig) -> View {
    let mut rng = CounterRng::for_purpose(seed, &[tags::VIEW]);
    let zoom = rng.uniform_in(cfg.zoom_range[0], cfg.zoom_range[1]);
    let rotation = rng.uniform_in(cfg.rotation_range[0], cfg.rotation_range[1]);
    let t = cfg.translation_box;
    let translation = [rng.uniform_in(-t, t), rng.uniform_in(-t, t)];
    View {
        rotation,
        zoom,
        translation,
        height: cfg.height,
        width: cfg.width,
    }
}

/// `n` views from independent streams of `(seed, purpose, index)`.
pub fn sample_views(seed: u64, purpose: u64, n: usize, cfg: &ViewConfig) -> Vec<View> {
    (0..n)
        .map(|i| sample_view(crate::rng::derive_seed(seed, &[purpose, i as u64]), cfg))
        .collect()
}

/// Unrotated, untranslated view at the middle of the zoom range.
pub fn canonical_view(cfg: &ViewConfig, height: usize, width: usize) -> View {
    View {
        rotation: 0.0,
        zoom: 0.5 * (cfg.zoom_range[0] + cfg.zoom_range[1]),
        translation: [0.0, 0.0],
        height,
        width,
    }
}
