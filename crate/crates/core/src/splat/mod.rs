//! Differentiable 2D Gaussian-splat scenes.
//!
//! Primitives are composited front to back in insertion order over a black
//! background. Each pixel centre is mapped into scene space by the inverse of
//! the view transform, so shapes are defined once in scene units.

mod render;
mod scene_file;
mod synthetic;
mod topology;
mod view;

use serde::{Deserialize, Serialize};

pub use render::{
    render, render_backward, render_backward_cached, render_backward_views, render_backward_views_cached,
    render_cached, render_views, render_views_cached, RenderCache, FALLOFF_CUTOFF,
};
pub use scene_file::SCENE_VERSION;
pub use synthetic::{synthetic_scene, SyntheticSceneConfig};
pub use topology::{densify, prune, split_opacity_pre};
pub use view::{canonical_view, sample_view, sample_views, View, ViewConfig};

use crate::error::{Error, Result};

/// Scalars per primitive in the flat parameter layout:
/// `[mu_x, mu_y, sx, sy, rot, opacity_pre, r, g, b]`.
pub const PARAMS_PER_PRIMITIVE: usize = 9;

/// Offsets into one primitive's block of the flat layout.
pub mod param {
    pub const MU_X: usize = 0;
    pub const MU_Y: usize = 1;
    pub const SCALE_X: usize = 2;
    pub const SCALE_Y: usize = 3;
    pub const ROT: usize = 4;
    pub const OPACITY: usize = 5;
    pub const RED: usize = 6;
    pub const GREEN: usize = 7;
    pub const BLUE: usize = 8;
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPrimitive {
    pub mu: [f64; 2],
    pub scale: [f64; 2],
    pub rot: f64,
    pub opacity_pre: f64,
    pub color: [f64; 3],
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_pre)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .mu
            .iter()
            .chain(&self.scale)
            .chain(&self.color)
            .chain([&self.rot, &self.opacity_pre])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract("primitive has non-finite parameters".into()));
        }
        if !(self.scale[0] > 0.0 && self.scale[1] > 0.0) {
            return Err(Error::Contract(format!(
                "primitive scales must be > 0, got {:?}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        [
            self.mu[0],
            self.mu[1],
            self.scale[0],
            self.scale[1],
            self.rot,
            self.opacity_pre,
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            mu: [p[0], p[1]],
            scale: [p[2], p[3]],
            rot: p[4],
            opacity_pre: p[5],
            color: [p[6], p[7], p[8]],
        }
    }
}

/// Primitives plus the per-primitive bookkeeping that must stay index-aligned
/// with them.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub selection: Vec<bool>,
    pub step: usize,
    /// Sum of positional-gradient norms since the last densify.
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
}

impl SplatScene {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        let m = primitives.len();
        Self {
            primitives,
            selection: vec![false; m],
            step: 0,
            grad_accum: vec![0.0; m],
            grad_count: vec![0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.selection.iter().filter(|&&s| s).count()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.selection.len() != m || self.grad_accum.len() != m || self.grad_count.len() != m {
            return Err(Error::Contract("scene bookkeeping is not index-aligned".into()));
        }
        self.primitives.iter().try_for_each(GaussianPrimitive::validate)
    }

    pub fn params(&self) -> Vec<f64> {
        self.primitives.iter().flat_map(|p| p.to_params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.len() * PARAMS_PER_PRIMITIVE {
            return Err(Error::Shape(format!(
                "{} parameters for {} primitives",
                params.len(),
                self.len()
            )));
        }
        for (p, chunk) in self
            .primitives
            .iter_mut()
            .zip(params.chunks_exact(PARAMS_PER_PRIMITIVE))
        {
            *p = GaussianPrimitive::from_params(chunk);
        }
        Ok(())
    }

    /// Adds `|dC/dmu_i|` of one update to the densification statistics.
    pub fn accumulate_position_grads(&mut self, grads: &[f64]) {
        for (i, g) in grads.chunks_exact(PARAMS_PER_PRIMITIVE).enumerate() {
            if self.selection[i] {
                self.grad_accum[i] += g[param::MU_X].hypot(g[param::MU_Y]);
                self.grad_count[i] += 1;
            }
        }
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0);
    }
}

/// Row-major (y, then x) RGBA image with `f64` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 4],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * 4;
        &self.data[o..o + 4]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * 4;
        &mut self.data[o..o + 4]
    }

    /// 8-bit RGBA composited over black, alpha forced opaque.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        self.data
            .chunks_exact(4)
            .flat_map(|p| [q(p[0]), q(p[1]), q(p[2]), 255])
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
