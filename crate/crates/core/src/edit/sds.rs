use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::encoder::{encode_backward, encode_latents, LatentEncoder, LatentGrid};
use super::schedule::{add_noise, toy_denoiser, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, MaskedAdam};
use crate::rng::{tags, CounterRng};
use crate::splat::{
    param, render_backward_views_cached, render_views_cached, Image, SplatScene, View, PARAMS_PER_PRIMITIVE,
};

/// Per-group learning rates for scene parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mean: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 5e-5,
            scale: 1e-3,
            rotation: 1e-2,
            color: 1e-2,
            opacity: 1e-2,
        }
    }
}

impl LearningRates {
    /// Rate for column `j` of the flat primitive layout.
    pub fn for_column(&self, j: usize) -> f64 {
        match j {
            param::MU_X | param::MU_Y => self.mean,
            param::SCALE_X | param::SCALE_Y => self.scale,
            param::ROT => self.rotation,
            param::OPACITY => self.opacity,
            _ => self.color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mean, self.scale, self.rotation, self.color, self.opacity];
        if all.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Gradient of one score-distillation step.
#[derive(Clone, Debug)]
pub struct SdsGradient {
    /// Flat per-primitive gradients; rows of unselected primitives are zero.
    pub grads: Vec<f64>,
    /// Clean encodings of the step's renders.
    pub latents: LatentGrid,
    /// `w(t)` times the mean squared norm of `eps_hat - eps`.
    pub loss: f64,
}

/// Renders `views`, encodes them, noises every latent with fresh `eps` drawn
/// from `seed`, queries the toy denoiser and backpropagates
/// `w(t) (eps_hat - eps)` through the encoder and renderer. Only rows with
/// `mask[i]` get gradients.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient(
    scene: &SplatScene,
    views: &[View],
    enc: &LatentEncoder,
    schedule: &DiffusionSchedule,
    m_target: &DVector<f64>,
    t: u32,
    seed: u64,
    mask: &[bool],
) -> Result<SdsGradient> {
    if mask.len() != scene.len() {
        return Err(Error::Shape(format!("mask has {} entries for {} primitives", mask.len(), scene.len())));
    }
    crate::linalg::ensure_same_dim(enc.dim, m_target.len(), "sds target")?;
    let ab = schedule.alpha_bar(t)?;
    let w = schedule.weight(t)?;
    let (images, caches): (Vec<Image>, Vec<_>) = render_views_cached(scene, views)?.into_iter().unzip();
    let latents = encode_latents(&images, enc)?;
    let mut dz = LatentGrid::zeros(latents.views, latents.height, latents.width, latents.dim);
    let mut sq = 0.0;
    for v in 0..latents.views {
        let mut rng = CounterRng::for_purpose(seed, &[tags::SDS_STEP, v as u64]);
        for i in latents.view_range(v) {
            let eps = rng.normal_vec(enc.dim);
            let z_t = add_noise(latents.latent(i), &eps, ab);
            let eps_hat = toy_denoiser(&z_t, t, m_target.as_slice(), schedule)?;
            for ((d, e_hat), e) in dz.latent_mut(i).iter_mut().zip(&eps_hat).zip(&eps) {
                *d = w * (e_hat - e);
                sq += (e_hat - e) * (e_hat - e);
            }
        }
    }
    let cells = latents.cells().max(1) as f64;
    let grads = if mask.iter().any(|&m| m) {
        render_backward_views_cached(scene, &caches, &encode_backward(&dz, enc), Some(mask))?
    } else {
        vec![0.0; scene.len() * PARAMS_PER_PRIMITIVE]
    };
    Ok(SdsGradient {
        grads,
        latents,
        loss: w * sq / cells,
    })
}

/// Adam over the scene's flat parameters with per-group rates. Only selected
/// rows move; after each update scales are floored at `min_scale` and colours
/// clamped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SceneOptimizer {
    pub adam: MaskedAdam,
    pub config: AdamConfig,
    pub lr: LearningRates,
    pub min_scale: f64,
}

impl SceneOptimizer {
    pub fn new(m: usize, lr: LearningRates, min_scale: f64) -> Self {
        Self {
            adam: MaskedAdam::new(m, PARAMS_PER_PRIMITIVE),
            config: AdamConfig {
                eps: 1e-15,
                ..AdamConfig::default()
            },
            lr,
            min_scale,
        }
    }

    pub fn apply(&mut self, scene: &mut SplatScene, grads: &[f64], mask: &[bool]) -> Result<()> {
        if self.adam.rows() != scene.len() || mask.len() != scene.len() {
            return Err(Error::Shape("optimizer state does not match scene".into()));
        }
        let mut params = scene.params();
        let lr = self.lr;
        self.adam.step(&self.config, &mut params, grads, mask, |j| lr.for_column(j));
        for (i, p) in scene.primitives.iter_mut().enumerate() {
            if !mask[i] {
                continue;
            }
            let row = &params[i * PARAMS_PER_PRIMITIVE..(i + 1) * PARAMS_PER_PRIMITIVE];
            *p = crate::splat::GaussianPrimitive::from_params(row);
            p.scale = p.scale.map(|s| s.max(self.min_scale));
            p.color = p.color.map(|c| c.clamp(0.0, 1.0));
        }
        Ok(())
    }

    /// Follows a prune or densify reindexing.
    pub fn remap(&mut self, origin: &[usize]) {
        self.adam.remap(origin);
    }
}

/// One full update: [`sds_gradient`] then [`SceneOptimizer::apply`].
#[allow(clippy::too_many_arguments)]
pub fn sds_step(
    scene: &mut SplatScene,
    views: &[View],
    enc: &LatentEncoder,
    schedule: &DiffusionSchedule,
    m_target: &DVector<f64>,
    t: u32,
    seed: u64,
    mask: &[bool],
    opt: &mut SceneOptimizer,
) -> Result<SdsGradient> {
    let g = sds_gradient(scene, views, enc, schedule, m_target, t, seed, mask)?;
    opt.apply(scene, &g.grads, mask)?;
    Ok(g)
}
