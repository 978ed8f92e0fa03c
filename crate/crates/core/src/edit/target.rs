use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adapter::{LowRankAdapter, ToyGenerator};
use crate::axis::ConceptAxisModel;
use crate::error::{Error, Result};
use crate::features::Side;
use crate::rng::{derive_seed, tags};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Mean adapted generator output for the neutral concept.
    #[default]
    Adapter,
    /// Closed form on the fitted axis:
    /// `(mu_p + mu_n)/2 + (alpha/2) (b_c . (mu_p - mu_n)) b_c`.
    Axis,
}

/// Axis-mode target for one stage.
pub fn axis_target(model: &ConceptAxisModel, stage: u32, alpha: f64) -> Result<DVector<f64>> {
    let sa = model.stage(stage)?;
    let mid = (&sa.mu_p + &sa.mu_n) * 0.5;
    Ok(mid + &sa.axis.b_c * (0.5 * alpha * sa.axis_gap()))
}

/// Target latent `m(alpha)` for every stage `1..=t_stages`.
///
/// In adapter mode each stage's target is the mean of `draws` neutral
/// generator outputs at scale `alpha`, with the same noise seeds used by
/// [`crate::adapter::slider_response`].
pub fn slider_target(
    model: &ConceptAxisModel,
    adapter: Option<&LowRankAdapter>,
    alpha: f64,
    mode: TargetMode,
    t_stages: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if !alpha.is_finite() {
        return Err(Error::Config("alpha must be finite".into()));
    }
    if t_stages == 0 || t_stages > model.t_stages() {
        return Err(Error::Config(format!(
            "target needs {t_stages} stages, axis model has {}",
            model.t_stages()
        )));
    }
    match mode {
        TargetMode::Axis => (1..=t_stages as u32).map(|t| axis_target(model, t, alpha)).collect(),
        TargetMode::Adapter => {
            let adapter = adapter
                .ok_or_else(|| Error::Config("adapter target mode needs an adapter".into()))?;
            if adapter.t_stages() < t_stages {
                return Err(Error::Config(format!(
                    "adapter has {} stages, target needs {t_stages}",
                    adapter.t_stages()
                )));
            }
            if draws == 0 {
                return Err(Error::Config("target draws must be >= 1".into()));
            }
            let gen = ToyGenerator::new(&model.spec, t_stages)?;
            let inputs: Vec<_> = (0..draws)
                .map(|s| gen.input(Side::Neutral, derive_seed(seed, &[tags::TARGET_DRAWS, s as u64])))
                .collect();
            (1..=t_stages as u32)
                .map(|t| {
                    let mut m = DVector::zeros(gen.dim());
                    for x in &inputs {
                        m += gen.forward_input(Some(adapter), alpha, t, x)?;
                    }
                    Ok(m / draws as f64)
                })
                .collect()
        }
    }
}
