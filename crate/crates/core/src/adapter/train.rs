use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{preserving_loss, sliding_loss_with, LowRankAdapter, SlidingMode, ToyGenerator};
use crate::axis::ConceptAxisModel;
use crate::error::{Error, Result};
use crate::features::Side;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, tags, CounterRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub rank: usize,
    pub alpha_range: [f64; 2],
    pub w_slide: f64,
    pub w_preserve: f64,
    pub lr: f64,
    pub batch: usize,
    pub t_stages: usize,
    pub seed: u64,
    /// Standard deviation of the initial `B` entries.
    pub init_std: f64,
    pub mode: SlidingMode,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            rank: 4,
            alpha_range: [-1.0, 1.0],
            w_slide: 0.5,
            w_preserve: 0.5,
            lr: 2e-4,
            batch: 1,
            t_stages: 10,
            seed: 0,
            init_std: 0.5,
            mode: SlidingMode::Literal,
            adam: AdamConfig {
                weight_decay: 0.01,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.alpha_range;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.steps == 0 {
            return bad("adapter.steps must be >= 1");
        }
        if self.rank == 0 {
            return bad("adapter.rank must be >= 1");
        }
        if self.batch == 0 {
            return bad("adapter.batch must be >= 1");
        }
        if self.t_stages == 0 {
            return bad("adapter.t_stages must be >= 1");
        }
        if !(self.w_slide >= 0.0 && self.w_preserve >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if !(-1.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("alpha_range must satisfy -1 <= lo < hi <= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.init_std >= 0.0) {
            return bad("lr must be > 0 and init_std >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub stage: u32,
    pub alpha: f64,
    pub loss: f64,
    pub slide: f64,
    pub preserve: f64,
}

/// Seed of the paired noise draw for step `step`, batch item `j`.
fn draw_seed(seed: u64, step: usize, j: usize) -> u64 {
    derive_seed(seed, &[tags::TRAIN_STEP, step as u64, j as u64])
}

pub fn train_adapter(
    gen: &ToyGenerator,
    model: &ConceptAxisModel,
    cfg: &TrainConfig,
) -> Result<(LowRankAdapter, Vec<LossRecord>)> {
    cfg.validate()?;
    if gen.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "generator dim {} != axis model dim {}",
            gen.dim(),
            model.dim()
        )));
    }
    if model.t_stages() < cfg.t_stages || gen.t_stages() < cfg.t_stages {
        return Err(Error::Config(format!(
            "t_stages {} exceeds stages available (model {}, generator {})",
            cfg.t_stages,
            model.t_stages(),
            gen.t_stages()
        )));
    }
    let preserve_on = cfg.w_preserve > 0.0;
    for t in 1..=cfg.t_stages as u32 {
        if preserve_on && model.stage(t)?.bases.is_empty() {
            return Err(Error::Config(format!("stage {t} has no attribute bases")));
        }
    }

    let mut adapter = LowRankAdapter::init(gen, cfg)?;
    adapter.stages.truncate(cfg.t_stages);
    let (d, r, n_in) = (gen.dim(), cfg.rank, gen.input_dim());
    let mut states: Vec<(AdamState, AdamState)> = (0..cfg.t_stages)
        .map(|_| (AdamState::new(d * r), AdamState::new(r * n_in)))
        .collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    let [lo, hi] = cfg.alpha_range;

    for step in 0..cfg.steps {
        let mut rng = CounterRng::for_purpose(cfg.seed, &[tags::TRAIN_STEP, step as u64]);
        let stage = 1 + rng.below(cfg.t_stages as u64) as u32;
        let alpha = rng.uniform_in(lo, hi);
        let sa = model.stage(stage)?;

        let mut ga = DMatrix::zeros(d, r);
        let mut gb = DMatrix::zeros(r, n_in);
        let (mut slide_sum, mut preserve_sum) = (0.0, 0.0);
        for j in 0..cfg.batch {
            let x = gen.input(Side::Neutral, draw_seed(cfg.seed, step, j));
            let f_base = gen.forward_input(None, 0.0, stage, &x)?;
            let f = gen.forward_input(Some(&adapter), alpha, stage, &x)?;
            let (ls, gs) = sliding_loss_with(&f, &sa.axis.b_c, &sa.mu_p, &sa.mu_n, alpha, cfg.mode)?;
            let mut g: DVector<f64> = gs * cfg.w_slide;
            let mut lp = 0.0;
            if preserve_on {
                let (v, gp) = preserving_loss(&f, &f_base, &sa.bases)?;
                lp = v;
                g += gp * cfg.w_preserve;
            }
            slide_sum += ls;
            preserve_sum += lp;
            // f = W x + b + alpha A (B x)
            let fac = adapter.stage(stage)?;
            let h = &fac.b * &x;
            ga += (&g * h.transpose()) * alpha;
            gb += (fac.a.transpose() * &g) * x.transpose() * alpha;
        }
        let scale = 1.0 / cfg.batch as f64;
        let slide = slide_sum * scale;
        let preserve = preserve_sum * scale;
        let loss = cfg.w_slide * slide + cfg.w_preserve * preserve;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "adapter loss".into(),
            });
        }
        ga *= scale;
        gb *= scale;

        let (sa_state, sb_state) = &mut states[stage as usize - 1];
        let fac = adapter.stage_mut(stage);
        sa_state.step(&cfg.adam, fac.a.as_mut_slice(), ga.as_slice(), |_| cfg.lr);
        sb_state.step(&cfg.adam, fac.b.as_mut_slice(), gb.as_slice(), |_| cfg.lr);
        if fac.a.iter().chain(fac.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                what: "adapter factors".into(),
            });
        }
        trace.push(LossRecord {
            step,
            stage,
            alpha,
            loss,
            slide,
            preserve,
        });
    }
    adapter.trained_steps = cfg.steps;
    Ok((adapter, trace))
}

/// Per-alpha mean concept coordinate of the adapted neutral output over
/// `n_seeds` paired noise draws and all adapter stages.
pub fn slider_response(
    gen: &ToyGenerator,
    adapter: &LowRankAdapter,
    model: &ConceptAxisModel,
    alphas: &[f64],
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let stages = adapter.t_stages() as u32;
    let mut out = vec![0.0; alphas.len()];
    for t in 1..=stages {
        let b = &model.stage(t)?.axis.b_c;
        for s in 0..n_seeds {
            let x = gen.input(Side::Neutral, derive_seed(seed, &[tags::TARGET_DRAWS, s as u64]));
            for (o, &a) in out.iter_mut().zip(alphas) {
                *o += gen.forward_input(Some(adapter), a, t, &x)?.dot(b);
            }
        }
    }
    let n = (stages as usize * n_seeds) as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// Mean over stages, seeds and `alphas` of `sum_k |(f_alpha - f_0) . b_k|`.
pub fn attribute_drift(
    gen: &ToyGenerator,
    adapter: &LowRankAdapter,
    model: &ConceptAxisModel,
    alphas: &[f64],
    n_seeds: usize,
    seed: u64,
) -> Result<f64> {
    let stages = adapter.t_stages() as u32;
    let mut total = 0.0;
    for t in 1..=stages {
        let bases = &model.stage(t)?.bases;
        for s in 0..n_seeds {
            let x = gen.input(Side::Neutral, derive_seed(seed, &[tags::TARGET_DRAWS, s as u64]));
            let f0 = gen.forward_input(None, 0.0, t, &x)?;
            for &a in alphas {
                total += preserving_loss(&gen.forward_input(Some(adapter), a, t, &x)?, &f0, bases)?.0;
            }
        }
    }
    Ok(total / (stages as usize * n_seeds * alphas.len()) as f64)
}
