use nalgebra::{DMatrix, DVector};

use super::LowRankAdapter;
use crate::error::{Error, Result};
use crate::features::{stage_params, ConceptSpec, Side};
use crate::rng::{tags, CounterRng};

/// Embedding width of the toy concept embeddings.
pub const EMBED_DIM: usize = 8;
/// Default standard deviation of embedding entries. The base generator output
/// does not depend on it (the mean map absorbs the scale), but the adapter's
/// reach per optimizer step grows with the input norm.
pub const DEFAULT_EMBED_STD: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct StageWeights {
    /// `D x (E + D)` frozen mean map.
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Frozen linear generator `f = W_t concat(embed(c), xi) + bias_t`.
///
/// Built from the same stage distributions as the synthetic sampler: without
/// an adapter, `f(c_p)`, `f(c_n)` and `f(c_nu)` follow exactly the positive,
/// negative and neutral feature distributions.
#[derive(Clone, Debug)]
pub struct ToyGenerator {
    pub spec: ConceptSpec,
    pub embeddings: [DVector<f64>; 3],
    pub stages: Vec<StageWeights>,
}

impl ToyGenerator {
    pub fn new(spec: &ConceptSpec, t_stages: usize) -> Result<Self> {
        Self::with_embed_std(spec, t_stages, DEFAULT_EMBED_STD)
    }

    pub fn with_embed_std(spec: &ConceptSpec, t_stages: usize, embed_std: f64) -> Result<Self> {
        if !(embed_std > 0.0 && embed_std.is_finite()) {
            return Err(Error::Config("embedding std must be > 0".into()));
        }
        if t_stages == 0 {
            return Err(Error::Config("t_stages must be >= 1".into()));
        }
        let d = spec.dim;
        let mut rng = CounterRng::for_purpose(spec.embedding_seed, &[tags::EMBEDDINGS]);
        let mut embed = || DVector::from_vec(rng.normal_vec(EMBED_DIM)) * embed_std;
        let embeddings = [embed(), embed(), embed()];
        // X = [e_p e_n e_nu] (E x 3)
        let x = DMatrix::from_columns(&embeddings);
        let gram_inv = (x.transpose() * &x)
            .try_inverse()
            .ok_or_else(|| Error::Numerical("degenerate concept embeddings".into()))?;
        let pinv = gram_inv * x.transpose(); // 3 x E

        let mut stages = Vec::with_capacity(t_stages);
        for t in 1..=t_stages as u32 {
            let p = stage_params(spec, t)?;
            let offset = |s: Side| p.mean(s) - &p.base_mean;
            let y = DMatrix::from_columns(&[
                offset(Side::Positive),
                offset(Side::Negative),
                offset(Side::Neutral),
            ]);
            let mean_map = y * &pinv; // D x E, maps each embedding to its offset
            let mut w = DMatrix::zeros(d, EMBED_DIM + d);
            w.view_mut((0, 0), (d, EMBED_DIM)).copy_from(&mean_map);
            w.view_mut((0, EMBED_DIM), (d, d)).copy_from(&p.noise_factor);
            stages.push(StageWeights {
                w,
                bias: p.base_mean.clone(),
            });
        }
        Ok(Self {
            spec: spec.clone(),
            embeddings,
            stages,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn input_dim(&self) -> usize {
        EMBED_DIM + self.spec.dim
    }

    pub fn t_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn embedding(&self, side: Side) -> &DVector<f64> {
        &self.embeddings[side.index() as usize]
    }

    pub(crate) fn stage_weights(&self, stage: u32) -> Result<&StageWeights> {
        (stage as usize)
            .checked_sub(1)
            .and_then(|i| self.stages.get(i))
            .ok_or_else(|| {
                Error::Config(format!("stage {stage} outside [1, {}]", self.stages.len()))
            })
    }

    /// Generator input `concat(embed(c), xi)` with `xi` drawn from `seed` alone,
    /// so adapted and base calls with the same seed share their noise.
    pub fn input(&self, side: Side, seed: u64) -> DVector<f64> {
        let d = self.dim();
        let mut rng = CounterRng::for_purpose(seed, &[tags::GENERATOR_NOISE]);
        let mut x = DVector::zeros(EMBED_DIM + d);
        x.rows_mut(0, EMBED_DIM).copy_from(self.embedding(side));
        for i in 0..d {
            x[EMBED_DIM + i] = rng.normal();
        }
        x
    }

    /// Output for a prepared input; the adapter shift is applied as
    /// `W x + alpha * A (B x)` without forming `A B`.
    pub(crate) fn forward_input(
        &self,
        adapter: Option<&LowRankAdapter>,
        alpha: f64,
        stage: u32,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let sw = self.stage_weights(stage)?;
        let mut f = &sw.w * x + &sw.bias;
        if let Some(ad) = adapter {
            let fac = ad.stage(stage)?;
            if fac.a.nrows() != self.dim() || fac.b.ncols() != x.len() {
                return Err(Error::Shape("adapter factors do not match generator".into()));
            }
            if alpha != 0.0 {
                let h = &fac.b * x;
                f += (&fac.a * h) * alpha;
            }
        }
        Ok(f)
    }

    pub fn forward(
        &self,
        adapter: Option<&LowRankAdapter>,
        alpha: f64,
        side: Side,
        stage: u32,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let x = self.input(side, seed);
        self.forward_input(adapter, alpha, stage, &x)
    }
}

/// Free-function form of [`ToyGenerator::forward`].
pub fn generator_forward(
    gen: &ToyGenerator,
    adapter: Option<&LowRankAdapter>,
    alpha: f64,
    concept: Side,
    stage: u32,
    seed: u64,
) -> Result<DVector<f64>> {
    gen.forward(adapter, alpha, concept, stage, seed)
}
