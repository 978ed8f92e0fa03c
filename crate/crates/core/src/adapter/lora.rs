use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ToyGenerator, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

#[derive(Clone, Debug, PartialEq)]
pub struct StageFactors {
    /// `D x r`
    pub a: DMatrix<f64>,
    /// `r x (E + D)`
    pub b: DMatrix<f64>,
}

/// Per-stage rank-`r` weight shift `Delta W_t = A_t B_t`, applied at scale
/// `alpha` as `W_t + alpha * A_t B_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter {
    pub rank: usize,
    pub stages: Vec<StageFactors>,
    pub trained_steps: usize,
    pub config: TrainConfig,
    pub seed: u64,
}

impl LowRankAdapter {
    /// Output-side `A = 0`, input-side `B ~ N(0, init_std^2)`: the initial
    /// shift is exactly zero and the first updates to `A` follow a fixed,
    /// non-zero `B x`.
    pub fn init(gen: &ToyGenerator, cfg: &TrainConfig) -> Result<Self> {
        if cfg.rank == 0 {
            return Err(Error::Config("adapter rank must be >= 1".into()));
        }
        let d = gen.dim();
        let n_in = gen.input_dim();
        let stages = (1..=gen.t_stages() as u64)
            .map(|t| {
                let mut rng = CounterRng::for_purpose(cfg.seed, &[tags::ADAPTER_INIT, t]);
                StageFactors {
                    a: DMatrix::zeros(d, cfg.rank),
                    b: DMatrix::from_fn(cfg.rank, n_in, |_, _| rng.normal() * cfg.init_std),
                }
            })
            .collect();
        Ok(Self {
            rank: cfg.rank,
            stages,
            trained_steps: 0,
            config: cfg.clone(),
            seed: cfg.seed,
        })
    }

    pub fn t_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, stage: u32) -> Result<&StageFactors> {
        (stage as usize)
            .checked_sub(1)
            .and_then(|i| self.stages.get(i))
            .ok_or_else(|| {
                Error::Config(format!("adapter has no stage {stage} (T = {})", self.stages.len()))
            })
    }

    pub(crate) fn stage_mut(&mut self, stage: u32) -> &mut StageFactors {
        &mut self.stages[stage as usize - 1]
    }
}

/// Effective weights `W_t + alpha * A_t B_t`. Any finite `alpha` is accepted,
/// including values outside the training range.
pub fn adapter_apply(
    gen: &ToyGenerator,
    adapter: &LowRankAdapter,
    alpha: f64,
    stage: u32,
) -> Result<DMatrix<f64>> {
    let sw = gen.stage_weights(stage)?;
    let f = adapter.stage(stage)?;
    if f.a.nrows() != sw.w.nrows() || f.b.ncols() != sw.w.ncols() {
        return Err(Error::Shape("adapter factors do not match generator".into()));
    }
    Ok(&sw.w + (&f.a * &f.b) * alpha)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    d: usize,
    input: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StagePayload {
    stage: u32,
    /// Column-major `f32` LE.
    a: String,
    b: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterFile {
    rank: usize,
    #[serde(rename = "T_stages")]
    t_stages: usize,
    dims: Dims,
    config: TrainConfig,
    seed: u64,
    trained_steps: usize,
    stages: Vec<StagePayload>,
}

fn encode_matrix(m: &DMatrix<f64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for v in m.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_matrix(s: &str, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::format(0, format!("{what}: bad base64: {e}")))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::format(
            0,
            format!("{what}: {} bytes, expected {}", bytes.len(), rows * cols * 4),
        ));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(0, format!("{what}: non-finite value")));
    }
    Ok(DMatrix::from_vec(rows, cols, vals))
}

impl LowRankAdapter {
    /// Factors are stored as `f32`, so a saved adapter reloads with `f32`
    /// precision.
    pub fn to_json(&self) -> Result<String> {
        let first = self
            .stages
            .first()
            .ok_or_else(|| Error::Config("adapter has no stages".into()))?;
        let file = AdapterFile {
            rank: self.rank,
            t_stages: self.stages.len(),
            dims: Dims {
                d: first.a.nrows(),
                input: first.b.ncols(),
            },
            config: self.config.clone(),
            seed: self.seed,
            trained_steps: self.trained_steps,
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| StagePayload {
                    stage: i as u32 + 1,
                    a: encode_matrix(&s.a),
                    b: encode_matrix(&s.b),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: AdapterFile = serde_json::from_str(text)
            .map_err(|e| Error::format(0, format!("adapter file: {e}")))?;
        if file.stages.len() != file.t_stages {
            return Err(Error::format(0, "stage count does not match T_stages"));
        }
        let stages = file
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.stage as usize != i + 1 {
                    return Err(Error::format(0, format!("stage {} out of order", s.stage)));
                }
                Ok(StageFactors {
                    a: decode_matrix(&s.a, file.dims.d, file.rank, "A")?,
                    b: decode_matrix(&s.b, file.rank, file.dims.input, "B")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rank: file.rank,
            stages,
            trained_steps: file.trained_steps,
            config: file.config,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
