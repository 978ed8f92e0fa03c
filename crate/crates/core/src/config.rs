//! Run configuration: one JSON document covering every stage, plus the
//! pipeline helpers the CLI, report and service share.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapter::{train_adapter, LossRecord, LowRankAdapter, ToyGenerator, TrainConfig};
use crate::axis::{fit_axis_model, ConceptAxisModel, DEFAULT_RIDGE_FACTOR};
use crate::edit::EditConfig;
use crate::error::{Error, Result};
use crate::features::{synth_concept_sampler, ConceptSpec, FeatureSet, Side};
use crate::splat::{synthetic_scene, SplatScene, SyntheticSceneConfig};

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "ACS_SEED";

/// Synthetic concept data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dim: usize,
    /// Samples per side and stage (`N_s`).
    pub samples: usize,
    pub t_stages: usize,
    pub height: usize,
    pub width: usize,
    pub gap: f64,
    pub noise_scale: f64,
    pub base_mean_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            samples: 20,
            t_stages: 10,
            height: 8,
            width: 8,
            gap: 1.0,
            noise_scale: 0.25,
            base_mean_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisConfig {
    /// Attribute bases per stage (`K`).
    pub k: usize,
    pub ridge_factor: f64,
}

impl Default for AxisConfig {
    fn default() -> Self {
        Self {
            k: 8,
            ridge_factor: DEFAULT_RIDGE_FACTOR,
        }
    }
}

/// Optional artifact locations. Unset paths fall back to the files the CLI
/// writes under its output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scene: Option<PathBuf>,
    pub axis: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub max_alpha: f64,
    pub frame_queue: usize,
    pub trace_ring: usize,
    /// Static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub multi_session: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_alpha: 3.0,
            frame_queue: 8,
            trace_ring: 2000,
            static_dir: None,
            multi_session: false,
        }
    }
}

/// Everything a run needs. `seed` is copied into every stage at
/// [`RunConfig::finalize`], so the per-stage `seed` fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub axis: AxisConfig,
    pub adapter: TrainConfig,
    pub scene: SyntheticSceneConfig,
    pub edit: EditConfig,
    pub paths: PathsConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataConfig::default(),
            axis: AxisConfig::default(),
            adapter: TrainConfig::default(),
            scene: SyntheticSceneConfig::default(),
            edit: EditConfig::default(),
            paths: PathsConfig::default(),
            service: ServiceConfig::default(),
        };
        cfg.finalize();
        cfg
    }
}

impl RunConfig {
    /// Parses a JSON document, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.finalize();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Config file (or defaults), then `--set` overrides, then `ACS_SEED`,
    /// then validation.
    pub fn resolve(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for o in overrides {
            cfg = cfg.with_override(o)?;
        }
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
        }
        cfg.finalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `dotted.key=value` override. The value is parsed as JSON
    /// when possible and taken as a string otherwise.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(self)?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("override key {key:?}: {part:?} is not inside an object")))?;
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("override key {key:?}: unknown field {part:?}")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.get_mut(*part).expect("checked above");
        }
        let mut cfg: Self =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))?;
        cfg.finalize();
        Ok(cfg)
    }

    /// Propagates the shared seed and stage count into the stage configs.
    pub fn finalize(&mut self) {
        self.adapter.seed = self.seed;
        self.edit.seed = self.seed;
        self.adapter.t_stages = self.data.t_stages;
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.samples == 0 || d.t_stages == 0 {
            return Err(Error::Config("data.samples and data.t_stages must be >= 1".into()));
        }
        if self.axis.k == 0 || self.axis.k >= d.dim {
            return Err(Error::Config(format!("axis.k must lie in 1..{}, got {}", d.dim, self.axis.k)));
        }
        if !(self.axis.ridge_factor >= 0.0) {
            return Err(Error::Config("axis.ridge_factor must be >= 0".into()));
        }
        if self.edit.t_stages > d.t_stages {
            return Err(Error::Config(format!(
                "edit.t_stages {} exceeds data.t_stages {}",
                self.edit.t_stages, d.t_stages
            )));
        }
        let s = &self.service;
        if !(s.max_alpha > 0.0 && s.max_alpha.is_finite()) || s.frame_queue == 0 || s.trace_ring == 0 {
            return Err(Error::Config(
                "service.max_alpha must be > 0 and queue sizes >= 1".into(),
            ));
        }
        self.spec()?.validate()?;
        self.adapter.validate()?;
        self.edit.validate()
    }

    /// Synthetic concept spec for this run.
    pub fn spec(&self) -> Result<ConceptSpec> {
        let d = &self.data;
        let mut spec = ConceptSpec::synthetic(d.dim, self.seed)?;
        spec.height = d.height;
        spec.width = d.width;
        spec.ground_truth_gap = d.gap;
        spec.noise_scale = d.noise_scale;
        spec.base_mean_scale = d.base_mean_scale;
        Ok(spec)
    }
}

/// Feature sets of one stage.
#[derive(Clone, Debug)]
pub struct StageData {
    pub stage: u32,
    pub positive: FeatureSet,
    pub negative: FeatureSet,
    pub neutral: FeatureSet,
}

pub fn generate_data(cfg: &RunConfig) -> Result<Vec<StageData>> {
    let spec = cfg.spec()?;
    let n = cfg.data.samples;
    (1..=cfg.data.t_stages as u32)
        .map(|stage| {
            let draw = |side| synth_concept_sampler(&spec, stage, side, n, cfg.seed);
            Ok(StageData {
                stage,
                positive: draw(Side::Positive)?,
                negative: draw(Side::Negative)?,
                neutral: draw(Side::Neutral)?,
            })
        })
        .collect()
}

pub fn fit_axis(cfg: &RunConfig, data: &[StageData]) -> Result<ConceptAxisModel> {
    let pairs: Vec<(FeatureSet, FeatureSet)> =
        data.iter().map(|d| (d.positive.clone(), d.negative.clone())).collect();
    fit_axis_model(&cfg.spec()?, &pairs, cfg.axis.k, cfg.axis.ridge_factor)
}

pub fn generator(cfg: &RunConfig) -> Result<ToyGenerator> {
    ToyGenerator::new(&cfg.spec()?, cfg.data.t_stages)
}

pub fn train(cfg: &RunConfig, model: &ConceptAxisModel) -> Result<(LowRankAdapter, Vec<LossRecord>)> {
    train_adapter(&generator(cfg)?, model, &cfg.adapter)
}

/// The scene from `paths.scene`, or the seeded synthetic scene.
pub fn initial_scene(cfg: &RunConfig) -> Result<SplatScene> {
    match &cfg.paths.scene {
        Some(p) => SplatScene::load(p),
        None => synthetic_scene(&cfg.scene, cfg.seed),
    }
}

/// Everything an edit needs, built in memory.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub model: ConceptAxisModel,
    pub adapter: LowRankAdapter,
    pub losses: Vec<LossRecord>,
    pub scene: SplatScene,
}

impl Pipeline {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let data = generate_data(cfg)?;
        let model = fit_axis(cfg, &data)?;
        let (adapter, losses) = train(cfg, &model)?;
        Ok(Self {
            model,
            adapter,
            losses,
            scene: initial_scene(cfg)?,
        })
    }
}
