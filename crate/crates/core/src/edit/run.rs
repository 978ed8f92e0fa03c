use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, LatentEncoder};
use super::schedule::{DiffusionSchedule, Weighting};
use super::sds::{sds_step, LearningRates, SceneOptimizer};
use super::sensitivity::{measure_alignment, select_primitives, sensitivity_scores};
use super::target::{slider_target, TargetMode};
use crate::adapter::LowRankAdapter;
use crate::axis::ConceptAxisModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tags, CounterRng};
use crate::splat::{canonical_view, densify, prune, render, sample_views, Image, SplatScene, View, ViewConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub total_steps: usize,
    /// Prune or densify every this many steps.
    pub event_every: usize,
    /// Events at steps up to and including this one prune only; later ones
    /// densify then prune.
    pub prune_only_until: usize,
    pub views_per_step: usize,
    pub sensitivity_views: usize,
    pub eval_views: usize,
    pub gamma: f64,
    pub t_stages: usize,
    pub weighting: Weighting,
    pub lr: LearningRates,
    pub min_scale: f64,
    pub prune_threshold: f64,
    pub densify_threshold: f64,
    pub densify_jitter: f64,
    pub seed: u64,
    pub alpha: f64,
    pub target_mode: TargetMode,
    pub target_draws: usize,
    /// Stage whose concept axis defines the alignment readout.
    pub readout_stage: u32,
    pub view: ViewConfig,
    pub encoder: EncoderConfig,
    /// Side length of the canonical frame handed to progress callbacks.
    pub frame_size: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            total_steps: 1200,
            event_every: 200,
            prune_only_until: 600,
            views_per_step: 4,
            sensitivity_views: 8,
            eval_views: 8,
            gamma: 0.05,
            t_stages: 10,
            weighting: Weighting::OneMinusAlphaBar,
            lr: LearningRates::default(),
            min_scale: 1e-3,
            prune_threshold: 0.01,
            densify_threshold: 1.0,
            densify_jitter: 0.01,
            seed: 0,
            alpha: 0.0,
            target_mode: TargetMode::Adapter,
            target_draws: 64,
            readout_stage: 1,
            view: ViewConfig::default(),
            encoder: EncoderConfig::default(),
            frame_size: 64,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.event_every == 0 {
            return Err(Error::Config("edit.event_every must be >= 1".into()));
        }
        if self.views_per_step == 0 || self.sensitivity_views == 0 || self.eval_views == 0 {
            return Err(Error::Config("edit view counts must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("edit.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.t_stages == 0 {
            return Err(Error::Config("edit.t_stages must be >= 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("edit.alpha must be finite".into()));
        }
        if !(self.min_scale > 0.0) || !(self.prune_threshold >= 0.0) {
            return Err(Error::Config("edit.min_scale must be > 0 and prune_threshold >= 0".into()));
        }
        if !(self.densify_threshold >= 0.0) || !(self.densify_jitter >= 0.0) {
            return Err(Error::Config("edit densify threshold and jitter must be >= 0".into()));
        }
        if self.frame_size == 0 {
            return Err(Error::Config("edit.frame_size must be >= 1".into()));
        }
        self.lr.validate()?;
        self.view.validate()
    }

    /// Whether an event runs after update `step`, and whether it densifies.
    pub fn event_at(&self, step: usize) -> Option<EventKind> {
        if step == 0 || step > self.total_steps || !step.is_multiple_of(self.event_every) {
            None
        } else if step <= self.prune_only_until {
            Some(EventKind::Prune)
        } else {
            Some(EventKind::Densify)
        }
    }
}

/// One line of the trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub cbar: f64,
    pub coord: f64,
    pub loss_sds: f64,
    pub selected: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Prune only.
    Prune,
    /// Densify followed by prune.
    Densify,
    Select,
    Alpha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditEvent {
    pub kind: EventKind,
    pub step: usize,
    pub primitives: usize,
    pub selected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloned: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub removed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Stateful editing session: owns the scene and performs one update per
/// [`EditRunner::step`] call. The slider value can change between steps.
#[derive(Clone, Debug)]
pub struct EditRunner {
    cfg: EditConfig,
    model: ConceptAxisModel,
    adapter: Option<LowRankAdapter>,
    encoder: LatentEncoder,
    schedule: DiffusionSchedule,
    readout: DVector<f64>,
    targets: Vec<DVector<f64>>,
    sensitivity_views: Vec<View>,
    eval_views: Vec<View>,
    opt: SceneOptimizer,
    scene: SplatScene,
    alpha: f64,
    step: usize,
    events: Vec<EditEvent>,
}

impl EditRunner {
    /// Prepares targets, views and the initial selection (recorded as a
    /// `select` event at step 0).
    pub fn new(
        scene: SplatScene,
        model: &ConceptAxisModel,
        adapter: Option<&LowRankAdapter>,
        cfg: &EditConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        if cfg.t_stages > model.t_stages() {
            return Err(Error::Config(format!(
                "edit.t_stages {} exceeds axis model stages {}",
                cfg.t_stages,
                model.t_stages()
            )));
        }
        let encoder = LatentEncoder::new(model.dim(), &cfg.encoder)?;
        encoder.grid(cfg.view.height, cfg.view.width)?;
        let schedule = DiffusionSchedule::cosine(cfg.t_stages, cfg.weighting)?;
        let readout = model.stage(cfg.readout_stage)?.axis.b_c.clone();
        let targets = slider_target(
            model,
            adapter,
            cfg.alpha,
            cfg.target_mode,
            cfg.t_stages,
            cfg.target_draws,
            cfg.seed,
        )?;
        let sensitivity_views = sample_views(cfg.seed, tags::SENSITIVITY_VIEWS, cfg.sensitivity_views, &cfg.view);
        let eval_views = sample_views(cfg.seed, tags::EVAL_VIEWS, cfg.eval_views, &cfg.view);
        let opt = SceneOptimizer::new(scene.len(), cfg.lr, cfg.min_scale);
        let mut runner = Self {
            cfg: cfg.clone(),
            model: model.clone(),
            adapter: adapter.cloned(),
            encoder,
            schedule,
            readout,
            targets,
            sensitivity_views,
            eval_views,
            opt,
            scene,
            alpha: cfg.alpha,
            step: 0,
            events: Vec::new(),
        };
        if cfg.total_steps > 0 {
            runner.recompute_selection()?;
        }
        Ok(runner)
    }

    pub fn config(&self) -> &EditConfig {
        &self.cfg
    }

    pub fn scene(&self) -> &SplatScene {
        &self.scene
    }

    pub fn into_scene(self) -> SplatScene {
        self.scene
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Completed updates.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn events(&self) -> &[EditEvent] {
        &self.events
    }

    pub fn encoder(&self) -> &LatentEncoder {
        &self.encoder
    }

    pub fn readout_axis(&self) -> &DVector<f64> {
        &self.readout
    }

    pub fn eval_views(&self) -> &[View] {
        &self.eval_views
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }

    /// Swaps in the target for a new slider value; takes effect at the next
    /// step. Returns `false` (and does nothing) if `alpha` is unchanged.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<bool> {
        if !alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if alpha == self.alpha {
            return Ok(false);
        }
        self.targets = slider_target(
            &self.model,
            self.adapter.as_ref(),
            alpha,
            self.cfg.target_mode,
            self.cfg.t_stages,
            self.cfg.target_draws,
            self.cfg.seed,
        )?;
        self.alpha = alpha;
        self.events.push(EditEvent {
            kind: EventKind::Alpha,
            step: self.step,
            primitives: self.scene.len(),
            selected: self.scene.selected_count(),
            cloned: None,
            removed: None,
            alpha: Some(alpha),
        });
        Ok(true)
    }

    /// Rescores every primitive on the sensitivity views and reselects the
    /// top `ceil(gamma M)`. Returns the number selected.
    pub fn recompute_selection(&mut self) -> Result<usize> {
        self.scene.selection = if self.scene.is_empty() {
            Vec::new()
        } else {
            let report = sensitivity_scores(&self.scene, &self.sensitivity_views, &self.readout, &self.encoder)?;
            select_primitives(&report, self.cfg.gamma)?
        };
        let selected = self.scene.selected_count();
        self.push_event(EventKind::Select, None, None);
        Ok(selected)
    }

    /// Changes the selection fraction and reselects immediately.
    pub fn set_gamma(&mut self, gamma: f64) -> Result<usize> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        self.cfg.gamma = gamma;
        self.recompute_selection()
    }

    fn push_event(&mut self, kind: EventKind, cloned: Option<usize>, removed: Option<usize>) {
        self.events.push(EditEvent {
            kind,
            step: self.step,
            primitives: self.scene.len(),
            selected: self.scene.selected_count(),
            cloned,
            removed,
            alpha: None,
        });
    }

    /// Alignment and concept coordinate of the current scene on the fixed
    /// evaluation views.
    pub fn measure(&self) -> Result<(f64, f64)> {
        measure_alignment(&self.scene, &self.eval_views, &self.readout, &self.encoder)
    }

    /// Canonical front view at `size x size` pixels.
    pub fn render_frame(&self, size: usize) -> Result<Image> {
        render(&self.scene, &canonical_view(&self.cfg.view, size, size))
    }

    /// One update plus the alignment readout on the evaluation views.
    pub fn step(&mut self) -> Result<StepRecord> {
        let loss_sds = self.update()?;
        let (cbar, coord) = self.measure()?;
        if !(cbar.is_finite() && coord.is_finite()) {
            return Err(Error::NonFinite {
                step: self.step,
                what: "concept alignment".into(),
            });
        }
        Ok(StepRecord {
            step: self.step,
            cbar,
            coord,
            loss_sds,
            selected: self.scene.selected_count(),
        })
    }

    /// One score-distillation update, followed by a scheduled prune or
    /// densify event when one falls on this step. Returns the SDS loss.
    pub fn update(&mut self) -> Result<f64> {
        let s = self.step + 1;
        let cfg = &self.cfg;
        let step_seed = derive_seed(cfg.seed, &[tags::SDS_STEP, s as u64]);
        let t = 1 + CounterRng::for_purpose(step_seed, &[tags::SDS_STEP]).below(cfg.t_stages as u64) as u32;
        let views = sample_views(step_seed, tags::VIEW, cfg.views_per_step, &cfg.view);
        let mask = self.scene.selection.clone();
        let g = sds_step(
            &mut self.scene,
            &views,
            &self.encoder,
            &self.schedule,
            &self.targets[t as usize - 1],
            t,
            step_seed,
            &mask,
            &mut self.opt,
        )?;
        if !g.loss.is_finite() || g.grads.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: s,
                what: "sds gradient".into(),
            });
        }
        self.scene.accumulate_position_grads(&g.grads);
        self.step = s;
        self.scene.step = s;

        if let Some(kind) = self.cfg.event_at(s) {
            let before = self.scene.len();
            let mut cloned = None;
            if kind == EventKind::Densify {
                let origin = densify(
                    &mut self.scene,
                    self.cfg.densify_threshold,
                    self.cfg.densify_jitter,
                    self.cfg.seed,
                )?;
                self.opt.remap(&origin);
                cloned = Some(self.scene.len() - before);
            }
            let mid = self.scene.len();
            let kept = prune(&mut self.scene, self.cfg.prune_threshold);
            self.opt.remap(&kept);
            self.push_event(kind, cloned, Some(mid - self.scene.len()));
            self.recompute_selection()?;
        }
        Ok(g.loss)
    }
}

/// Result of [`edit_loop`].
#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub scene: SplatScene,
    pub trace: Vec<StepRecord>,
    pub events: Vec<EditEvent>,
}

/// Callback invoked after every step with the step record and a frame of the
/// canonical view. It runs on the editing thread, so it should hand the frame
/// off (for example through a [`super::DropOldestQueue`]) rather than block.
pub type Progress<'a> = &'a mut dyn FnMut(&StepRecord, &Image);

/// Runs `cfg.total_steps` updates from the initial selection.
pub fn edit_loop(
    scene: SplatScene,
    model: &ConceptAxisModel,
    adapter: Option<&LowRankAdapter>,
    cfg: &EditConfig,
    mut progress: Option<Progress<'_>>,
) -> Result<EditOutcome> {
    let mut runner = EditRunner::new(scene, model, adapter, cfg)?;
    let mut trace = Vec::with_capacity(cfg.total_steps);
    for _ in 0..cfg.total_steps {
        let rec = runner.step()?;
        if let Some(cb) = progress.as_mut() {
            let frame = runner.render_frame(cfg.frame_size)?;
            cb(&rec, &frame);
        }
        trace.push(rec);
    }
    let events = runner.events().to_vec();
    Ok(EditOutcome {
        scene: runner.into_scene(),
        trace,
        events,
    })
}

/// JSON lines, one [`StepRecord`] per line.
pub fn trace_to_jsonl(trace: &[StepRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(trace_to_jsonl(trace)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::format(offset, format!("trace line: {e}")))?,
            );
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}
