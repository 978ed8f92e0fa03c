//! Score-distillation editing of splat scenes toward a slider target,
//! restricted to the primitives whose renders move the concept readout most.

mod encoder;
mod queue;
mod run;
mod schedule;
mod sds;
mod sensitivity;
mod target;

pub use encoder::{encode_backward, encode_latents, EncoderConfig, LatentEncoder, LatentGrid};
pub use queue::DropOldestQueue;
pub use run::{
    edit_loop, read_trace, trace_to_jsonl, write_trace, EditConfig, EditEvent, EditOutcome, EditRunner,
    EventKind, Progress, StepRecord,
};
pub use schedule::{add_noise, toy_denoiser, DiffusionSchedule, Weighting};
pub use sds::{sds_gradient, sds_step, LearningRates, SceneOptimizer, SdsGradient};
pub use sensitivity::{
    concept_alignment, concept_coordinate, measure_alignment, select_primitives, selection_count,
    sensitivity_scores, SensitivityReport,
};
pub use target::{axis_target, slider_target, TargetMode};
