//! The `acs` command line.
//!
//! Every command reads one [`RunConfig`] (`--config`, `--set`, `ACS_SEED`)
//! and writes under `--out` with the names in [`files`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::adapter::{slider_response, LossRecord, LowRankAdapter};
use crate::axis::ConceptAxisModel;
use crate::config::{self, RunConfig, StageData, SEED_ENV};
use crate::edit::{trace_to_jsonl, EditConfig, EditEvent, EditRunner, StepRecord, TargetMode};
use crate::error::{Error, Result};
use crate::features::{read_feature_file, write_feature_file, Side};
use crate::plot::{image_png, line_chart, strip_png, write_file, Series};
use crate::report::{emit_report, Inputs};
use crate::splat::{Image, SplatScene};

/// Output file names under `--out`.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const FEATURES: &str = "features";
    pub const AXIS: &str = "axis.json";
    pub const ADAPTER: &str = "adapter.json";
    pub const ADAPTER_LOSS: &str = "adapter_loss.jsonl";
    pub const ADAPTER_PLOT: &str = "adapter_loss.png";
    pub const SCENE_EDITED: &str = "scene_edited.json";
    pub const TRACE: &str = "trace.jsonl";
    pub const EVENTS: &str = "events.jsonl";
    pub const TRACE_PLOT: &str = "trace.png";
    pub const FRAME_INITIAL: &str = "frame_initial.png";
    pub const FRAME_FINAL: &str = "frame_final.png";
    pub const SWEEP: &str = "sweep";
    pub const SWEEP_SUMMARY: &str = "sweep.json";
    pub const SWEEP_STRIP: &str = "sweep_strip.png";
    pub const REPORT: &str = "report.json";

    /// `features/stage03_positive.acsf`
    pub fn feature(stage: u32, side: crate::features::Side) -> String {
        format!("{FEATURES}/stage{stage:02}_{}.acsf", side.as_str())
    }
}

pub mod exit {
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const MISSING: i32 = 4;
    pub const FORMAT: i32 = 5;
    pub const INVARIANT: i32 = 6;
    pub const NUMERIC: i32 = 7;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::MissingFile { .. } | Error::Io { .. } => exit::MISSING,
        Error::Format { .. } | Error::Json(_) => exit::FORMAT,
        Error::Invariant(_) => exit::INVARIANT,
        Error::Numerical(_) | Error::NonFinite { .. } => exit::NUMERIC,
        _ => exit::OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "acs", version, about = "Concept sliders for Gaussian-splat scenes")]
pub struct Cli {
    /// JSON run config; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `edit.gamma=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample feature sets for every stage and side.
    GenData,
    /// Fit the concept axis and attribute bases.
    FitAxis,
    /// Train the slider adapter.
    TrainAdapter,
    /// Edit the scene at one slider value, or across a sweep.
    Edit {
        /// Slider value; defaults to `edit.alpha`.
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        /// Comma-separated slider values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sweep: Option<Vec<f64>>,
    },
    /// Run the acceptance suite.
    Report,
    /// Serve the live editing API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// Parses `argv` and runs it. Returns the process exit status; failures
/// print `{"error": kind, "code": n, "message": ...}` on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            eprintln!("{}", json!({ "error": "usage", "code": exit::USAGE, "message": e.kind().to_string() }));
            return exit::USAGE;
        }
        Err(e) => {
            print!("{e}");
            return 0;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({ "error": e.kind(), "code": code, "message": e.to_string() }));
            code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.set, env_seed.as_deref())?;
    let out = &cli.out;
    if !matches!(cli.command, Command::Serve { .. }) {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_file(out.join(files::CONFIG), cfg.to_json()?.as_bytes())?;
    }
    match &cli.command {
        Command::GenData => gen_data(&cfg, out),
        Command::FitAxis => fit_axis(&cfg, out),
        Command::TrainAdapter => train_adapter(&cfg, out),
        Command::Edit { alpha, sweep } => edit(&cfg, out, *alpha, sweep.as_deref()),
        Command::Report => report(&cfg, out),
        Command::Serve { port, host } => crate::service::serve_blocking(&cfg, out, host, *port),
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = config::generate_data(cfg)?;
    let dir = out.join(files::FEATURES);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for d in &data {
        for (side, fs) in [(Side::Positive, &d.positive), (Side::Negative, &d.negative), (Side::Neutral, &d.neutral)] {
            write_feature_file(fs, out.join(files::feature(d.stage, side)))?;
        }
    }
    summary(json!({ "command": "gen-data", "stages": data.len(), "files": data.len() * 3 }));
    Ok(())
}

/// Feature sets from `out/features/` when present, generated otherwise.
fn load_data(cfg: &RunConfig, out: &Path) -> Result<Vec<StageData>> {
    if !out.join(files::FEATURES).is_dir() {
        return config::generate_data(cfg);
    }
    (1..=cfg.data.t_stages as u32)
        .map(|stage| {
            let read = |side| read_feature_file(out.join(files::feature(stage, side)));
            Ok(StageData {
                stage,
                positive: read(Side::Positive)?,
                negative: read(Side::Negative)?,
                neutral: read(Side::Neutral)?,
            })
        })
        .collect()
}

/// The configured path, else `out/<name>` if it exists.
fn artifact(configured: &Option<PathBuf>, out: &Path, name: &str) -> Option<PathBuf> {
    configured.clone().or_else(|| Some(out.join(name)).filter(|p| p.exists()))
}

fn axis_model(cfg: &RunConfig, out: &Path) -> Result<ConceptAxisModel> {
    match artifact(&cfg.paths.axis, out, files::AXIS) {
        Some(p) => ConceptAxisModel::load(p),
        None => config::fit_axis(cfg, &load_data(cfg, out)?),
    }
}

fn fit_axis(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = config::fit_axis(cfg, &load_data(cfg, out)?)?;
    model.save(out.join(files::AXIS))?;
    let truth = model.spec.axis_vector();
    let agreement: Option<Vec<f64>> = truth.map(|g| model.stages.iter().map(|s| s.axis.b_c.dot(&g).abs()).collect());
    let min = agreement.as_ref().map(|a| a.iter().copied().fold(f64::INFINITY, f64::min));
    summary(json!({
        "command": "fit-axis",
        "stages": model.t_stages(),
        "k": model.k,
        "ground_truth_agreement": agreement,
        "min_ground_truth_agreement": min,
    }));
    Ok(())
}

fn write_losses(path: PathBuf, losses: &[LossRecord]) -> Result<()> {
    let mut text = String::new();
    for r in losses {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn train_adapter(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = axis_model(cfg, out)?;
    let gen = config::generator(cfg)?;
    let (adapter, losses) = crate::adapter::train_adapter(&gen, &model, &cfg.adapter)?;
    adapter.save(out.join(files::ADAPTER))?;
    write_losses(out.join(files::ADAPTER_LOSS), &losses)?;
    let total: Vec<f64> = losses.iter().map(|r| r.loss).collect();
    let slide: Vec<f64> = losses.iter().map(|r| r.slide).collect();
    let chart = line_chart(
        &[Series { ys: &total, color: [40, 40, 40] }, Series { ys: &slide, color: [200, 40, 40] }],
        &[],
        640,
        360,
    )?;
    write_file(out.join(files::ADAPTER_PLOT), &chart)?;
    let alphas = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let response = slider_response(&gen, &adapter, &model, &alphas, 64, cfg.seed)?;
    summary(json!({
        "command": "train-adapter",
        "steps": losses.len(),
        "final_loss": total.last(),
        "alphas": alphas,
        "slider_response": response,
    }));
    Ok(())
}

/// Model, adapter and scene for editing, from configured paths, then the
/// output directory, then built in memory.
pub fn edit_inputs(cfg: &RunConfig, out: &Path) -> Result<Inputs> {
    let model = axis_model(cfg, out)?;
    let adapter = match artifact(&cfg.paths.adapter, out, files::ADAPTER) {
        Some(p) => Some(LowRankAdapter::load(p)?),
        None if cfg.edit.target_mode == TargetMode::Adapter => Some(config::train(cfg, &model)?.0),
        None => None,
    };
    Ok(Inputs {
        model,
        adapter,
        scene: config::initial_scene(cfg)?,
    })
}

pub struct EditSummary {
    pub initial_coord: f64,
    pub final_coord: f64,
    pub steps: usize,
    pub final_frame: Image,
}

fn events_jsonl(events: &[EditEvent]) -> Result<String> {
    let mut text = String::new();
    for e in events {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    Ok(text)
}

/// One edit at `alpha`, with scene, trace, events, chart and frames written
/// into `dir`.
pub fn edit_outputs(
    cfg: &RunConfig,
    model: &ConceptAxisModel,
    adapter: Option<&LowRankAdapter>,
    scene: &SplatScene,
    alpha: f64,
    dir: &Path,
) -> Result<EditSummary> {
    let ecfg = EditConfig { alpha, ..cfg.edit.clone() };
    let mut runner = EditRunner::new(scene.clone(), model, adapter, &ecfg)?;
    let (_, initial_coord) = runner.measure()?;
    let first = runner.render_frame(ecfg.frame_size)?;
    let mut trace: Vec<StepRecord> = Vec::with_capacity(ecfg.total_steps);
    for _ in 0..ecfg.total_steps {
        trace.push(runner.step()?);
    }
    let last = runner.render_frame(ecfg.frame_size)?;
    let final_coord = trace.last().map_or(initial_coord, |r| r.coord);

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    runner.scene().save(dir.join(files::SCENE_EDITED))?;
    write_file(dir.join(files::TRACE), trace_to_jsonl(&trace)?.as_bytes())?;
    write_file(dir.join(files::EVENTS), events_jsonl(runner.events())?.as_bytes())?;
    let coords: Vec<f64> = trace.iter().map(|r| r.coord).collect();
    let markers: Vec<usize> = runner
        .events()
        .iter()
        .filter(|e| e.step > 0)
        .map(|e| e.step - 1)
        .collect();
    write_file(
        dir.join(files::TRACE_PLOT),
        &line_chart(&[Series { ys: &coords, color: [200, 40, 40] }], &markers, 640, 360)?,
    )?;
    write_file(dir.join(files::FRAME_INITIAL), &image_png(&first)?)?;
    write_file(dir.join(files::FRAME_FINAL), &image_png(&last)?)?;
    Ok(EditSummary {
        initial_coord,
        final_coord,
        steps: trace.len(),
        final_frame: last,
    })
}

fn edit(cfg: &RunConfig, out: &Path, alpha: Option<f64>, sweep: Option<&[f64]>) -> Result<()> {
    if let Some(a) = alpha.iter().chain(sweep.into_iter().flatten()).find(|a| !a.is_finite()) {
        return Err(Error::Config(format!("alpha must be finite, got {a}")));
    }
    let inputs = edit_inputs(cfg, out)?;
    let adapter = inputs.adapter.as_ref();
    if alpha.is_some() || sweep.is_none() {
        let a = alpha.unwrap_or(cfg.edit.alpha);
        let s = edit_outputs(cfg, &inputs.model, adapter, &inputs.scene, a, out)?;
        summary(json!({
            "command": "edit",
            "alpha": a,
            "steps": s.steps,
            "initial_coord": s.initial_coord,
            "final_coord": s.final_coord,
        }));
    }
    if let Some(alphas) = sweep {
        let mut finals = Vec::new();
        let mut frames = Vec::new();
        for (i, &a) in alphas.iter().enumerate() {
            let dir = out.join(files::SWEEP).join(format!("alpha_{i:02}"));
            let s = edit_outputs(cfg, &inputs.model, adapter, &inputs.scene, a, &dir)?;
            finals.push(s.final_coord);
            frames.push(s.final_frame);
        }
        if !frames.is_empty() {
            write_file(out.join(files::SWEEP_STRIP), &strip_png(&frames)?)?;
        }
        let doc = json!({ "alphas": alphas, "final_coords": finals });
        write_file(out.join(files::SWEEP_SUMMARY), serde_json::to_string_pretty(&doc)?.as_bytes())?;
        summary(json!({ "command": "edit", "sweep": alphas, "final_coords": finals }));
    }
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = edit_inputs(cfg, out)?;
    let report = emit_report(cfg, &inputs, Some(out))?;
    for line in report.lines() {
        println!("{line}");
    }
    let failed: Vec<u32> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("criteria {failed:?} failed; see {}", out.join(files::REPORT).display())))
    }
}
