//! The acceptance suite behind `acs report`: every property is measured,
//! compared with its threshold and written out with the numbers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapter::{
    attribute_drift, preserving_loss, slider_response, sliding_loss, LowRankAdapter, TrainConfig,
};
use crate::axis::{
    attribute_bases, rayleigh_ratio, scatter_matrices, solve_concept_axis, AttributeBasisSet,
    ConceptAxisModel,
};
use crate::config::{self, RunConfig};
use crate::edit::{
    encode_latents, measure_alignment, sds_gradient, sensitivity_scores, DiffusionSchedule,
    EditConfig, EditEvent, EditRunner, EncoderConfig, EventKind, LatentEncoder, StepRecord,
    TargetMode,
};
use crate::error::{Error, Result};
use crate::features::{synth_concept_sampler, ConceptSpec, Side};
use crate::plot::{line_chart, write_file, Series};
use crate::rng::{tags, CounterRng};
use crate::splat::{
    canonical_view, logit, render, render_backward, render_views, sample_view, sample_views,
    GaussianPrimitive, Image, SplatScene, View, ViewConfig, PARAMS_PER_PRIMITIVE,
};

/// Sweep used by the slider checks.
pub const ALPHAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
/// Selection fractions of the efficiency table.
pub const GAMMAS: [f64; 4] = [0.01, 0.05, 0.2, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Criterion number, or 0 for supplementary properties.
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub summary: String,
    pub measured: Value,
}

impl Check {
    fn new(id: u32, name: &str, pass: bool, summary: String, measured: Value) -> Self {
        Self {
            id,
            name: name.into(),
            pass,
            summary,
            measured,
        }
    }

    /// `criterion N [PASS] name: summary`
    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        if self.id > 0 {
            format!("criterion {} [{tag}] {}: {}", self.id, self.name, self.summary)
        } else {
            format!("property [{tag}] {}: {}", self.name, self.summary)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub displacement: f64,
    pub ratio: f64,
    /// Mean over steps of selected / M.
    pub update_fraction: f64,
    pub ms_per_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub criteria: Vec<Check>,
    pub properties: Vec<Check>,
    pub gamma_sweep: Vec<GammaRow>,
    /// Whether the displacement ratio is non-decreasing in gamma.
    pub gamma_sweep_monotone: bool,
    /// All numbered criteria passed. Properties do not count.
    pub all_pass: bool,
    pub seconds: f64,
}

impl Report {
    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().chain(&self.properties).map(Check::line).collect()
    }

    pub fn criterion(&self, id: u32) -> Option<&Check> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

/// Model and adapter for the edit checks: loaded when `axis` / `adapter`
/// files are given, fitted or trained otherwise. A corrupt file aborts.
pub struct Inputs {
    pub model: ConceptAxisModel,
    pub adapter: Option<LowRankAdapter>,
    pub scene: SplatScene,
}

impl Inputs {
    pub fn resolve(cfg: &RunConfig, axis: Option<&Path>, adapter: Option<&Path>) -> Result<Self> {
        let model = match axis {
            Some(p) => ConceptAxisModel::load(p)?,
            None => config::fit_axis(cfg, &config::generate_data(cfg)?)?,
        };
        let adapter = match adapter {
            Some(p) => Some(LowRankAdapter::load(p)?),
            None if cfg.edit.target_mode == TargetMode::Adapter => Some(config::train(cfg, &model)?.0),
            None => None,
        };
        Ok(Self {
            model,
            adapter,
            scene: config::initial_scene(cfg)?,
        })
    }
}

/// Runs the whole suite. With `out`, writes `report.json` and the PNG plots
/// there and uses `out/determinism/` for the repeated edits.
pub fn emit_report(cfg: &RunConfig, inputs: &Inputs, out: Option<&Path>) -> Result<Report> {
    let start = Instant::now();
    let mut criteria = Vec::new();
    let mut properties = Vec::new();

    log::info!("report: axis checks");
    criteria.push(lda_oracle(50, 100)?);
    criteria.push(axis_recovery(cfg, 100)?);
    criteria.push(pca_deflation(20)?);
    criteria.push(loss_gradients(100)?);

    log::info!("report: adapter checks");
    let (c5, c6, slider) = adapter_checks(cfg)?;
    criteria.push(c5);
    criteria.push(c6);

    log::info!("report: renderer gradients");
    criteria.push(renderer_gradients()?);

    log::info!("report: edits");
    let adapter = inputs.adapter.as_ref();
    let mut sweep = Vec::new();
    for &alpha in &ALPHAS {
        let ecfg = EditConfig { alpha, ..cfg.edit.clone() };
        sweep.push(run_edit(&inputs.scene, &inputs.model, adapter, &ecfg, alpha == 1.0)?);
    }
    let at_one = sweep.pop().expect("five runs");
    let mut rows = Vec::new();
    let mut full = None;
    for &gamma in &GAMMAS {
        let run = if gamma == cfg.edit.gamma {
            None
        } else {
            let ecfg = EditConfig { gamma, alpha: 1.0, ..cfg.edit.clone() };
            Some(run_edit(&inputs.scene, &inputs.model, adapter, &ecfg, gamma == 1.0)?)
        };
        let r = run.as_ref().unwrap_or(&at_one);
        rows.push(GammaRow {
            gamma,
            displacement: r.displacement(),
            ratio: 0.0,
            update_fraction: r.update_fraction,
            ms_per_step: r.seconds_per_step * 1e3,
        });
        if gamma == 1.0 {
            full = run;
        }
    }
    let full = match full {
        Some(f) => f,
        None => {
            let ecfg = EditConfig { gamma: 1.0, alpha: 1.0, ..cfg.edit.clone() };
            run_edit(&inputs.scene, &inputs.model, adapter, &ecfg, true)?
        }
    };
    let d_full = full.displacement();
    for r in &mut rows {
        r.ratio = r.displacement / d_full;
    }
    let gamma_sweep_monotone = rows.windows(2).all(|w| w[1].ratio >= w[0].ratio);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.3} ({:.1}%)", r.gamma, r.ratio, r.update_fraction * 100.0))
        .collect();
    properties.push(Check::new(
        0,
        "gamma sweep displacement ratio non-decreasing",
        gamma_sweep_monotone,
        format!("ratio (updated fraction) {}", table.join(", ")),
        serde_json::to_value(&rows)?,
    ));
    criteria.push(selection_checks(cfg, &at_one, &full)?);
    criteria.push(sds_fixed_point(cfg, inputs)?);
    criteria.push(schedule_conformance(cfg, inputs, &at_one)?);
    criteria.push(determinism(cfg, inputs, out)?);

    sweep.push(at_one);
    let finals: Vec<f64> = sweep.iter().map(EditRun::final_coord).collect();
    let increasing = finals.windows(2).all(|w| w[1] > w[0]);
    properties.push(Check::new(
        0,
        "edit monotone slider sweep",
        increasing,
        format!("final coords {}", fmt_list(&finals)),
        json!({ "alphas": ALPHAS, "final_coords": finals }),
    ));
    properties.push(symmetric_midpoint(cfg)?);
    properties.push(Check::new(
        0,
        "adapter slider response",
        slider.windows(2).all(|w| w[1] > w[0]),
        format!("mean coords {}", fmt_list(&slider)),
        json!({ "alphas": ALPHAS, "coords": slider }),
    ));

    let all_pass = criteria.iter().all(|c| c.pass);
    let report = Report {
        seed: cfg.seed,
        criteria,
        properties,
        gamma_sweep: rows,
        gamma_sweep_monotone,
        all_pass,
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_file(dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        let coords: Vec<Vec<f64>> = sweep.iter().map(|r| r.trace.iter().map(|s| s.coord).collect()).collect();
        let palette = [[40, 70, 200], [90, 140, 220], [120, 120, 120], [230, 140, 60], [200, 40, 40]];
        let series: Vec<Series> = coords
            .iter()
            .zip(palette)
            .map(|(ys, color)| Series { ys, color })
            .collect();
        let markers = event_steps(&sweep[4].events);
        write_file(dir.join("report_sweep.png"), &line_chart(&series, &markers, 640, 360)?)?;
        let full_c: Vec<f64> = full.trace.iter().map(|s| s.coord).collect();
        let sel_c: Vec<f64> = sweep[4].trace.iter().map(|s| s.coord).collect();
        let pair = [
            Series { ys: &sel_c, color: [200, 40, 40] },
            Series { ys: &full_c, color: [40, 70, 200] },
        ];
        write_file(dir.join("report_selection.png"), &line_chart(&pair, &markers, 640, 360)?)?;
    }
    Ok(report)
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn event_steps(events: &[EditEvent]) -> Vec<usize> {
    events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Prune | EventKind::Densify))
        .map(|e| e.step.saturating_sub(1))
        .collect()
}

fn test_rng(seed: u64, what: u64) -> CounterRng {
    CounterRng::for_purpose(seed, &[tags::TEST, what])
}

fn lda_oracle(datasets: u64, probes: usize) -> Result<Check> {
    let t0 = Instant::now();
    let mut worst_cos = 1.0f64;
    let mut violations = 0;
    for seed in 0..datasets {
        let dim = 2 + (seed as usize % 15);
        let spec = ConceptSpec::synthetic(dim, seed)?;
        let pos = synth_concept_sampler(&spec, 1, Side::Positive, 20, seed)?;
        let neg = synth_concept_sampler(&spec, 1, Side::Negative, 20, seed)?;
        let sp = scatter_matrices(&pos, &neg)?;
        let ridge = sp.default_ridge(crate::axis::DEFAULT_RIDGE_FACTOR);
        let axis = solve_concept_axis(&sp, ridge)?;
        let m = &sp.s_w + DMatrix::identity(dim, dim) * ridge;
        let w = m
            .lu()
            .solve(&sp.mean_gap())
            .ok_or_else(|| Error::Numerical("oracle system is singular".into()))?
            .normalize();
        worst_cos = worst_cos.min(w.dot(&axis.b_c).abs());
        let best = rayleigh_ratio(&sp, ridge, &axis.b_c);
        let mut rng = test_rng(seed, 1);
        for _ in 0..probes {
            let p = DVector::from_vec(rng.normal_vec(dim));
            if rayleigh_ratio(&sp, ridge, &p) > best * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_cos >= 1.0 - 1e-9 && violations == 0 && secs < 5.0;
    Ok(Check::new(
        1,
        "LDA oracle equivalence",
        pass,
        format!(
            "min |cos| = 1 - {:.1e} over {datasets} datasets, {violations} Rayleigh violations in {} probes, {secs:.2} s",
            1.0 - worst_cos,
            datasets as usize * probes
        ),
        json!({ "min_abs_cos": worst_cos, "rayleigh_violations": violations, "seconds": secs }),
    ))
}

/// Recovery on the configured data shape, one axis per seed.
fn axis_recovery(cfg: &RunConfig, seeds: u64) -> Result<Check> {
    let mut hits = 0;
    let mut worst = 1.0f64;
    let base = cfg.spec()?;
    let ratio = base.ground_truth_gap / base.noise_scale;
    for seed in 0..seeds {
        let spec = RunConfig { seed, ..cfg.clone() }.spec()?;
        let pos = synth_concept_sampler(&spec, 1, Side::Positive, cfg.data.samples, seed)?;
        let neg = synth_concept_sampler(&spec, 1, Side::Negative, cfg.data.samples, seed)?;
        let sp = scatter_matrices(&pos, &neg)?;
        let axis = solve_concept_axis(&sp, sp.default_ridge(crate::axis::DEFAULT_RIDGE_FACTOR))?;
        let c = axis.b_c.dot(&spec.axis_vector().expect("synthetic spec has an axis")).abs();
        worst = worst.min(c);
        hits += (c >= 0.99) as u64;
    }
    let rate = hits as f64 / seeds as f64;
    Ok(Check::new(
        2,
        "ground-truth axis recovery",
        rate >= 0.95 && ratio >= 4.0,
        format!("|b_c . axis| >= 0.99 on {hits}/{seeds} seeds (worst {worst:.4}), gap/noise = {ratio}"),
        json!({ "hit_rate": rate, "worst": worst, "gap_over_noise": ratio }),
    ))
}

/// Sine of the largest principal angle between two orthonormal column sets.
fn max_principal_sine(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    let resid = q1 - q2 * (q2.transpose() * q1);
    resid.singular_values().iter().fold(0.0f64, |a, &s| a.max(s)).min(1.0)
}

fn basis_matrix(set: &AttributeBasisSet) -> DMatrix<f64> {
    DMatrix::from_columns(&set.bases)
}

fn pca_deflation(seeds: u64) -> Result<Check> {
    let k = 8;
    let mut worst_orth = 0.0f64;
    let mut worst_angle = 0.0f64;
    let mut checked = 0;
    for seed in 0..seeds {
        let spec = ConceptSpec::synthetic(16, seed)?;
        let pos = synth_concept_sampler(&spec, 1, Side::Positive, 20, seed)?;
        let neg = synth_concept_sampler(&spec, 1, Side::Negative, 20, seed)?;
        let sp = scatter_matrices(&pos, &neg)?;
        let b = solve_concept_axis(&sp, sp.default_ridge(crate::axis::DEFAULT_RIDGE_FACTOR))?.b_c;
        let set = attribute_bases(&pos, &neg, &b, k)?;
        let q = basis_matrix(&set);
        let gram = q.transpose() * &q - DMatrix::identity(set.len(), set.len());
        worst_orth = worst_orth.max(gram.amax()).max((q.transpose() * &b).amax());

        let f = crate::axis::merged_centered(&pos, &neg)?;
        let proj = DMatrix::identity(16, 16) - &b * b.transpose();
        let c = &proj * (&f * f.transpose()) * &proj;
        let eig = SymmetricEigen::new((&c + c.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let gap_ok = (0..k).all(|i| lam[i] - lam[i + 1] > 1e-6 * lam[0]);
        if !gap_ok {
            continue;
        }
        let top = DMatrix::from_columns(&order[..k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
        worst_angle = worst_angle.max(max_principal_sine(&q, &top).asin());
        checked += 1;
    }
    let pass = worst_orth <= 1e-8 && worst_angle <= 1e-6 && checked > 0;
    Ok(Check::new(
        3,
        "PCA deflation",
        pass,
        format!(
            "orthonormality error {worst_orth:.1e}, max principal angle {worst_angle:.1e} rad over {checked} datasets"
        ),
        json!({ "orthonormality": worst_orth, "max_principal_angle": worst_angle, "datasets": checked }),
    ))
}

fn central_diff(x: &DVector<f64>, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut p = x.clone();
        p[i] += h;
        let up = f(&p);
        p[i] = x[i] - h;
        g[i] = (up - f(&p)) / (2.0 * h);
    }
    g
}

fn grad_rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-12)
}

fn loss_gradients(probes: u64) -> Result<Check> {
    let d = 8;
    let mut worst_slide = 0.0f64;
    let mut worst_preserve = 0.0f64;
    for p in 0..probes {
        let mut rng = test_rng(p, 4);
        let mut v = || DVector::from_vec(rng.normal_vec(d));
        let f = v();
        let b = v().normalize();
        let (mu_p, mu_n) = (v(), v());
        let base = v();
        let raw = DMatrix::from_fn(d, 4, |_, _| 0.0) + DMatrix::from_columns(&[v(), v(), v(), v()]);
        let q = raw.qr().q();
        let bases = AttributeBasisSet {
            bases: (0..4).map(|j| q.column(j).into_owned()).collect(),
            explained_variance: vec![1.0; 4],
            stage: 1,
            rank_deficient: false,
        };
        let alpha = test_rng(p, 5).uniform_in(-1.0, 1.0);
        let (_, g) = sliding_loss(&f, &b, &mu_p, &mu_n, alpha)?;
        let fd = central_diff(&f, |x| sliding_loss(x, &b, &mu_p, &mu_n, alpha).map_or(f64::NAN, |r| r.0));
        worst_slide = worst_slide.max(grad_rel_err(&g, &fd));
        let (_, g) = preserving_loss(&f, &base, &bases)?;
        let fd = central_diff(&f, |x| preserving_loss(x, &base, &bases).map_or(f64::NAN, |r| r.0));
        worst_preserve = worst_preserve.max(grad_rel_err(&g, &fd));
    }
    Ok(Check::new(
        4,
        "loss gradients",
        worst_slide <= 1e-4 && worst_preserve <= 1e-4,
        format!("max relative error sliding {worst_slide:.1e}, preserving {worst_preserve:.1e} over {probes} probes each"),
        json!({ "sliding": worst_slide, "preserving": worst_preserve }),
    ))
}

fn adapter_checks(cfg: &RunConfig) -> Result<(Check, Check, Vec<f64>)> {
    let t0 = Instant::now();
    let data = config::generate_data(cfg)?;
    let model = config::fit_axis(cfg, &data)?;
    let gen = config::generator(cfg)?;
    let tc = TrainConfig { w_preserve: 0.5, ..cfg.adapter.clone() };
    let (adapter, _) = crate::adapter::train_adapter(&gen, &model, &tc)?;
    let response = slider_response(&gen, &adapter, &model, &ALPHAS, 64, cfg.seed)?;
    let secs = t0.elapsed().as_secs_f64();
    let stages = adapter.t_stages() as u32;
    let (mut p_bar, mut n_bar) = (0.0, 0.0);
    for t in 1..=stages {
        let sa = model.stage(t)?;
        p_bar += sa.mu_p.dot(&sa.axis.b_c) / stages as f64;
        n_bar += sa.mu_n.dot(&sa.axis.b_c) / stages as f64;
    }
    let gap = p_bar - n_bar;
    let err_hi = (response[4] - p_bar).abs() / gap;
    let err_lo = (response[0] - n_bar).abs() / gap;
    let increasing = response.windows(2).all(|w| w[1] > w[0]);
    let c5 = Check::new(
        5,
        "adapter slider behaviour",
        increasing && err_hi <= 0.1 && err_lo <= 0.1 && secs < 120.0,
        format!(
            "coords {} strictly increasing: {increasing}; endpoint errors {:.1}% / {:.1}% of gap; {secs:.1} s",
            fmt_list(&response),
            err_lo * 100.0,
            err_hi * 100.0
        ),
        json!({ "coords": response, "endpoint_error_neg": err_lo, "endpoint_error_pos": err_hi, "seconds": secs,
                "projected_mu_p": p_bar, "projected_mu_n": n_bar }),
    );

    let off = TrainConfig { w_preserve: 0.0, ..tc.clone() };
    let (plain, _) = crate::adapter::train_adapter(&gen, &model, &off)?;
    let probe = [-1.0, -0.5, 0.5, 1.0];
    let kept = attribute_drift(&gen, &adapter, &model, &probe, 64, cfg.seed)?;
    let loose = attribute_drift(&gen, &plain, &model, &probe, 64, cfg.seed)?;
    let c6 = Check::new(
        6,
        "attribute preservation",
        kept < loose,
        format!("drift {kept:.4} with w_preserve 0.5 vs {loose:.4} with 0"),
        json!({ "drift_preserve": kept, "drift_none": loose }),
    );
    Ok((c5, c6, response))
}

fn random_prims(rng: &mut CounterRng, m: usize) -> SplatScene {
    SplatScene::new(
        (0..m)
            .map(|_| GaussianPrimitive {
                mu: [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
                scale: [rng.uniform_in(0.15, 0.7), rng.uniform_in(0.15, 0.7)],
                rot: rng.uniform_in(-3.0, 3.0),
                opacity_pre: logit(rng.uniform_in(0.2, 0.9)),
                color: [rng.uniform(), rng.uniform(), rng.uniform()],
            })
            .collect(),
    )
}

fn param_fd(scene: &SplatScene, k: usize, f: &dyn Fn(&SplatScene) -> f64) -> Result<f64> {
    let base = scene.params();
    let h = 1e-5 * base[k].abs().max(1.0);
    let mut s = scene.clone();
    let mut p = base.clone();
    p[k] += h;
    s.set_params(&p)?;
    let up = f(&s);
    p[k] = base[k] - h;
    s.set_params(&p)?;
    Ok((up - f(&s)) / (2.0 * h))
}

fn renderer_gradients() -> Result<Check> {
    let mut worst = 0.0f64;
    let mut n = 0;
    for seed in 0..7u64 {
        let mut rng = test_rng(seed, 7);
        let scene = random_prims(&mut rng, 2 + seed as usize);
        let view = sample_view(seed, &ViewConfig::default());
        let mut w = Image::zeros(view.height, view.width);
        w.data.iter_mut().for_each(|v| *v = rng.normal());
        let grads = render_backward(&scene, &view, &w, None)?;
        let loss = |s: &SplatScene| -> f64 {
            render(s, &view).map_or(f64::NAN, |img| img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum())
        };
        for (k, &g) in grads.iter().enumerate() {
            let fd = param_fd(&scene, k, &loss)?;
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
            n += 1;
        }
    }
    Ok(Check::new(
        7,
        "renderer gradients",
        worst <= 1e-4,
        format!("max relative error {worst:.1e} over {n} parameters (M <= 8, 16x16)"),
        json!({ "max_relative_error": worst, "parameters": n }),
    ))
}

/// One edit trajectory with the bookkeeping the checks need.
pub struct EditRun {
    pub trace: Vec<StepRecord>,
    pub events: Vec<EditEvent>,
    pub initial_coord: f64,
    pub update_fraction: f64,
    pub seconds_per_step: f64,
    /// Snapshots at steps 50, 150, 250, ... when requested.
    pub states: Vec<EditRunner>,
}

impl EditRun {
    pub fn final_coord(&self) -> f64 {
        self.trace.last().map_or(self.initial_coord, |s| s.coord)
    }

    pub fn displacement(&self) -> f64 {
        self.final_coord() - self.initial_coord
    }
}

pub fn run_edit(
    scene: &SplatScene,
    model: &ConceptAxisModel,
    adapter: Option<&LowRankAdapter>,
    cfg: &EditConfig,
    keep_states: bool,
) -> Result<EditRun> {
    let mut runner = EditRunner::new(scene.clone(), model, adapter, cfg)?;
    let (_, initial_coord) = runner.measure()?;
    let mut trace = Vec::with_capacity(cfg.total_steps);
    let mut states = Vec::new();
    let mut fraction = 0.0;
    let mut secs = 0.0;
    for s in 0..cfg.total_steps {
        if keep_states && s % 100 == 50 {
            states.push(runner.clone());
        }
        let t0 = Instant::now();
        let rec = runner.step()?;
        secs += t0.elapsed().as_secs_f64();
        fraction += rec.selected as f64 / runner.scene().len().max(1) as f64;
        trace.push(rec);
    }
    let n = cfg.total_steps.max(1) as f64;
    Ok(EditRun {
        trace,
        events: runner.events().to_vec(),
        initial_coord,
        update_fraction: fraction / n,
        seconds_per_step: secs / n,
        states,
    })
}

fn sensitivity_fd() -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = test_rng(seed, 8);
        let scene = random_prims(&mut rng, 6);
        let views = sample_views(seed, tags::TEST, 2, &ViewConfig::default());
        let enc = LatentEncoder::new(16, &EncoderConfig { seed, ..EncoderConfig::default() })?;
        let b = DVector::from_vec(rng.normal_vec(16)).normalize();
        let report = sensitivity_scores(&scene, &views, &b, &enc)?;
        let c = |s: &SplatScene| measure_alignment(s, &views, &b, &enc).map_or(f64::NAN, |r| r.0);
        for i in 0..scene.len() {
            let mut fd = 0.0;
            for j in 0..PARAMS_PER_PRIMITIVE {
                fd += param_fd(&scene, i * PARAMS_PER_PRIMITIVE + j, &c)?.abs();
            }
            let s = report.scores[i];
            worst = worst.max((s - fd).abs() / s.abs().max(fd.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// Minimum single-step wall clock from identical snapshots, once with the
/// configured selection and once with everything selected.
fn matched_step_times(states: &[EditRunner], gamma: f64, reps: usize) -> Result<(f64, f64, usize)> {
    let (mut sel, mut all, mut wins) = (0.0, 0.0, 0);
    for st in states {
        let mut a = st.clone();
        a.set_gamma(gamma)?;
        let mut b = st.clone();
        b.set_gamma(1.0)?;
        let mut best = [f64::INFINITY; 2];
        for _ in 0..reps {
            for (k, src) in [&a, &b].into_iter().enumerate() {
                let mut r = src.clone();
                let t0 = Instant::now();
                r.step()?;
                best[k] = best[k].min(t0.elapsed().as_secs_f64());
            }
        }
        sel += best[0];
        all += best[1];
        wins += (best[0] < best[1]) as usize;
    }
    Ok((sel, all, wins))
}

fn selection_checks(cfg: &RunConfig, sel: &EditRun, full: &EditRun) -> Result<Check> {
    let fd = sensitivity_fd()?;
    let ratio = sel.displacement() / full.displacement();
    let states: Vec<EditRunner> = sel.states.iter().chain(&full.states).cloned().collect();
    let (t_sel, t_all, wins) = matched_step_times(&states, cfg.edit.gamma, 25)?;
    let per = |t: f64| t / states.len().max(1) as f64 * 1e3;
    let pass = fd <= 1e-3 && ratio >= 0.7 && sel.update_fraction <= 0.05 + 1e-12 && t_sel < t_all;
    Ok(Check::new(
        8,
        "sensitivity and selection",
        pass,
        format!(
            "S_i finite-difference error {fd:.1e}; displacement ratio {ratio:.3} ({:.4} vs {:.4}); updated fraction {:.2}%; \
             step {:.3} ms vs {:.3} ms on {} matched states ({wins} faster); trajectory means {:.3} / {:.3} ms",
            sel.displacement(),
            full.displacement(),
            sel.update_fraction * 100.0,
            per(t_sel),
            per(t_all),
            states.len(),
            sel.seconds_per_step * 1e3,
            full.seconds_per_step * 1e3
        ),
        json!({
            "sensitivity_fd_error": fd,
            "displacement_selected": sel.displacement(),
            "displacement_full": full.displacement(),
            "displacement_ratio": ratio,
            "update_fraction": sel.update_fraction,
            "matched_ms_per_step_selected": per(t_sel),
            "matched_ms_per_step_full": per(t_all),
            "matched_states": states.len(),
            "matched_states_faster": wins,
            "trajectory_ms_per_step_selected": sel.seconds_per_step * 1e3,
            "trajectory_ms_per_step_full": full.seconds_per_step * 1e3,
        }),
    ))
}

fn sds_fixed_point(cfg: &RunConfig, inputs: &Inputs) -> Result<Check> {
    let e = &cfg.edit;
    let sched = DiffusionSchedule::cosine(e.t_stages, e.weighting)?;
    let view: View = canonical_view(&e.view, e.view.height, e.view.width);
    let enc = LatentEncoder::new(
        inputs.model.dim(),
        &EncoderConfig { patch: [view.height, view.width], ..e.encoder.clone() },
    )?;
    let views = [view];
    let z = encode_latents(&render_views(&inputs.scene, &views)?, &enc)?;
    let m = DVector::from_column_slice(z.latent(0));
    let mask = vec![true; inputs.scene.len()];
    let mut worst = 0.0f64;
    for t in 1..=sched.len() as u32 {
        let g = sds_gradient(&inputs.scene, &views, &enc, &sched, &m, t, cfg.seed, &mask)?;
        worst = worst.max(g.grads.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    Ok(Check::new(
        9,
        "SDS fixed point",
        worst <= 1e-9,
        format!("max |gradient| {worst:.1e} over t = 1..{}", sched.len()),
        json!({ "max_abs_gradient": worst, "timesteps": sched.len() }),
    ))
}

fn schedule_conformance(cfg: &RunConfig, inputs: &Inputs, run: &EditRun) -> Result<Check> {
    let e = &cfg.edit;
    let standard = e.total_steps == 1200 && e.event_every == 200 && e.prune_only_until == 600;
    let own;
    let events = if standard {
        &run.events
    } else {
        let ecfg = EditConfig { total_steps: 1200, event_every: 200, prune_only_until: 600, ..e.clone() };
        own = run_edit(&inputs.scene, &inputs.model, inputs.adapter.as_ref(), &ecfg, false)?;
        &own.events
    };
    let at = |k: EventKind| -> Vec<usize> { events.iter().filter(|ev| ev.kind == k).map(|ev| ev.step).collect() };
    let (prunes, densifies) = (at(EventKind::Prune), at(EventKind::Densify));
    Ok(Check::new(
        10,
        "edit schedule conformance",
        prunes == [200, 400, 600] && densifies == [800, 1000, 1200],
        format!("prune at {prunes:?}, densify+prune at {densifies:?}"),
        json!({ "prune": prunes, "densify": densifies }),
    ))
}

fn determinism(cfg: &RunConfig, inputs: &Inputs, out: Option<&Path>) -> Result<Check> {
    let root: PathBuf = match out {
        Some(d) => d.join("determinism"),
        None => std::env::temp_dir().join(format!("acs-determinism-{}", std::process::id())),
    };
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        crate::cli::edit_outputs(cfg, &inputs.model, inputs.adapter.as_ref(), &inputs.scene, cfg.edit.alpha, &dir)?;
        let p = dir.join(crate::cli::files::TRACE);
        bytes.push(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    if out.is_none() {
        let _ = std::fs::remove_dir_all(&root);
    }
    let same = bytes[0] == bytes[1] && !bytes[0].is_empty();
    Ok(Check::new(
        11,
        "determinism",
        same,
        format!("two edits wrote {} and {} trace bytes, identical: {same}", bytes[0].len(), bytes[1].len()),
        json!({ "identical": same, "bytes": bytes[0].len() }),
    ))
}

/// Axis-mode edit at alpha 0 on mirrored class means lands near the midpoint.
fn symmetric_midpoint(cfg: &RunConfig) -> Result<Check> {
    let mut sym = cfg.clone();
    sym.data.base_mean_scale = 0.0;
    let model = config::fit_axis(&sym, &config::generate_data(&sym)?)?;
    let scene = config::initial_scene(&sym)?;
    let ecfg = EditConfig { alpha: 0.0, target_mode: TargetMode::Axis, ..sym.edit.clone() };
    let runner = EditRunner::new(scene.clone(), &model, None, &ecfg)?;
    let coord_of = |a: f64| -> Result<f64> {
        Ok(crate::edit::axis_target(&model, ecfg.readout_stage, a)?.dot(runner.readout_axis()))
    };
    let (mid, span) = (coord_of(0.0)?, coord_of(1.0)? - coord_of(-1.0)?);
    let run = run_edit(&scene, &model, None, &ecfg, false)?;
    let err = (run.final_coord() - mid).abs();
    Ok(Check::new(
        0,
        "symmetric alpha 0 midpoint",
        err <= 0.1 * span,
        format!(
            "final coord {:.4} vs midpoint {mid:.4} (from {:.4}); band 10% of the alpha +-1 target span {span:.4}",
            run.final_coord(),
            run.initial_coord
        ),
        json!({ "final": run.final_coord(), "midpoint": mid, "span": span, "initial": run.initial_coord }),
    ))
}
