mod common;

use common::{axis_model, prim, rel_err};
use concept_slider::edit::*;
use concept_slider::rng::CounterRng;
use concept_slider::splat::*;
use nalgebra::DVector;
use proptest::prelude::*;

/// Encoder whose first latent channel is a quarter of the summed red values in
/// a 4x4 patch and whose second is green only.
fn red_green_encoder() -> LatentEncoder {
    let p = 4 * 4 * 4;
    let mut proj = vec![0.0; 2 * p];
    for px in 0..16 {
        proj[px * 4] = 0.25;
        proj[p + px * 4 + 1] = 0.25;
    }
    LatentEncoder::from_projection([4, 4], 2, proj).unwrap()
}

fn small_scene(seed: u64, m: usize) -> SplatScene {
    let mut rng = CounterRng::new(seed, 0);
    let prims = (0..m)
        .map(|_| {
            prim(
                [rng.uniform_in(-0.8, 0.8), rng.uniform_in(-0.8, 0.8)],
                [rng.uniform_in(0.2, 0.6), rng.uniform_in(0.2, 0.6)],
                rng.uniform_in(0.0, 3.0),
                rng.uniform_in(0.3, 0.8),
                [rng.uniform(), rng.uniform(), rng.uniform()],
            )
        })
        .collect();
    SplatScene::new(prims)
}

fn views(seed: u64, n: usize) -> Vec<View> {
    sample_views(seed, 7, n, &ViewConfig::default())
}

#[test]
fn sensitivity_matches_finite_differences() {
    for seed in 0..3 {
        let scene = small_scene(seed, 6);
        let vs = views(seed, 2);
        let enc = LatentEncoder::new(16, &EncoderConfig { seed, ..Default::default() }).unwrap();
        let b = DVector::from_vec(CounterRng::new(seed, 9).normal_vec(16)).normalize();
        let report = sensitivity_scores(&scene, &vs, &b, &enc).unwrap();
        let c = |s: &SplatScene| measure_alignment(s, &vs, &b, &enc).unwrap().0;
        let base = scene.params();
        for i in 0..scene.len() {
            let mut fd = 0.0;
            for j in 0..PARAMS_PER_PRIMITIVE {
                let k = i * PARAMS_PER_PRIMITIVE + j;
                let h = 1e-6 * base[k].abs().max(1.0);
                let mut s = scene.clone();
                let mut p = base.clone();
                p[k] = base[k] + h;
                s.set_params(&p).unwrap();
                let up = c(&s);
                p[k] = base[k] - h;
                s.set_params(&p).unwrap();
                fd += ((up - c(&s)) / (2.0 * h)).abs();
            }
            let e = rel_err(report.scores[i], fd, 1e-8);
            assert!(e <= 1e-3, "seed {seed} primitive {i}: {} vs {fd} ({e:e})", report.scores[i]);
        }
    }
}

#[test]
fn score_mass_concentrates_where_the_readout_looks() {
    // One whole-image patch whose readout row only weights the left half of
    // a fixed view; primitives 0..3 sit on the left, the rest on the right.
    let (h, w) = (16, 16);
    let p = h * w * 4;
    let mut rng = CounterRng::new(3, 0);
    let mut proj = vec![0.0; 2 * p];
    for y in 0..h {
        for x in 0..w / 2 {
            for c in 0..4 {
                proj[(y * w + x) * 4 + c] = rng.normal() / 8.0;
            }
        }
    }
    for v in &mut proj[p..] {
        *v = rng.normal() / 8.0;
    }
    let enc = LatentEncoder::from_projection([h, w], 2, proj).unwrap();
    let mut prims = Vec::new();
    for k in 0..10 {
        let x = if k < 3 { rng.uniform_in(-1.3, -0.7) } else { rng.uniform_in(0.8, 1.4) };
        prims.push(prim(
            [x, rng.uniform_in(-1.0, 1.0)],
            [0.12, 0.15],
            rng.uniform_in(0.0, 3.0),
            0.7,
            [rng.uniform(), rng.uniform(), rng.uniform()],
        ));
    }
    // interleave so the subset is not simply a prefix
    prims.swap(1, 6);
    let subset = [0, 2, 6];
    let scene = SplatScene::new(prims);
    let view = canonical_view(&ViewConfig::default(), h, w);
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let report = sensitivity_scores(&scene, &[view], &b, &enc).unwrap();
    let total: f64 = report.scores.iter().sum();
    let on: f64 = subset.iter().map(|&i| report.scores[i]).sum();
    assert!(on / total >= 0.95, "subset share {}", on / total);
    let sel = select_primitives(&report, 0.3).unwrap();
    for (i, &s) in sel.iter().enumerate().take(10) {
        assert_eq!(s, subset.contains(&i), "primitive {i}");
    }
}

#[test]
fn encoder_impulse_recovers_projection_columns() {
    let enc = LatentEncoder::new(5, &EncoderConfig::default()).unwrap();
    let p = enc.patch_len();
    for (y, x, ch) in [(0, 0, 0), (1, 3, 2), (3, 2, 3), (6, 5, 1)] {
        let mut img = Image::zeros(8, 8);
        img.pixel_mut(y, x)[ch] = 1.0;
        let z = encode_latents(&[img], &enc).unwrap();
        let cell = (y / 4) * 2 + x / 4;
        let col = ((y % 4) * 4 + x % 4) * 4 + ch;
        for i in 0..z.cells() {
            for k in 0..5 {
                let want = if i == cell { enc.projection[k * p + col] } else { 0.0 };
                assert_eq!(z.latent(i)[k], want);
            }
        }
    }
}

#[test]
fn alignment_equals_adjoint_pairing() {
    let scene = small_scene(4, 5);
    let vs = views(4, 3);
    let enc = LatentEncoder::new(6, &EncoderConfig::default()).unwrap();
    let b = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.2]);
    let images = render_views(&scene, &vs).unwrap();
    let z = encode_latents(&images, &enc).unwrap();
    let direct = concept_alignment(&z, &b).unwrap();
    // C = <E^T b, image> summed over views
    let mut fill = LatentGrid::zeros(z.views, z.height, z.width, z.dim);
    for i in 0..fill.cells() {
        fill.latent_mut(i).copy_from_slice(b.as_slice());
    }
    let back = encode_backward(&fill, &enc);
    let mut dual = 0.0;
    for (g, img) in back.iter().zip(&images) {
        dual += g.data.iter().zip(&img.data).map(|(a, c)| a * c).sum::<f64>();
    }
    assert!((direct - dual).abs() <= 1e-12 * direct.abs().max(1.0));
    let coord = concept_coordinate(&z, &b).unwrap();
    assert!((coord * z.cells() as f64 - direct).abs() <= 1e-12 * direct.abs().max(1.0));
}

#[test]
fn fixed_point_gives_zero_gradient_at_every_timestep() {
    for weighting in [Weighting::OneMinusAlphaBar, Weighting::Constant] {
        let sched = DiffusionSchedule::cosine(10, weighting).unwrap();
        let scene = small_scene(5, 4);
        let v = views(5, 1);
        let enc = LatentEncoder::new(8, &EncoderConfig { patch: [16, 16], ..Default::default() }).unwrap();
        let z0 = encode_latents(&render_views(&scene, &v).unwrap(), &enc).unwrap();
        let m = DVector::from_column_slice(z0.latent(0));
        let mask = vec![true; scene.len()];
        for t in 1..=10 {
            let g = sds_gradient(&scene, &v, &enc, &sched, &m, t, 99, &mask).unwrap();
            let worst = g.grads.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!(worst <= 1e-10, "t {t}: {worst:e}");
            assert!(g.loss <= 1e-20);
        }
    }
}

#[test]
fn all_false_mask_leaves_scene_unchanged() {
    let mut scene = small_scene(6, 5);
    let before = scene.clone();
    let sched = DiffusionSchedule::cosine(10, Weighting::default()).unwrap();
    let enc = LatentEncoder::new(4, &EncoderConfig::default()).unwrap();
    let mut opt = SceneOptimizer::new(5, LearningRates::default(), 1e-3);
    let m = DVector::from_element(4, 3.0);
    for s in 0..5 {
        sds_step(&mut scene, &views(s, 4), &enc, &sched, &m, 3, s, &[false; 5], &mut opt).unwrap();
    }
    assert_eq!(scene, before);
}

#[test]
fn red_readout_target_raises_red() {
    let mut scene = SplatScene::new(vec![prim([0.0, 0.0], [1.5, 1.5], 0.0, 0.8, [0.3, 0.3, 0.3])]);
    let sched = DiffusionSchedule::cosine(10, Weighting::default()).unwrap();
    let enc = red_green_encoder();
    let mut opt = SceneOptimizer::new(1, LearningRates::default(), 1e-3);
    let target = DVector::from_vec(vec![4.0, 0.0]);
    let mut rng = CounterRng::new(8, 0);
    let mut red = scene.primitives[0].color[0];
    for s in 0..50 {
        let t = 1 + rng.below(10) as u32;
        sds_step(&mut scene, &views(100 + s, 4), &enc, &sched, &target, t, s, &[true], &mut opt).unwrap();
        let now = scene.primitives[0].color[0];
        assert!(now > red, "step {s}: red {now} did not exceed {red}");
        red = now;
    }
}

#[test]
fn zero_steps_return_scene_unchanged() {
    let (_, model) = axis_model(0, 0.5);
    let scene = synthetic_scene(&SyntheticSceneConfig::default(), 0).unwrap();
    let cfg = EditConfig {
        total_steps: 0,
        target_mode: TargetMode::Axis,
        ..Default::default()
    };
    let out = edit_loop(scene.clone(), &model, None, &cfg, None).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.scene, scene);
}

#[test]
fn unselected_primitives_are_bitwise_frozen() {
    let (_, model) = axis_model(1, 0.5);
    let scene = synthetic_scene(&SyntheticSceneConfig::default(), 1).unwrap();
    let cfg = EditConfig {
        alpha: 1.0,
        target_mode: TargetMode::Axis,
        ..Default::default()
    };
    let mut runner = EditRunner::new(scene.clone(), &model, None, &cfg).unwrap();
    let sel = runner.scene().selection.clone();
    assert_eq!(sel.iter().filter(|&&s| s).count(), 5);
    for _ in 0..150 {
        runner.step().unwrap();
    }
    let after = runner.scene();
    let mut moved = 0;
    for (i, &s) in sel.iter().enumerate().take(scene.len()) {
        if s {
            moved += (after.primitives[i] != scene.primitives[i]) as usize;
        } else {
            assert_eq!(after.primitives[i].to_params(), scene.primitives[i].to_params(), "primitive {i}");
        }
    }
    assert!(moved > 0);
}

#[test]
fn trace_is_deterministic_and_frames_are_delivered() {
    let (_, model) = axis_model(2, 0.5);
    let scene = synthetic_scene(&SyntheticSceneConfig::default(), 2).unwrap();
    let cfg = EditConfig {
        total_steps: 210,
        prune_only_until: 100,
        alpha: -0.5,
        target_mode: TargetMode::Axis,
        frame_size: 32,
        ..Default::default()
    };
    let mut frames = 0;
    let mut cb = |rec: &StepRecord, img: &Image| {
        frames += 1;
        assert_eq!(rec.step, frames);
        assert_eq!((img.height, img.width), (32, 32));
    };
    let a = edit_loop(scene.clone(), &model, None, &cfg, Some(&mut cb)).unwrap();
    let b = edit_loop(scene, &model, None, &cfg, None).unwrap();
    assert_eq!(frames, 210);
    assert_eq!(trace_to_jsonl(&a.trace).unwrap(), trace_to_jsonl(&b.trace).unwrap());
    assert_eq!(a.scene, b.scene);
    assert!(a.events.iter().any(|e| e.kind == EventKind::Densify && e.step == 200));
}

#[test]
fn trace_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    let trace = vec![
        StepRecord { step: 1, cbar: -3.5, coord: -0.1, loss_sds: 0.25, selected: 5 },
        StepRecord { step: 2, cbar: 0.1 + 0.2, coord: 1e-300, loss_sds: 0.0, selected: 6 },
    ];
    write_trace(&path, &trace).unwrap();
    assert_eq!(read_trace(&path).unwrap(), trace);
    let text = std::fs::read_to_string(&path).unwrap();
    let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(text.lines().next().unwrap())
        .unwrap()
        .keys()
        .cloned()
        .collect();
    assert_eq!(keys.len(), 5);
    for k in ["step", "cbar", "coord", "loss_sds", "selected"] {
        assert!(keys.iter().any(|x| x == k));
    }
}

/// One run per slider value on a symmetric axis: the schedule, the midpoint
/// and the ordering all come from these five traces.
#[test]
fn symmetric_sweep_schedule_midpoint_and_order() {
    let (_, model) = axis_model(0, 0.0);
    let scene = synthetic_scene(&SyntheticSceneConfig::default(), 0).unwrap();
    let alphas = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut finals = Vec::new();
    let mut target_coord = Vec::new();
    for &alpha in &alphas {
        let cfg = EditConfig {
            alpha,
            target_mode: TargetMode::Axis,
            ..Default::default()
        };
        let runner = EditRunner::new(scene.clone(), &model, None, &cfg).unwrap();
        target_coord.push(runner.targets()[0].dot(runner.readout_axis()));
        let out = edit_loop(scene.clone(), &model, None, &cfg, None).unwrap();
        assert_eq!(out.trace.len(), 1200);
        let prunes: Vec<usize> = out.events.iter().filter(|e| e.kind == EventKind::Prune).map(|e| e.step).collect();
        let densifies: Vec<usize> = out.events.iter().filter(|e| e.kind == EventKind::Densify).map(|e| e.step).collect();
        assert_eq!(prunes, vec![200, 400, 600]);
        assert_eq!(densifies, vec![800, 1000, 1200]);
        finals.push(out.trace.last().unwrap().coord);
    }
    for w in finals.windows(2) {
        assert!(w[1] > w[0], "final coordinates {finals:?}");
    }
    // The midpoint of the mirrored means reads out near zero.
    let mid = {
        let sa = model.stage(1).unwrap();
        ((&sa.mu_p + &sa.mu_n) * 0.5).dot(&sa.axis.b_c)
    };
    assert!((target_coord[2] - mid).abs() < 1e-12);
    let span = target_coord[4] - target_coord[0];
    assert!((finals[2] - mid).abs() <= 0.1 * span, "alpha 0 ends at {} vs midpoint {mid}", finals[2]);
}

proptest! {
    #[test]
    fn denoiser_residual_is_linear_in_target(
        z0 in prop::collection::vec(-3.0f64..3.0, 6),
        eps in prop::collection::vec(-3.0f64..3.0, 6),
        m in prop::collection::vec(-3.0f64..3.0, 6),
        t in 1u32..=10,
    ) {
        let sched = DiffusionSchedule::cosine(10, Weighting::default()).unwrap();
        let ab = sched.alpha_bar(t).unwrap();
        let zt = add_noise(&z0, &eps, ab);
        let e_hat = toy_denoiser(&zt, t, &m, &sched).unwrap();
        let k = (ab / (1.0 - ab)).sqrt();
        for i in 0..6 {
            let want = eps[i] + k * (z0[i] - m[i]);
            prop_assert!((e_hat[i] - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
        let at_fixed = toy_denoiser(&zt, t, &z0, &sched).unwrap();
        for i in 0..6 {
            prop_assert!((at_fixed[i] - eps[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn selection_takes_top_ceil_fraction(
        scores in prop::collection::vec(0.0f64..10.0, 1..60),
        gamma in 0.01f64..=1.0,
    ) {
        let report = SensitivityReport { scores: scores.clone(), alignment: 0.0, views: 1 };
        let sel = select_primitives(&report, gamma).unwrap();
        let k = sel.iter().filter(|&&s| s).count();
        prop_assert_eq!(k, selection_count(scores.len(), gamma));
        prop_assert!(k as f64 >= gamma * scores.len() as f64 - 1e-9);
        let lo = (0..scores.len()).filter(|&i| sel[i]).map(|i| scores[i]).fold(f64::INFINITY, f64::min);
        let hi = (0..scores.len()).filter(|&i| !sel[i]).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo >= hi);
    }
}
