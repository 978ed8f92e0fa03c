use std::ffi::{CStr, CString};
use std::ptr;

use acs_ffi::*;
use concept_slider::config::{self, RunConfig};
use concept_slider::edit::EditRunner;

fn last_error() -> String {
    let p = acs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn config(sets: &[&str]) -> *mut AcsConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(acs_config_new(&mut cfg), AcsStatus::Ok);
    for s in sets {
        assert_eq!(acs_config_set(cfg, c(s).as_ptr()), AcsStatus::Ok, "{}", last_error());
    }
    cfg
}

/// The same configuration built directly through the library.
fn library_config(sets: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for s in sets {
        cfg = cfg.with_override(s).unwrap();
    }
    cfg
}

const AXIS_EDIT: &[&str] = &["edit.target_mode=axis", "seed=11"];

#[test]
fn editor_matches_the_library_step_for_step() {
    unsafe {
        let cfg = config(AXIS_EDIT);
        let mut model = ptr::null_mut();
        assert_eq!(acs_axis_fit(cfg, &mut model), AcsStatus::Ok);
        let mut editor = ptr::null_mut();
        assert_eq!(acs_editor_new(cfg, model, ptr::null(), &mut editor), AcsStatus::Ok, "{}", last_error());

        let lib_cfg = library_config(AXIS_EDIT);
        let lib_model = config::fit_axis(&lib_cfg, &config::generate_data(&lib_cfg).unwrap()).unwrap();
        let mut lib = EditRunner::new(config::initial_scene(&lib_cfg).unwrap(), &lib_model, None, &lib_cfg.edit).unwrap();

        let dim = acs_axis_dim(model);
        assert_eq!(dim, lib_model.dim());
        assert_eq!(acs_axis_stages(model), lib_model.t_stages());
        let mut dir = vec![0.0; dim];
        assert_eq!(acs_axis_direction(model, 2, dir.as_mut_ptr(), dim), AcsStatus::Ok);
        assert_eq!(dir.as_slice(), lib_model.stage(2).unwrap().axis.b_c.as_slice());

        let mut changed = false;
        assert_eq!(acs_editor_set_alpha(editor, 0.5, &mut changed), AcsStatus::Ok);
        assert!(changed);
        lib.set_alpha(0.5).unwrap();
        for _ in 0..5 {
            let mut rec = AcsStep::default();
            assert_eq!(acs_editor_step(editor, &mut rec), AcsStatus::Ok);
            let r = lib.step().unwrap();
            assert_eq!((rec.step, rec.cbar, rec.coord, rec.loss_sds, rec.selected), (r.step, r.cbar, r.coord, r.loss_sds, r.selected));
        }
        assert_eq!(acs_editor_steps_done(editor), 5);
        assert_eq!(acs_editor_primitives(editor), lib.scene().len());

        let (mut cbar, mut coord) = (0.0, 0.0);
        assert_eq!(acs_editor_measure(editor, &mut cbar, &mut coord), AcsStatus::Ok);
        assert_eq!((cbar, coord), lib.measure().unwrap());

        let mut buf = vec![0u8; 12 * 12 * 4];
        let mut needed = 0;
        assert_eq!(acs_editor_render_rgba(editor, 12, buf.as_mut_ptr(), buf.len(), &mut needed), AcsStatus::Ok);
        assert_eq!(needed, buf.len());
        assert_eq!(buf, lib.render_frame(12).unwrap().to_rgba8());

        acs_editor_free(editor);
        acs_axis_free(model);
        acs_config_free(cfg);
    }
}

#[test]
fn files_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let axis_path = c(dir.path().join("axis.json").to_str().unwrap());
    let adapter_path = c(dir.path().join("adapter.json").to_str().unwrap());
    let scene_path = dir.path().join("scene.json");
    unsafe {
        let cfg = config(&["adapter.steps=20"]);
        let mut model = ptr::null_mut();
        assert_eq!(acs_axis_fit(cfg, &mut model), AcsStatus::Ok);
        assert_eq!(acs_axis_save(model, axis_path.as_ptr()), AcsStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(acs_axis_load(axis_path.as_ptr(), &mut loaded), AcsStatus::Ok);
        let (mut a, mut b) = (vec![0.0; acs_axis_dim(model)], vec![0.0; acs_axis_dim(loaded)]);
        acs_axis_direction(model, 1, a.as_mut_ptr(), a.len());
        acs_axis_direction(loaded, 1, b.as_mut_ptr(), b.len());
        assert_eq!(a, b);

        let mut adapter = ptr::null_mut();
        assert_eq!(acs_adapter_train(cfg, loaded, &mut adapter), AcsStatus::Ok, "{}", last_error());
        assert_eq!(acs_adapter_save(adapter, adapter_path.as_ptr()), AcsStatus::Ok);
        let mut adapter2 = ptr::null_mut();
        assert_eq!(acs_adapter_load(adapter_path.as_ptr(), &mut adapter2), AcsStatus::Ok);

        let mut editor = ptr::null_mut();
        assert_eq!(acs_editor_new(cfg, loaded, adapter2, &mut editor), AcsStatus::Ok, "{}", last_error());
        assert_eq!(acs_editor_step(editor, ptr::null_mut()), AcsStatus::Ok);
        let p = c(scene_path.to_str().unwrap());
        assert_eq!(acs_editor_save_scene(editor, p.as_ptr()), AcsStatus::Ok);
        let scene = concept_slider::splat::SplatScene::load(&scene_path).unwrap();
        assert_eq!(scene.len(), acs_editor_primitives(editor));

        acs_editor_free(editor);
        acs_adapter_free(adapter2);
        acs_adapter_free(adapter);
        acs_axis_free(loaded);
        acs_axis_free(model);
        acs_config_free(cfg);
    }
}

#[test]
fn failures_map_to_status_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        let missing = c("/no/such/axis.json");
        assert_eq!(acs_axis_load(missing.as_ptr(), &mut model), AcsStatus::MissingFile);
        assert!(model.is_null());
        assert!(last_error().contains("/no/such/axis.json"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("axis.json");
        std::fs::write(&bad, "{\"stages\": [").unwrap();
        let bad = c(bad.to_str().unwrap());
        assert_eq!(acs_axis_load(bad.as_ptr(), &mut model), AcsStatus::Format);

        assert_eq!(acs_axis_load(ptr::null(), &mut model), AcsStatus::InvalidArgument);
        assert_eq!(acs_config_new(ptr::null_mut()), AcsStatus::InvalidArgument);

        let cfg = config(&[]);
        assert_eq!(acs_config_set(cfg, c("edit.nope=1").as_ptr()), AcsStatus::Config);
        assert!(last_error().contains("nope"));
        assert_eq!(acs_config_set(cfg, c("edit.gamma=0").as_ptr()), AcsStatus::Config);
        // A rejected override leaves the config usable.
        assert_eq!(acs_axis_fit(cfg, &mut model), AcsStatus::Ok);

        let mut dir_buf = [0.0; 2];
        assert_eq!(acs_axis_direction(model, 1, dir_buf.as_mut_ptr(), 2), AcsStatus::BufferTooSmall);
        assert_eq!(acs_axis_direction(model, 99, dir_buf.as_mut_ptr(), 2), AcsStatus::Config);

        // Adapter targets need an adapter.
        let mut editor = ptr::null_mut();
        assert_eq!(acs_editor_new(cfg, model, ptr::null(), &mut editor), AcsStatus::Config);
        assert!(editor.is_null());

        acs_config_set(cfg, c("edit.target_mode=axis").as_ptr());
        assert_eq!(acs_editor_new(cfg, model, ptr::null(), &mut editor), AcsStatus::Ok);
        assert_eq!(acs_editor_set_alpha(editor, f64::NAN, ptr::null_mut()), AcsStatus::Config);
        let mut needed = 0;
        let mut small = [0u8; 16];
        assert_eq!(
            acs_editor_render_rgba(editor, 8, small.as_mut_ptr(), small.len(), &mut needed),
            AcsStatus::BufferTooSmall
        );
        assert_eq!(needed, 8 * 8 * 4);
        assert_eq!(acs_editor_step(ptr::null_mut(), ptr::null_mut()), AcsStatus::InvalidArgument);

        assert_eq!(acs_editor_steps_done(ptr::null()), 0);
        acs_editor_free(ptr::null_mut());
        acs_editor_free(editor);
        acs_axis_free(model);
        acs_config_free(cfg);
    }
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(acs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
