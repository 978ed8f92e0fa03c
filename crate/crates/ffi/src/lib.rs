//! C ABI over `concept_slider`.
//!
//! Objects cross the boundary as opaque pointers created by `acs_*_new`,
//! `acs_*_load`, `acs_*_fit` or `acs_*_train` and released with the
//! matching `acs_*_free`. Every fallible call returns an [`AcsStatus`]; on
//! failure the message is available from [`acs_last_error`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use concept_slider::adapter::LowRankAdapter;
use concept_slider::axis::ConceptAxisModel;
use concept_slider::config::{self, RunConfig};
use concept_slider::edit::EditRunner;
use concept_slider::error::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcsStatus {
    Ok = 0,
    Other = 1,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 2,
    Config = 3,
    MissingFile = 4,
    Format = 5,
    Invariant = 6,
    Numeric = 7,
    /// Output buffer too small; the required length was written back.
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for AcsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => AcsStatus::Config,
            Error::MissingFile { .. } | Error::Io { .. } => AcsStatus::MissingFile,
            Error::Format { .. } | Error::Json(_) => AcsStatus::Format,
            Error::Invariant(_) => AcsStatus::Invariant,
            Error::Numerical(_) | Error::NonFinite { .. } => AcsStatus::Numeric,
            _ => AcsStatus::Other,
        }
    }
}

pub struct AcsConfig(RunConfig);
pub struct AcsAxisModel(ConceptAxisModel);
pub struct AcsAdapter(LowRankAdapter);
pub struct AcsEditor(EditRunner);

/// One edit step as seen through the C ABI.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcsStep {
    pub step: usize,
    /// Mean concept coordinate over the evaluation views.
    pub cbar: f64,
    pub coord: f64,
    pub loss_sds: f64,
    pub selected: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AcsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail((&e).into(), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AcsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, turning errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AcsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            AcsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn acs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default run configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn acs_config_new(out: *mut *mut AcsConfig) -> AcsStatus {
    guard(|| put(out, AcsConfig(RunConfig::default())))
}

/// JSON config file; missing keys take defaults.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acs_config_load(path: *const c_char, out: *mut *mut AcsConfig) -> AcsStatus {
    guard(|| {
        let mut cfg = RunConfig::load(path_arg(path, "path")?)?;
        cfg.finalize();
        cfg.validate()?;
        put(out, AcsConfig(cfg))
    })
}

/// Applies a dotted `key=value` override such as `edit.gamma=0.2`. The
/// config is left unchanged on failure.
///
/// # Safety
/// `cfg` must come from `acs_config_new`/`acs_config_load`; `assignment`
/// must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acs_config_set(cfg: *mut AcsConfig, assignment: *const c_char) -> AcsStatus {
    guard(|| {
        let cfg = obj_mut(cfg, "config")?;
        let mut next = cfg.0.with_override(str_arg(assignment, "assignment")?)?;
        next.finalize();
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn acs_config_free(cfg: *mut AcsConfig) {
    free(cfg)
}

/// Generates the synthetic features and fits the concept axis model.
///
/// # Safety
/// `cfg` must be a live config handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_fit(cfg: *const AcsConfig, out: *mut *mut AcsAxisModel) -> AcsStatus {
    guard(|| {
        let cfg = &obj(cfg, "config")?.0;
        let model = config::fit_axis(cfg, &config::generate_data(cfg)?)?;
        put(out, AcsAxisModel(model))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_load(path: *const c_char, out: *mut *mut AcsAxisModel) -> AcsStatus {
    guard(|| put(out, AcsAxisModel(ConceptAxisModel::load(path_arg(path, "path")?)?)))
}

/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_save(model: *const AcsAxisModel, path: *const c_char) -> AcsStatus {
    guard(|| Ok(obj(model, "model")?.0.save(path_arg(path, "path")?)?))
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_dim(model: *const AcsAxisModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Number of stages, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_stages(model: *const AcsAxisModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.t_stages())
}

/// Copies the unit concept direction of `stage` (1-based) into `buf`,
/// which must hold `acs_axis_dim` values.
///
/// # Safety
/// `model` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_direction(
    model: *const AcsAxisModel,
    stage: u32,
    buf: *mut f64,
    len: usize,
) -> AcsStatus {
    guard(|| {
        let axis = &obj(model, "model")?.0.stage(stage)?.axis.b_c;
        if buf.is_null() {
            return Err(invalid("buffer is null"));
        }
        if len < axis.len() {
            return Err(Fail(
                AcsStatus::BufferTooSmall,
                format!("direction needs {} values, buffer holds {len}", axis.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, axis.len()).copy_from_slice(axis.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_axis_free(model: *mut AcsAxisModel) {
    free(model)
}

/// Trains the slider adapter against a fitted axis model.
///
/// # Safety
/// `cfg` and `model` must be live handles, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acs_adapter_train(
    cfg: *const AcsConfig,
    model: *const AcsAxisModel,
    out: *mut *mut AcsAdapter,
) -> AcsStatus {
    guard(|| {
        let (adapter, _) = config::train(&obj(cfg, "config")?.0, &obj(model, "model")?.0)?;
        put(out, AcsAdapter(adapter))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acs_adapter_load(path: *const c_char, out: *mut *mut AcsAdapter) -> AcsStatus {
    guard(|| put(out, AcsAdapter(LowRankAdapter::load(path_arg(path, "path")?)?)))
}

/// # Safety
/// `adapter` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acs_adapter_save(adapter: *const AcsAdapter, path: *const c_char) -> AcsStatus {
    guard(|| Ok(obj(adapter, "adapter")?.0.save(path_arg(path, "path")?)?))
}

/// # Safety
/// `adapter` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_adapter_free(adapter: *mut AcsAdapter) {
    free(adapter)
}

/// Edit session on the configured initial scene. `adapter` may be null
/// when the config targets the axis directly.
///
/// # Safety
/// `cfg` and `model` must be live handles, `adapter` null or live, `out`
/// a valid pointer. The editor keeps its own copies of all three.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_new(
    cfg: *const AcsConfig,
    model: *const AcsAxisModel,
    adapter: *const AcsAdapter,
    out: *mut *mut AcsEditor,
) -> AcsStatus {
    guard(|| {
        let cfg = &obj(cfg, "config")?.0;
        let model = &obj(model, "model")?.0;
        let adapter = adapter.as_ref().map(|a| &a.0);
        let runner = EditRunner::new(config::initial_scene(cfg)?, model, adapter, &cfg.edit)?;
        put(out, AcsEditor(runner))
    })
}

/// Moves the slider. `changed` (may be null) receives whether the value
/// differed from the current one.
///
/// # Safety
/// `editor` must be a live handle; `changed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_set_alpha(editor: *mut AcsEditor, alpha: f64, changed: *mut bool) -> AcsStatus {
    guard(|| {
        let c = obj_mut(editor, "editor")?.0.set_alpha(alpha)?;
        if let Some(out) = changed.as_mut() {
            *out = c;
        }
        Ok(())
    })
}

/// Runs one edit step; `out` (may be null) receives its record.
///
/// # Safety
/// `editor` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_step(editor: *mut AcsEditor, out: *mut AcsStep) -> AcsStatus {
    guard(|| {
        let r = obj_mut(editor, "editor")?.0.step()?;
        if let Some(out) = out.as_mut() {
            *out = AcsStep {
                step: r.step,
                cbar: r.cbar,
                coord: r.coord,
                loss_sds: r.loss_sds,
                selected: r.selected,
            };
        }
        Ok(())
    })
}

/// Steps completed so far, or 0 for a null handle.
///
/// # Safety
/// `editor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_steps_done(editor: *const AcsEditor) -> usize {
    editor.as_ref().map_or(0, |e| e.0.steps_done())
}

/// Current mean and readout concept coordinates of the scene.
///
/// # Safety
/// `editor` must be a live handle; `cbar` and `coord` writable.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_measure(editor: *const AcsEditor, cbar: *mut f64, coord: *mut f64) -> AcsStatus {
    guard(|| {
        let (c, r) = obj(editor, "editor")?.0.measure()?;
        *obj_mut(cbar, "cbar")? = c;
        *obj_mut(coord, "coord")? = r;
        Ok(())
    })
}

/// Number of primitives in the scene, or 0 for a null handle.
///
/// # Safety
/// `editor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_primitives(editor: *const AcsEditor) -> usize {
    editor.as_ref().map_or(0, |e| e.0.scene().len())
}

/// Renders a `size` x `size` RGBA8 frame into `buf`. `len` is the buffer
/// size in bytes; when it is too small the required size is written to
/// `needed` (may be null) and `ACS_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `editor` must be a live handle; `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_render_rgba(
    editor: *const AcsEditor,
    size: usize,
    buf: *mut u8,
    len: usize,
    needed: *mut usize,
) -> AcsStatus {
    guard(|| {
        let editor = obj(editor, "editor")?;
        if size == 0 {
            return Err(invalid("frame size must be positive"));
        }
        let bytes = size * size * 4;
        if let Some(n) = needed.as_mut() {
            *n = bytes;
        }
        if len < bytes {
            return Err(Fail(
                AcsStatus::BufferTooSmall,
                format!("frame needs {bytes} bytes, buffer holds {len}"),
            ));
        }
        if buf.is_null() {
            return Err(invalid("buffer is null"));
        }
        let rgba = editor.0.render_frame(size)?.to_rgba8();
        std::slice::from_raw_parts_mut(buf, bytes).copy_from_slice(&rgba);
        Ok(())
    })
}

/// Writes the current scene as JSON.
///
/// # Safety
/// `editor` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_save_scene(editor: *const AcsEditor, path: *const c_char) -> AcsStatus {
    guard(|| Ok(obj(editor, "editor")?.0.scene().save(path_arg(path, "path")?)?))
}

/// # Safety
/// `editor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acs_editor_free(editor: *mut AcsEditor) {
    free(editor)
}
