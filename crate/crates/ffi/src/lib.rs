//! C ABI over `pwm_core`: opaque handles, status codes and a per-thread last-error message.
//!
//! Every function returns a [`PwmStatus`]; on failure the message is available
//! through [`pwm_last_error_message`]. Panics are caught at the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pwm_core::dataset::ActionVector;
use pwm_core::eval::dream;
use pwm_core::mdn::LstmModel;
use pwm_core::numerics::read_checkpoint;
use pwm_core::render::{render_ego_frame, CameraModel, Frame, RenderConfig, SemanticPalette};
use pwm_core::sim::{build_scenario, step_world, ScenarioConfig, WorldState};
use pwm_core::vae::VaeModel;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PwmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Runtime = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (PwmStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PwmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PwmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PwmStatus::Panic
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    (PwmStatus::Runtime, e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    (PwmStatus::InvalidArgument, msg.into())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (PwmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| (PwmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    handle_mut(p, what)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((PwmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err((PwmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err((PwmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    let s = PathBuf::from(string(p, what)?);
    if !s.is_file() {
        return Err((PwmStatus::NotFound, format!("{what}: no file at {}", s.display())));
    }
    Ok(s)
}

/// Length in bytes of the last error message on this thread, without the NUL; 0 if none.
#[no_mangle]
pub extern "C" fn pwm_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message (NUL-terminated, truncated to fit) into `buf`.
/// Returns the number of bytes written excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn pwm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn pwm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulated crossing scenario plus its camera settings.
pub struct PwmWorld {
    world: WorldState,
    render: RenderConfig,
    palette: SemanticPalette,
}

/// Builds a world from a scenario JSON object (NULL for defaults).
#[no_mangle]
pub unsafe extern "C" fn pwm_world_new(config_json: *const c_char, seed: u64, height: usize, width: usize, out: *mut *mut PwmWorld) -> PwmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = if config_json.is_null() { ScenarioConfig::default() } else { ScenarioConfig::from_json(&string(config_json, "config_json")?).map_err(|e| invalid(e.to_string()))? };
        if height == 0 || width == 0 {
            return Err(invalid("frame size must be positive"));
        }
        let world = build_scenario(&config, seed).map_err(runtime)?;
        let render = RenderConfig { height, width, ..RenderConfig::default() };
        *out = Box::into_raw(Box::new(PwmWorld { world, render, palette: SemanticPalette::default() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_world_free(world: *mut PwmWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advances the world by one 60 ms step.
#[no_mangle]
pub unsafe extern "C" fn pwm_world_step(world: *mut PwmWorld) -> PwmStatus {
    guard(|| {
        step_world(&mut handle_mut(world, "world")?.world);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_world_step_count(world: *const PwmWorld, out: *mut u64) -> PwmStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(world, "world")?.world.step;
        Ok(())
    })
}

/// Index of the ego body state: 0 walk1 … 7 end.
#[no_mangle]
pub unsafe extern "C" fn pwm_world_ego_state(world: *const PwmWorld, out: *mut u32) -> PwmStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(world, "world")?.world.ego.body.state.index() as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_world_agent_counts(world: *const PwmWorld, pedestrians: *mut usize, vehicles: *mut usize) -> PwmStatus {
    guard(|| {
        let w = &handle(world, "world")?.world;
        *out_ptr(pedestrians, "pedestrians")? = w.pedestrians.len();
        *out_ptr(vehicles, "vehicles")? = w.vehicles.len();
        Ok(())
    })
}

/// Renders the ego view as `height × width` category indices into `labels`.
#[no_mangle]
pub unsafe extern "C" fn pwm_world_render(world: *const PwmWorld, labels: *mut u8, len: usize) -> PwmStatus {
    guard(|| {
        let w = handle(world, "world")?;
        let need = w.render.height * w.render.width;
        if len != need {
            return Err(invalid(format!("label buffer holds {len} bytes, frame needs {need}")));
        }
        let cam = CameraModel::for_ego(&w.world, &w.render).map_err(runtime)?;
        let frame = render_ego_frame(&w.world, &w.palette, &cam).map_err(runtime)?;
        slice_mut(labels, len, "labels")?.copy_from_slice(&frame.labels);
        Ok(())
    })
}

pub struct PwmVae(VaeModel);

pub struct PwmLstm(LstmModel);

#[no_mangle]
pub unsafe extern "C" fn pwm_vae_load(path_utf8: *const c_char, out: *mut *mut PwmVae) -> PwmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = path(path_utf8, "VAE checkpoint")?;
        let model = VaeModel::from_checkpoint(&read_checkpoint(&p).map_err(runtime)?).map_err(runtime)?;
        *out = Box::into_raw(Box::new(PwmVae(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_vae_free(vae: *mut PwmVae) {
    if !vae.is_null() {
        drop(Box::from_raw(vae));
    }
}

/// Frame height, width, channel count and latent width of a VAE.
#[no_mangle]
pub unsafe extern "C" fn pwm_vae_shape(vae: *const PwmVae, height: *mut usize, width: *mut usize, channels: *mut usize, latent: *mut usize) -> PwmStatus {
    guard(|| {
        let c = &handle(vae, "vae")?.0.config;
        *out_ptr(height, "height")? = c.height;
        *out_ptr(width, "width")? = c.width;
        *out_ptr(channels, "channels")? = c.channels;
        *out_ptr(latent, "latent")? = c.latent;
        Ok(())
    })
}

fn frame_from(model: &VaeModel, labels: &[u8]) -> Result<Frame, Failure> {
    let c = &model.config;
    if labels.len() != c.height * c.width {
        return Err(invalid(format!("frame has {} labels, expected {}", labels.len(), c.height * c.width)));
    }
    Ok(Frame { height: c.height, width: c.width, labels: labels.to_vec() })
}

/// Encodes one label frame into `mu` and `logvar` (each `latent` floats).
#[no_mangle]
pub unsafe extern "C" fn pwm_vae_encode(vae: *const PwmVae, labels: *const u8, labels_len: usize, mu: *mut f32, logvar: *mut f32, latent: usize) -> PwmStatus {
    guard(|| {
        let m = &handle(vae, "vae")?.0;
        if latent != m.config.latent {
            return Err(invalid(format!("latent buffers hold {latent}, model has {}", m.config.latent)));
        }
        let frame = frame_from(m, slice(labels, labels_len, "labels")?)?;
        let g = m.encode(&frame).map_err(runtime)?;
        slice_mut(mu, latent, "mu")?.copy_from_slice(&g.mu);
        slice_mut(logvar, latent, "logvar")?.copy_from_slice(&g.logvar);
        Ok(())
    })
}

/// Decodes a latent into per-pixel class probabilities, `height × width × channels`.
#[no_mangle]
pub unsafe extern "C" fn pwm_vae_decode(vae: *const PwmVae, z: *const f32, latent: usize, probs: *mut f32, probs_len: usize) -> PwmStatus {
    guard(|| {
        let m = &handle(vae, "vae")?.0;
        let c = &m.config;
        if probs_len != c.height * c.width * c.channels {
            return Err(invalid(format!("probability buffer holds {probs_len}, frame needs {}", c.height * c.width * c.channels)));
        }
        let p = m.decode(slice(z, latent, "z")?).map_err(runtime)?;
        slice_mut(probs, probs_len, "probs")?.copy_from_slice(&p.values);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_lstm_load(path_utf8: *const c_char, out: *mut *mut PwmLstm) -> PwmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = path(path_utf8, "LSTM checkpoint")?;
        let model = LstmModel::from_checkpoint(&read_checkpoint(&p).map_err(runtime)?).map_err(runtime)?;
        *out = Box::into_raw(Box::new(PwmLstm(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pwm_lstm_free(lstm: *mut PwmLstm) {
    if !lstm.is_null() {
        drop(Box::from_raw(lstm));
    }
}

/// Closed-loop rollout from one label frame. `actions` holds `n_actions` rows of
/// (moved, body yaw, head yaw); the last row repeats past the end. Writes
/// `steps × latent` floats to `latents`.
#[no_mangle]
pub unsafe extern "C" fn pwm_dream(
    vae: *const PwmVae,
    lstm: *const PwmLstm,
    labels: *const u8,
    labels_len: usize,
    actions: *const f32,
    n_actions: usize,
    tau: f32,
    steps: usize,
    seed: u64,
    latents: *mut f32,
    latents_len: usize,
) -> PwmStatus {
    guard(|| {
        let v = &handle(vae, "vae")?.0;
        let l = &handle(lstm, "lstm")?.0;
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("temperature {tau} outside [0, 1]")));
        }
        if latents_len != steps * v.config.latent {
            return Err(invalid(format!("latent buffer holds {latents_len}, dream needs {}", steps * v.config.latent)));
        }
        let frame = frame_from(v, slice(labels, labels_len, "labels")?)?;
        let acts: Vec<ActionVector> = slice(actions, n_actions * ActionVector::WIDTH, "actions")?.chunks_exact(ActionVector::WIDTH).map(ActionVector::from_slice).collect();
        let d = dream(v, l, &frame, &acts, tau, steps, seed).map_err(runtime)?;
        let out = slice_mut(latents, latents_len, "latents")?;
        for (dst, z) in out.chunks_exact_mut(v.config.latent).zip(&d.latents) {
            dst.copy_from_slice(z);
        }
        Ok(())
    })
}
