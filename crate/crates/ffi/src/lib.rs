//! C ABI for running gripassist sessions from other languages.
//!
//! Every function returns a [`GaStatus`]; on failure the message is
//! available from [`ga_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned by the
//! library are owned by the caller and released with [`ga_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gripassist::bridge::compose_direction;
use gripassist::density::{build_query_density, sample_grasps};
use gripassist::format::{from_json, FormatError};
use gripassist::harness::{demo_contact_model, prepare_trial, ExperimentConfig, HarnessError};
use gripassist::scene::{extract_features, Landscape};
use gripassist::sim::{ApertureKey, Mode, OperatorInput, Session, SessionError, SessionSetup};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Infeasible = 4,
    Finished = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaMode {
    Manual = 0,
    Assisted = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaApertureKey {
    Hold = 0,
    Open = 1,
    Close = 2,
}

/// Gripper and assistance state after a tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaState {
    pub tick: u64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub aperture: f64,
    /// Velocity sent to the plant on the last tick.
    pub command_x: f64,
    pub command_y: f64,
    /// Selected grasp, or -1 in manual mode and before the first tick.
    pub grasp_id: i64,
    pub position_error: f64,
    pub finished: bool,
    pub success: bool,
}

/// Opaque session handle.
pub struct GaSession {
    session: Session,
    state: GaState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GaStatus, String);

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match e {
            HarnessError::InvalidConfig(_) => GaStatus::InvalidArgument,
            HarnessError::Format(_) => GaStatus::Parse,
            _ => GaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::NoFeasiblePlan | SessionError::StartInCollision => GaStatus::Infeasible,
            SessionError::Finished => GaStatus::Finished,
            _ => GaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure(GaStatus::Parse, e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GaStatus::NullPointer, format!("{what} is null"))
}

/// Reads an optional UTF-8 C string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| Failure(GaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure(GaStatus::Internal, "string contains NUL".into()))
}

fn load_config(json: Option<&str>) -> Result<ExperimentConfig, Failure> {
    let cfg = match json {
        Some(text) => from_json::<ExperimentConfig>(text)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ga_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ga_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Unit direction for a string of held numpad keys such as `"86"`.
///
/// # Safety
/// `keys` must be a valid C string; `out` must point to two doubles.
#[no_mangle]
pub unsafe extern "C" fn ga_numpad_direction(keys: *const c_char, out: *mut f64) -> GaStatus {
    guard(|| {
        let keys = opt_str(keys, "keys")?.ok_or_else(|| null("keys"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let held: Vec<String> = keys.chars().map(String::from).collect();
        let d = compose_direction(held.iter().map(String::as_str));
        *out = d[0];
        *out.add(1) = d[1];
        Ok(())
    })
}

/// Opens a session on the scene of trial `trial`. `config_json` is an
/// experiment config document, or null for the defaults. `mode` is a
/// [`GaMode`] value.
///
/// # Safety
/// `config_json` must be null or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ga_session_new(
    config_json: *const c_char,
    trial: u64,
    mode: i32,
    out: *mut *mut GaSession,
) -> GaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = load_config(opt_str(config_json, "config_json")?)?;
        let model = demo_contact_model(&cfg)?;
        let tp = prepare_trial(&cfg, &model, trial)?.map_err(|r| Failure(GaStatus::Infeasible, r))?;
        let mode = match mode {
            m if m == GaMode::Manual as i32 => Mode::Manual,
            m if m == GaMode::Assisted as i32 => Mode::Assisted,
            m => return Err(Failure(GaStatus::InvalidArgument, format!("unknown mode {m}"))),
        };
        let session = Session::new(SessionSetup { mode, ..tp.setup })?;
        let c = session.config();
        let state = GaState {
            x: c.pose.x,
            y: c.pose.y,
            theta: c.pose.theta,
            aperture: c.aperture,
            grasp_id: -1,
            position_error: session.outcome().position_error,
            ..GaState::default()
        };
        *out = Box::into_raw(Box::new(GaSession { session, state }));
        Ok(())
    })
}

/// Advances the session one tick with the operator's velocity (mm/s).
/// `aperture` is a [`GaApertureKey`] value.
///
/// # Safety
/// `session` must be a live handle; `state` may be null.
#[no_mangle]
pub unsafe extern "C" fn ga_session_tick(
    session: *mut GaSession,
    vx: f64,
    vy: f64,
    aperture: i32,
    state: *mut GaState,
) -> GaStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let aperture = match aperture {
            a if a == GaApertureKey::Hold as i32 => ApertureKey::Hold,
            a if a == GaApertureKey::Open as i32 => ApertureKey::Open,
            a if a == GaApertureKey::Close as i32 => ApertureKey::Close,
            a => return Err(Failure(GaStatus::InvalidArgument, format!("unknown aperture key {a}"))),
        };
        let rec = s.session.tick(OperatorInput { velocity: [vx, vy], aperture })?;
        let outcome = s.session.outcome();
        s.state = GaState {
            tick: rec.tick,
            x: rec.config.pose.x,
            y: rec.config.pose.y,
            theta: rec.config.pose.theta,
            aperture: rec.config.aperture,
            command_x: rec.command[0],
            command_y: rec.command[1],
            grasp_id: rec.assist.as_ref().map_or(-1, |a| a.grasp_id as i64),
            position_error: outcome.position_error,
            finished: s.session.is_finished(),
            success: outcome.success,
        };
        if let Some(out) = state.as_mut() {
            *out = s.state;
        }
        Ok(())
    })
}

/// Copies the current state.
///
/// # Safety
/// `session` must be a live handle; `state` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ga_session_state(session: *const GaSession, state: *mut GaState) -> GaStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        *state.as_mut().ok_or_else(|| null("state"))? = s.state;
        Ok(())
    })
}

/// Session setup (scene, candidates, target, start) as JSON.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable. Free the
/// result with [`ga_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ga_session_setup_json(session: *const GaSession, out: *mut *mut c_char) -> GaStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let text = serde_json::to_string(s.session.setup()).map_err(|e| Failure(GaStatus::Internal, e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must come from [`ga_session_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ga_session_free(session: *mut GaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Samples candidate grasps on a scene document and returns them as a JSON
/// array.
///
/// # Safety
/// `scene_json` must be a valid C string, `config_json` null or a valid C
/// string, and `out` writable. Free the result with [`ga_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ga_sample_grasps(
    config_json: *const c_char,
    scene_json: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> GaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let cfg = load_config(opt_str(config_json, "config_json")?)?;
        let scene: Landscape = from_json(opt_str(scene_json, "scene_json")?.ok_or_else(|| null("scene_json"))?)?;
        scene.validate().map_err(|e| Failure(GaStatus::InvalidArgument, e.to_string()))?;
        let model = demo_contact_model(&cfg)?;
        let fail = |e: &dyn std::fmt::Display| Failure(GaStatus::Infeasible, e.to_string());
        let cloud = extract_features(&scene, &cfg.features).map_err(|e| fail(&e))?;
        let qd = build_query_density(&model, &cloud, &cfg.query).map_err(|e| fail(&e))?;
        let grasps = sample_grasps(&qd, &cfg.gripper, &scene, &cfg.sampling, seed).map_err(|e| fail(&e))?;
        let text = serde_json::to_string(&grasps).map_err(|e| Failure(GaStatus::Internal, e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}
