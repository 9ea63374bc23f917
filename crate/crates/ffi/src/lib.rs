//! C ABI over the `focusrl` core: focal stacks, the virtual microscope and
//! trained Q-networks behind opaque handles.
//!
//! Every fallible function returns an [`FrlStatus`]; on failure the message
//! is kept per thread and can be read with [`frl_last_error_message`].
//! Handles are created by `*_new`/`*_load`/`*_generate` functions and must be
//! released with the matching `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use focusrl::agent::greedy_action;
use focusrl::env::{
    reward, Action, EnvConfig, Environment, EpisodeOutcome, VirtualMicroscope, NUM_ACTIONS,
};
use focusrl::imaging::{FocalStack, StackSpec};
use focusrl::net::{load_checkpoint, qnet_forward, Mode, NetArch, QNetParams};
use focusrl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ArchMismatch = 5,
    EpisodeFinished = 6,
    Shape = 7,
    Panic = 8,
}

/// Episode outcome codes, identical to the core enum order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrlOutcome {
    Running = 0,
    SuccessTerminate = 1,
    FailTerminateBlur = 2,
    FailOutOfRange = 3,
    FailMaxSteps = 4,
}

impl From<EpisodeOutcome> for FrlOutcome {
    fn from(o: EpisodeOutcome) -> Self {
        match o {
            EpisodeOutcome::Running => FrlOutcome::Running,
            EpisodeOutcome::SuccessTerminate => FrlOutcome::SuccessTerminate,
            EpisodeOutcome::FailTerminateBlur => FrlOutcome::FailTerminateBlur,
            EpisodeOutcome::FailOutOfRange => FrlOutcome::FailOutOfRange,
            EpisodeOutcome::FailMaxSteps => FrlOutcome::FailMaxSteps,
        }
    }
}

impl From<FrlOutcome> for EpisodeOutcome {
    fn from(o: FrlOutcome) -> Self {
        match o {
            FrlOutcome::Running => EpisodeOutcome::Running,
            FrlOutcome::SuccessTerminate => EpisodeOutcome::SuccessTerminate,
            FrlOutcome::FailTerminateBlur => EpisodeOutcome::FailTerminateBlur,
            FrlOutcome::FailOutOfRange => EpisodeOutcome::FailOutOfRange,
            FrlOutcome::FailMaxSteps => EpisodeOutcome::FailMaxSteps,
        }
    }
}

/// What one `frl_env_step` produced.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrlStep {
    pub reward: f64,
    pub done: bool,
    pub outcome: FrlOutcome,
    /// Stack index after the move.
    pub index: usize,
    /// Actions taken so far in the episode.
    pub steps: usize,
    /// Normalized focus of the frame at `index`.
    pub focus_norm: f64,
}

/// Immutable focal stack; may be shared by several environments.
pub struct FrlStack(Arc<FocalStack>);

/// One virtual microscope episode at a time.
pub struct FrlEnv(VirtualMicroscope);

/// Q-network loaded from a checkpoint, evaluated in inference mode.
pub struct FrlNet(QNetParams<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FrlStatus {
    match err {
        Error::Io { .. } | Error::TargetNotEmpty(_) => FrlStatus::Io,
        Error::PgmMagic(_)
        | Error::PgmHeader(_)
        | Error::PgmTruncated { .. }
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::Csv(_) => FrlStatus::Format,
        Error::ArchMismatch(_) => FrlStatus::ArchMismatch,
        Error::EpisodeFinished => FrlStatus::EpisodeFinished,
        Error::Shape { .. } => FrlStatus::Shape,
        _ => FrlStatus::InvalidArgument,
    }
}

fn fail(status: FrlStatus, msg: impl Into<String>) -> FrlStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FrlStatus>) -> FrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FrlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(FrlStatus::Panic, "panic inside focusrl"),
    }
}

fn core<T>(r: focusrl::Result<T>) -> Result<T, FrlStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, FrlStatus> {
    if p.is_null() {
        return Err(fail(FrlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FrlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, FrlStatus> {
    p.as_ref()
        .ok_or_else(|| fail(FrlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FrlStatus> {
    p.as_mut()
        .ok_or_else(|| fail(FrlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FrlStatus> {
    handle_mut(p, what)
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, FrlStatus> {
    serde_json::from_str(text).map_err(|e| fail(FrlStatus::Format, format!("{what}: {e}")))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn frl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn frl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of executable actions (codes `0..frl_num_actions()`).
#[no_mangle]
pub extern "C" fn frl_num_actions() -> usize {
    NUM_ACTIONS
}

/// Renders a synthetic stack from a JSON stack description.
#[no_mangle]
pub unsafe extern "C" fn frl_stack_generate(
    spec_json: *const c_char,
    out: *mut *mut FrlStack,
) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let spec: StackSpec = parse_json(c_str(spec_json, "spec_json")?, "stack spec")?;
        let stack = core(spec.generate())?;
        *out = Box::into_raw(Box::new(FrlStack(Arc::new(stack))));
        Ok(())
    })
}

/// Loads a stack directory written by `focusrl gen-stack`.
#[no_mangle]
pub unsafe extern "C" fn frl_stack_load(dir: *const c_char, out: *mut *mut FrlStack) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let stack = core(FocalStack::load(c_str(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(FrlStack(Arc::new(stack))));
        Ok(())
    })
}

/// Number of focus positions; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn frl_stack_len(stack: *const FrlStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the normalized focus curve into `out[0..len]`; `len` must equal
/// the stack length.
#[no_mangle]
pub unsafe extern "C" fn frl_stack_focus_curve(
    stack: *const FrlStack,
    out: *mut f64,
    len: usize,
) -> FrlStatus {
    guard(|| {
        let s = &handle(stack, "stack")?.0;
        if out.is_null() {
            return Err(fail(FrlStatus::NullPointer, "out is null"));
        }
        if len != s.len() {
            return Err(fail(
                FrlStatus::InvalidArgument,
                format!("buffer holds {len} values, stack has {}", s.len()),
            ));
        }
        let curve = s.curve();
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, v) in dst.iter_mut().zip(&curve.values) {
            *d = v / curve.max_value;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn frl_stack_free(stack: *mut FrlStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Creates an environment over `stack`. `config_json` may be null for the
/// default configuration. The stack handle may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn frl_env_new(
    stack: *const FrlStack,
    config_json: *const c_char,
    out: *mut *mut FrlEnv,
) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let s = handle(stack, "stack")?.0.clone();
        let cfg = if config_json.is_null() {
            EnvConfig::default()
        } else {
            parse_json(c_str(config_json, "config_json")?, "env config")?
        };
        let env = core(VirtualMicroscope::new(s, cfg))?;
        *out = Box::into_raw(Box::new(FrlEnv(env)));
        Ok(())
    })
}

/// Starts a new episode at stack `index`.
#[no_mangle]
pub unsafe extern "C" fn frl_env_reset(env: *mut FrlEnv, index: usize) -> FrlStatus {
    guard(|| {
        let env = &mut handle_mut(env, "env")?.0;
        core(env.reset_at(index)).map(drop)
    })
}

/// Applies action `code` (0..4) and reports the transition.
#[no_mangle]
pub unsafe extern "C" fn frl_env_step(env: *mut FrlEnv, code: u8, out: *mut FrlStep) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let env = &mut handle_mut(env, "env")?.0;
        let action = core(Action::from_code(code))?;
        let t = core(env.step(action))?;
        let obs = env.observation();
        *out = FrlStep {
            reward: t.reward,
            done: t.done,
            outcome: t.outcome.into(),
            index: obs.index,
            steps: obs.steps,
            focus_norm: obs.focus_norm,
        };
        Ok(())
    })
}

/// Current stack index; `SIZE_MAX` for a null handle.
#[no_mangle]
pub unsafe extern "C" fn frl_env_index(env: *const FrlEnv) -> usize {
    env.as_ref().map_or(usize::MAX, |e| e.0.index())
}

#[no_mangle]
pub unsafe extern "C" fn frl_env_outcome(env: *const FrlEnv) -> FrlOutcome {
    env.as_ref()
        .map_or(FrlOutcome::Running, |e| e.0.outcome().into())
}

#[no_mangle]
pub unsafe extern "C" fn frl_env_free(env: *mut FrlEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Loads a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn frl_net_load(path: *const c_char, out: *mut *mut FrlNet) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let ckpt = core(load_checkpoint(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(FrlNet(ckpt.params)));
        Ok(())
    })
}

/// Writes the Q-values of the environment's current state into
/// `out[0..5]`.
#[no_mangle]
pub unsafe extern "C" fn frl_net_q_values(
    net: *const FrlNet,
    env: *const FrlEnv,
    out: *mut f64,
    len: usize,
) -> FrlStatus {
    guard(|| {
        let params = &handle(net, "net")?.0;
        let env = &handle(env, "env")?.0;
        if out.is_null() {
            return Err(fail(FrlStatus::NullPointer, "out is null"));
        }
        if len != NUM_ACTIONS {
            return Err(fail(
                FrlStatus::InvalidArgument,
                format!("buffer holds {len} values, need {NUM_ACTIONS}"),
            ));
        }
        let fwd = core(qnet_forward(params, &[env.state()], Mode::Infer))?;
        for (d, q) in std::slice::from_raw_parts_mut(out, len)
            .iter_mut()
            .zip(&fwd.q)
        {
            *d = f64::from(*q);
        }
        Ok(())
    })
}

/// Greedy action code for the environment's current state.
#[no_mangle]
pub unsafe extern "C" fn frl_net_greedy_action(
    net: *const FrlNet,
    env: *const FrlEnv,
    out: *mut u8,
) -> FrlStatus {
    let mut q = [0.0f64; NUM_ACTIONS];
    let status = frl_net_q_values(net, env, q.as_mut_ptr(), NUM_ACTIONS);
    if status == FrlStatus::Ok {
        return guard(|| {
            *out_slot(out, "out")? = greedy_action(&q).code();
            Ok(())
        });
    }
    status
}

#[no_mangle]
pub unsafe extern "C" fn frl_net_free(net: *mut FrlNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Learnable parameters and multiply-accumulates of a network architecture
/// given as JSON; null selects the reference architecture.
#[no_mangle]
pub unsafe extern "C" fn frl_count(
    arch_json: *const c_char,
    params: *mut u64,
    macs: *mut u64,
) -> FrlStatus {
    guard(|| {
        let arch: NetArch = if arch_json.is_null() {
            NetArch::default()
        } else {
            parse_json(c_str(arch_json, "arch_json")?, "net arch")?
        };
        core(arch.validate())?;
        *out_slot(params, "params")? = arch.count_params();
        *out_slot(macs, "macs")? = arch.count_macs();
        Ok(())
    })
}

/// Step reward under the default environment configuration.
#[no_mangle]
pub unsafe extern "C" fn frl_reward(
    focus_norm: f64,
    outcome: FrlOutcome,
    out: *mut f64,
) -> FrlStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = core(reward(focus_norm, outcome.into(), &EnvConfig::default()))?;
        Ok(())
    })
}
