//! C ABI over `rfx-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns an [`RfxStatus`]; on
//! failure [`rfx_last_error`] describes the error for the calling thread.
//! Strings returned through out-parameters are released with
//! [`rfx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rfx_core::bernstein::run_exploration_plus;
use rfx_core::explore::ExplorerConfig;
use rfx_core::hard::{build_hard_mdp, build_packing_set};
use rfx_core::hoeffding::{run_exploration, PlanningState};
use rfx_core::mdp::{FeatureModel, LinearMixtureMdp, Policy, RewardFunction};
use rfx_core::oracle::expected_gap;
use rfx_core::planner::plan;
use rfx_core::rng::RunKey;
use rfx_core::RfxError;

/// Packing-set rejection sampling budget for [`rfx_hard_mdp`].
const PACKING_ATTEMPTS: usize = 1_000_000;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfxStatus {
    Ok = 0,
    NullPointer = 1,
    Argument = 2,
    Io = 3,
    Model = 4,
    State = 5,
    Format = 6,
    Panic = 7,
}

impl From<&RfxError> for RfxStatus {
    fn from(e: &RfxError) -> Self {
        match e {
            RfxError::Argument(_) => RfxStatus::Argument,
            RfxError::Io { .. } => RfxStatus::Io,
            RfxError::Model(_) | RfxError::Generation(_) | RfxError::Construction(_) => RfxStatus::Model,
            RfxError::State(_) => RfxStatus::State,
            RfxError::Format(_) => RfxStatus::Format,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfxAlgorithm {
    Hoeffding = 0,
    Bernstein = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RfxDims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub dim: usize,
}

/// A validated linear mixture MDP.
pub struct RfxMdp(LinearMixtureMdp);

/// The planning-phase state left by an exploration run.
pub struct RfxExploration(PlanningState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Core(RfxError),
}

impl From<RfxError> for Failure {
    fn from(e: RfxError) -> Self {
        Failure::Core(e)
    }
}

/// Runs `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RfxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RfxStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            RfxStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            RfxStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RfxStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rfx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rfx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a random valid instance.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rfx_mdp_random(
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    param_bound: f64,
    seed: u64,
    out: *mut *mut RfxMdp,
) -> RfxStatus {
    guard(|| {
        let mdp = rfx_core::mdp::random_mdp(states, actions, horizon, dim, param_bound, seed)?;
        write_out(out, Box::into_raw(Box::new(RfxMdp(mdp))), "out")
    })
}

/// Parses and validates a model document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_mdp_from_json(json: *const c_char, out: *mut *mut RfxMdp) -> RfxStatus {
    guard(|| {
        let text = CStr::from_ptr(deref(json, "json")?)
            .to_str()
            .map_err(|e| RfxError::Format(format!("model text is not UTF-8: {e}")))?;
        let mdp = LinearMixtureMdp::from_json(text)?;
        mdp.ensure_valid()?;
        write_out(out, Box::into_raw(Box::new(RfxMdp(mdp))), "out")
    })
}

/// Serializes a model; release the result with [`rfx_string_free`].
///
/// # Safety
/// `mdp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_mdp_to_json(mdp: *const RfxMdp, out: *mut *mut c_char) -> RfxStatus {
    guard(|| {
        let text = deref(mdp, "mdp")?.0.to_json();
        let c = CString::new(text).expect("JSON has no NUL bytes");
        write_out(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `mdp` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rfx_mdp_free(mdp: *mut RfxMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_mdp_dims(mdp: *const RfxMdp, out: *mut RfxDims) -> RfxStatus {
    guard(|| {
        let d = deref(mdp, "mdp")?.0.dims();
        let dims = RfxDims {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            dim: d.dim,
        };
        write_out(out, dims, "out")
    })
}

/// Lower-bound instance for packing vector `theta_index` of a packing set
/// over `{-1,1}^dprime` drawn from `packing_seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_hard_mdp(
    dprime: usize,
    gamma: f64,
    alpha: f64,
    theta_index: usize,
    horizon: usize,
    packing_seed: u64,
    out: *mut *mut RfxMdp,
) -> RfxStatus {
    guard(|| {
        let pack = build_packing_set(dprime, gamma, packing_seed, PACKING_ATTEMPTS)?;
        let hard = build_hard_mdp(&pack, theta_index, alpha, horizon)?;
        write_out(out, Box::into_raw(Box::new(RfxMdp(hard.inner))), "out")
    })
}

/// Runs `episodes` exploration episodes with default settings and the given
/// confidence level.
///
/// # Safety
/// `mdp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfx_explore(
    mdp: *const RfxMdp,
    algorithm: RfxAlgorithm,
    episodes: usize,
    seed: u64,
    delta: f64,
    out: *mut *mut RfxExploration,
) -> RfxStatus {
    guard(|| {
        let mdp = &deref(mdp, "mdp")?.0;
        let config = ExplorerConfig {
            delta,
            ..ExplorerConfig::default()
        };
        let key = RunKey::new(seed);
        let state = match algorithm {
            RfxAlgorithm::Hoeffding => run_exploration(mdp, episodes, &config, key)?.0.to_planning_state("hoeffding"),
            RfxAlgorithm::Bernstein => {
                run_exploration_plus(mdp, episodes, &config, key)?.0.u_stream.to_planning_state("bernstein")
            }
        };
        write_out(out, Box::into_raw(Box::new(RfxExploration(state))), "out")
    })
}

/// # Safety
/// `state` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rfx_exploration_free(state: *mut RfxExploration) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

unsafe fn reward_from(dims: rfx_core::mdp::Dims, reward: *const f64, len: usize) -> Result<RewardFunction, Failure> {
    let values = slice(reward, len, "reward")?.to_vec();
    Ok(RewardFunction::new(dims.horizon, dims.states, dims.actions, values)?)
}

/// Plans for `reward` (row-major `H x S x A`) and writes the greedy policy
/// (row-major `H x S`) into `policy_out`.
///
/// # Safety
/// Handles must be live; `reward` must hold `reward_len` doubles and
/// `policy_out` room for `policy_len` entries.
#[no_mangle]
pub unsafe extern "C" fn rfx_plan(
    mdp: *const RfxMdp,
    state: *const RfxExploration,
    reward: *const f64,
    reward_len: usize,
    policy_out: *mut usize,
    policy_len: usize,
) -> RfxStatus {
    guard(|| {
        let mdp = &deref(mdp, "mdp")?.0;
        let state = deref(state, "state")?.0.restore()?;
        let dims = mdp.dims();
        if state.theta().len() != dims.dim {
            return Err(RfxError::argument(format!(
                "state dimension {} does not match model dimension {}",
                state.theta().len(),
                dims.dim
            ))
            .into());
        }
        let reward = reward_from(dims, reward, reward_len)?;
        if policy_len != dims.horizon * dims.states {
            return Err(RfxError::argument(format!(
                "policy buffer holds {policy_len} entries, need H*S = {}",
                dims.horizon * dims.states
            ))
            .into());
        }
        if policy_out.is_null() {
            return Err(Failure::Null("policy_out"));
        }
        let result = plan(mdp, state.theta(), state.cov(), &reward, state.beta)?;
        std::slice::from_raw_parts_mut(policy_out, policy_len).copy_from_slice(result.policy.actions());
        Ok(())
    })
}

/// Exact `E_{s ~ mu}[V*_1(s) - V^pi_1(s)]` for `reward` (`H x S x A`) and
/// `policy` (`H x S`), both row-major.
///
/// # Safety
/// `mdp` must be live and the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rfx_expected_gap(
    mdp: *const RfxMdp,
    reward: *const f64,
    reward_len: usize,
    policy: *const usize,
    policy_len: usize,
    out: *mut f64,
) -> RfxStatus {
    guard(|| {
        let mdp = &deref(mdp, "mdp")?.0;
        let dims = mdp.dims();
        let reward = reward_from(dims, reward, reward_len)?;
        let policy = Policy::new(dims.horizon, dims.states, slice(policy, policy_len, "policy")?.to_vec())?;
        write_out(out, expected_gap(mdp, &reward, &policy)?, "out")
    })
}
