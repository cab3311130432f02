//! C ABI over the circuit-sizing core: open a built-in circuit environment,
//! evaluate designs, score them against targets, and deploy trained policy
//! checkpoints. Handles are opaque; every fallible call returns a status
//! code and records a message retrievable with `cs_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use circuit_sizer::env::{reward, Env, RewardMode};
use circuit_sizer::netlist::NODE_FEATURE_WIDTH;
use circuit_sizer::policy::PolicyNet;
use circuit_sizer::ppo::greedy_rollout;
use circuit_sizer::rng::stream_rng;

/// Result of a C-interface call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CsStatus {
    /// Call succeeded.
    CsOk = 0,
    /// A required pointer argument was null.
    CsNullArg = 1,
    /// An argument value was rejected (wrong length, unknown name, bad range).
    CsInvalidArg = 2,
    /// The circuit evaluator rejected the design or target.
    CsEvalError = 3,
    /// File input/output failed.
    CsIoError = 4,
    /// A loaded file had the wrong format or did not fit the circuit.
    CsFormatError = 5,
    /// Unexpected internal failure.
    CsInternal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).unwrap_or_default();
    });
}

fn fail(status: CsStatus, message: impl Into<String>) -> CsStatus {
    set_error(message);
    status
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque circuit environment handle.
pub struct CsEnv {
    env: Env,
}

/// Opaque trained-policy handle.
pub struct CsPolicy {
    net: PolicyNet,
}

fn guard<T>(what: &str, f: impl FnOnce() -> Result<T, (CsStatus, String)>) -> Result<T, CsStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(value)) => Ok(value),
        Ok(Err((status, message))) => Err(fail(status, message)),
        Err(_) => Err(fail(CsStatus::CsInternal, format!("{what}: internal panic"))),
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (CsStatus, String)> {
    if ptr.is_null() {
        return Err((CsStatus::CsNullArg, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (CsStatus::CsInvalidArg, format!("{what} is not valid UTF-8")))
}

unsafe fn read_slice<'a>(
    ptr: *const f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a [f64], (CsStatus, String)> {
    if ptr.is_null() {
        return Err((CsStatus::CsNullArg, format!("{what} is null")));
    }
    if len != want {
        return Err((
            CsStatus::CsInvalidArg,
            format!("{what} has length {len}, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_slice<'a>(
    ptr: *mut f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a mut [f64], (CsStatus, String)> {
    if ptr.is_null() {
        return Err((CsStatus::CsNullArg, format!("{what} is null")));
    }
    if len != want {
        return Err((
            CsStatus::CsInvalidArg,
            format!("{what} has length {len}, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn build_env(circuit: &str, fine_fidelity: bool) -> Result<Env, (CsStatus, String)> {
    let text = match circuit {
        "opamp" => "circuit = \"opamp\"\nseeds = [0]\n".to_string(),
        "rfpa" => format!(
            "circuit = \"rfpa\"\nseeds = [0]\nfidelity = \"{}\"\n",
            if fine_fidelity { "fine" } else { "coarse" }
        ),
        other => {
            return Err((
                CsStatus::CsInvalidArg,
                format!("unknown circuit `{other}`; expected opamp or rfpa"),
            ))
        }
    };
    let config = circuit_sizer::config::RunConfig::from_toml_str(&text, "cs_env_open")
        .map_err(|e| (CsStatus::CsInternal, e.to_string()))?;
    config
        .build_env()
        .map_err(|e| (CsStatus::CsInternal, e.to_string()))
}

/// Opens a built-in circuit environment: `circuit` is "opamp" or "rfpa";
/// `fine_fidelity` selects the accurate evaluator for circuits that have a
/// coarse one (ignored otherwise). Returns null on failure (see
/// `cs_last_error`). Free with `cs_env_free`.
#[no_mangle]
pub unsafe extern "C" fn cs_env_open(circuit: *const c_char, fine_fidelity: bool) -> *mut CsEnv {
    let result = guard("cs_env_open", || {
        let name = read_str(circuit, "circuit")?;
        let env = build_env(name, fine_fidelity)?;
        Ok(Box::into_raw(Box::new(CsEnv { env })))
    });
    result.unwrap_or(std::ptr::null_mut())
}

/// Releases an environment handle. Null is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_env_free(env: *mut CsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of tunable parameters; 0 when `env` is null.
#[no_mangle]
pub unsafe extern "C" fn cs_env_param_count(env: *const CsEnv) -> usize {
    env.as_ref().map(|e| e.env.param_count()).unwrap_or(0)
}

/// Number of measured metrics; 0 when `env` is null.
#[no_mangle]
pub unsafe extern "C" fn cs_env_spec_count(env: *const CsEnv) -> usize {
    env.as_ref().map(|e| e.env.spec_count()).unwrap_or(0)
}

/// Measures a design. `params` holds `n_params` values in netlist parameter
/// order; metric values are written to `out_specs`.
#[no_mangle]
pub unsafe extern "C" fn cs_env_evaluate(
    env: *const CsEnv,
    params: *const f64,
    n_params: usize,
    out_specs: *mut f64,
    n_specs: usize,
) -> CsStatus {
    let result = guard("cs_env_evaluate", || {
        let env = env
            .as_ref()
            .ok_or((CsStatus::CsNullArg, "env is null".to_string()))?;
        let params = read_slice(params, n_params, env.env.param_count(), "params")?;
        let out = write_slice(out_specs, n_specs, env.env.spec_count(), "out_specs")?;
        let achieved = env
            .env
            .evaluator()
            .evaluate(params)
            .map_err(|e| (CsStatus::CsEvalError, e.to_string()))?;
        out.copy_from_slice(&achieved);
        Ok(())
    });
    result.err().unwrap_or(CsStatus::CsOk)
}

/// Scores measured metrics against a target: the summed normalized
/// shortfall, or the environment's success bonus when every target is met.
#[no_mangle]
pub unsafe extern "C" fn cs_env_reward(
    env: *const CsEnv,
    achieved: *const f64,
    goal: *const f64,
    n_specs: usize,
    out_reward: *mut f64,
) -> CsStatus {
    let result = guard("cs_env_reward", || {
        let env = env
            .as_ref()
            .ok_or((CsStatus::CsNullArg, "env is null".to_string()))?;
        let achieved = read_slice(achieved, n_specs, env.env.spec_count(), "achieved")?;
        let goal = read_slice(goal, n_specs, env.env.spec_count(), "goal")?;
        if out_reward.is_null() {
            return Err((CsStatus::CsNullArg, "out_reward is null".to_string()));
        }
        let bonus = match &env.env.mode {
            RewardMode::GoalSeek { bonus } => *bonus,
            _ => 0.0,
        };
        let value = reward(achieved, goal, env.env.spec_defs(), bonus)
            .map_err(|e| (CsStatus::CsEvalError, e.to_string()))?;
        *out_reward = value;
        Ok(())
    });
    result.err().unwrap_or(CsStatus::CsOk)
}

/// Draws one target from the environment's sampling ranges, deterministic in
/// `seed`, into `out_goal`.
#[no_mangle]
pub unsafe extern "C" fn cs_env_sample_goal(
    env: *const CsEnv,
    seed: u64,
    out_goal: *mut f64,
    n_specs: usize,
) -> CsStatus {
    let result = guard("cs_env_sample_goal", || {
        let env = env
            .as_ref()
            .ok_or((CsStatus::CsNullArg, "env is null".to_string()))?;
        let out = write_slice(out_goal, n_specs, env.env.spec_count(), "out_goal")?;
        let mut rng = stream_rng(seed, "ffi-goal");
        out.copy_from_slice(&env.env.sample_goal(&mut rng));
        Ok(())
    });
    result.err().unwrap_or(CsStatus::CsOk)
}

/// Loads a trained policy checkpoint. Returns null on failure (see
/// `cs_last_error`). Free with `cs_policy_free`.
#[no_mangle]
pub unsafe extern "C" fn cs_policy_load(path: *const c_char) -> *mut CsPolicy {
    let result = guard("cs_policy_load", || {
        let path = read_str(path, "path")?;
        let (net, _fingerprint) = PolicyNet::load(std::path::Path::new(path)).map_err(|e| {
            let status = match &e {
                circuit_sizer::policy::PolicyError::Io(_) => CsStatus::CsIoError,
                _ => CsStatus::CsFormatError,
            };
            (status, e.to_string())
        })?;
        Ok(Box::into_raw(Box::new(CsPolicy { net })))
    });
    result.unwrap_or(std::ptr::null_mut())
}

/// Releases a policy handle. Null is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_policy_free(policy: *mut CsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Greedily deploys a trained policy toward `goal`. Writes the final design
/// to `out_params` and its measured metrics to `out_achieved`; `out_reached`
/// (optional) reports whether every target was met and `out_steps`
/// (optional) how many adjustment steps ran.
#[no_mangle]
pub unsafe extern "C" fn cs_policy_rollout(
    env: *const CsEnv,
    policy: *const CsPolicy,
    goal: *const f64,
    n_goal: usize,
    out_params: *mut f64,
    n_params: usize,
    out_achieved: *mut f64,
    n_specs: usize,
    out_reached: *mut bool,
    out_steps: *mut usize,
) -> CsStatus {
    let result = guard("cs_policy_rollout", || {
        let env = env
            .as_ref()
            .ok_or((CsStatus::CsNullArg, "env is null".to_string()))?;
        let policy = policy
            .as_ref()
            .ok_or((CsStatus::CsNullArg, "policy is null".to_string()))?;
        let arch = policy.net.arch();
        if arch.action_rows != env.env.param_count()
            || arch.spec_count != env.env.spec_count()
            || arch.node_feature_width != NODE_FEATURE_WIDTH
        {
            return Err((
                CsStatus::CsFormatError,
                format!(
                    "policy acts on {} parameters and {} metrics, circuit has {} and {}",
                    arch.action_rows,
                    arch.spec_count,
                    env.env.param_count(),
                    env.env.spec_count()
                ),
            ));
        }
        let goal = read_slice(goal, n_goal, env.env.spec_count(), "goal")?;
        let params_out = write_slice(out_params, n_params, env.env.param_count(), "out_params")?;
        let achieved_out = write_slice(out_achieved, n_specs, env.env.spec_count(), "out_achieved")?;
        let trace = greedy_rollout(&env.env, &policy.net, goal.to_vec())
            .map_err(|e| (CsStatus::CsEvalError, e.to_string()))?;
        params_out.copy_from_slice(&trace.final_params);
        achieved_out.copy_from_slice(&trace.final_achieved);
        if !out_reached.is_null() {
            *out_reached = trace.reached_goal;
        }
        if !out_steps.is_null() {
            *out_steps = trace.steps.len();
        }
        Ok(())
    });
    result.err().unwrap_or(CsStatus::CsOk)
}
