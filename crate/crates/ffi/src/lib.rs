//! C ABI for the assembly planner.
//!
//! Handles are opaque pointers created from JSON (the same schemas the CLI
//! uses) and freed with the matching `_free` function. Every fallible call
//! returns an [`SpStatus`]; on failure a thread-local message is available
//! through [`sp_last_error_message`]. Strings returned through out-pointers
//! are owned by the caller and must be released with [`sp_string_free`].
//!
//! The C header is generated into `include/stackplan.h` at build time.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use stackplan::formats::{plan_to_file, LayoutFile, ObservationFile, SceneFile};
use stackplan::planner::{self, Layout, SearchConfig};
use stackplan::scene::{Catalog, Observation, PlanResult, Scene};
use stackplan::vision::{self, VisionConfig};

/// Status code of every fallible call.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    SpOk = 0,
    /// A required pointer was null or an argument was out of range.
    SpInvalidArgument = 1,
    /// JSON could not be parsed or failed validation.
    SpParseError = 2,
    /// The search finished without a plan matching every visible object.
    SpPlanningFailure = 3,
    /// Internal failure; details via `sp_last_error_message`.
    SpInternalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl ToString) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SpStatus> {
    if ptr.is_null() {
        set_error(format!("{name} must not be null"));
        return Err(SpStatus::SpInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        SpStatus::SpInvalidArgument
    })
}

fn out_string(text: String, out: *mut *mut c_char) -> SpStatus {
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SpStatus::SpOk
        }
        Err(_) => {
            set_error("output contained an interior NUL byte");
            SpStatus::SpInternalError
        }
    }
}

macro_rules! check_out {
    ($out:expr) => {
        if $out.is_null() {
            set_error("out pointer must not be null");
            return SpStatus::SpInvalidArgument;
        }
    };
}

macro_rules! deref {
    ($ptr:expr, $name:literal) => {
        match $ptr.as_ref() {
            Some(r) => r,
            None => {
                set_error(concat!($name, " handle must not be null"));
                return SpStatus::SpInvalidArgument;
            }
        }
    };
}

/// A validated ground-truth scene (catalog, table, placements).
pub struct SpScene {
    scene: Scene,
}

/// Detections of the visible subset of a scene.
pub struct SpObservation {
    observation: Observation,
}

/// Pick poses for every catalog object plus the global place offset.
pub struct SpLayout {
    layout: Layout,
}

/// A finished plan together with the catalog it refers to.
pub struct SpPlan {
    plan: PlanResult,
    catalog: Catalog,
}

/// Parses and validates a scene from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn sp_scene_from_json(
    json: *const c_char,
    out: *mut *mut SpScene,
) -> SpStatus {
    check_out!(out);
    let text = match utf8_arg(json, "scene json") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let file: SceneFile = match serde_json::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            set_error(e);
            return SpStatus::SpParseError;
        }
    };
    let catalog = match Catalog::new(file.catalog) {
        Ok(c) => c,
        Err(e) => {
            set_error(e);
            return SpStatus::SpParseError;
        }
    };
    let placements = file
        .placements
        .into_iter()
        .map(|r| (r.id, r.pose))
        .collect();
    match Scene::new(catalog, file.table, placements) {
        Ok(scene) => {
            *out = Box::into_raw(Box::new(SpScene { scene }));
            SpStatus::SpOk
        }
        Err(e) => {
            set_error(e);
            SpStatus::SpParseError
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_scene_free(scene: *mut SpScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of catalog objects in the scene.
#[no_mangle]
pub unsafe extern "C" fn sp_scene_object_count(scene: *const SpScene) -> usize {
    scene.as_ref().map(|s| s.scene.catalog.len()).unwrap_or(0)
}

/// Parses an observation from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn sp_observation_from_json(
    json: *const c_char,
    out: *mut *mut SpObservation,
) -> SpStatus {
    check_out!(out);
    let text = match utf8_arg(json, "observation json") {
        Ok(t) => t,
        Err(s) => return s,
    };
    match serde_json::from_str::<ObservationFile>(text) {
        Ok(file) => {
            *out = Box::into_raw(Box::new(SpObservation {
                observation: file.into(),
            }));
            SpStatus::SpOk
        }
        Err(e) => {
            set_error(e);
            SpStatus::SpParseError
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_observation_free(observation: *mut SpObservation) {
    if !observation.is_null() {
        drop(Box::from_raw(observation));
    }
}

/// Number of detections (the size of the visible set).
#[no_mangle]
pub unsafe extern "C" fn sp_observation_detection_count(
    observation: *const SpObservation,
) -> usize {
    observation
        .as_ref()
        .map(|o| o.observation.detections.len())
        .unwrap_or(0)
}

/// Serializes an observation to JSON (caller frees via `sp_string_free`).
#[no_mangle]
pub unsafe extern "C" fn sp_observation_to_json(
    observation: *const SpObservation,
    out_json: *mut *mut c_char,
) -> SpStatus {
    check_out!(out_json);
    let obs = deref!(observation, "observation");
    let file = ObservationFile::from(&obs.observation);
    out_string(
        serde_json::to_string_pretty(&file).expect("observation serializes"),
        out_json,
    )
}

/// Simulates the vision stage on a scene. `vision_config_json` may be null
/// for defaults; `seed` overrides the config's seed.
#[no_mangle]
pub unsafe extern "C" fn sp_observe(
    scene: *const SpScene,
    vision_config_json: *const c_char,
    seed: u64,
    out: *mut *mut SpObservation,
) -> SpStatus {
    check_out!(out);
    let scene = deref!(scene, "scene");
    let mut cfg: VisionConfig = if vision_config_json.is_null() {
        VisionConfig::default()
    } else {
        let text = match utf8_arg(vision_config_json, "vision config json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(e);
                return SpStatus::SpParseError;
            }
        }
    };
    cfg.seed = seed;
    match vision::observe(&scene.scene, &cfg) {
        Ok(observation) => {
            *out = Box::into_raw(Box::new(SpObservation { observation }));
            SpStatus::SpOk
        }
        Err(e) => {
            set_error(e);
            SpStatus::SpParseError
        }
    }
}

/// Parses a pick layout from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn sp_layout_from_json(
    json: *const c_char,
    out: *mut *mut SpLayout,
) -> SpStatus {
    check_out!(out);
    let text = match utf8_arg(json, "layout json") {
        Ok(t) => t,
        Err(s) => return s,
    };
    match serde_json::from_str::<LayoutFile>(text) {
        Ok(file) => {
            let layout = Layout {
                picks: file.picks.into_iter().map(|p| (p.id, p.pose)).collect(),
                place_offset: file.place_offset,
            };
            *out = Box::into_raw(Box::new(SpLayout { layout }));
            SpStatus::SpOk
        }
        Err(e) => {
            set_error(e);
            SpStatus::SpParseError
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_layout_free(layout: *mut SpLayout) {
    if !layout.is_null() {
        drop(Box::from_raw(layout));
    }
}

/// Searches for an assembly plan. `search_config_json` may be null for
/// defaults; `seed` overrides the config's seed. Returns
/// `SpPlanningFailure` (with a best-effort plan in `out`) when the budget
/// runs out before every visible object is matched.
#[no_mangle]
pub unsafe extern "C" fn sp_plan(
    scene: *const SpScene,
    observation: *const SpObservation,
    layout: *const SpLayout,
    search_config_json: *const c_char,
    seed: u64,
    out: *mut *mut SpPlan,
) -> SpStatus {
    check_out!(out);
    *out = ptr::null_mut();
    let scene = deref!(scene, "scene");
    let observation = deref!(observation, "observation");
    let layout = deref!(layout, "layout");
    let mut cfg: SearchConfig = if search_config_json.is_null() {
        SearchConfig::default()
    } else {
        let text = match utf8_arg(search_config_json, "search config json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(e);
                return SpStatus::SpParseError;
            }
        }
    };
    cfg.seed = seed;
    match planner::plan(
        &scene.scene.catalog,
        scene.scene.table,
        &observation.observation,
        &layout.layout,
        &cfg,
    ) {
        Ok(plan) => {
            let success = plan.success;
            *out = Box::into_raw(Box::new(SpPlan {
                plan,
                catalog: scene.scene.catalog.clone(),
            }));
            if success {
                SpStatus::SpOk
            } else {
                set_error("budget exhausted; best-effort plan returned");
                SpStatus::SpPlanningFailure
            }
        }
        Err(e) => {
            set_error(&e);
            match e {
                planner::PlanError::NoFeasiblePlan | planner::PlanError::AllOperatorsPruned => {
                    SpStatus::SpPlanningFailure
                }
                _ => SpStatus::SpInvalidArgument,
            }
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn sp_plan_free(plan: *mut SpPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Whether every visible object was matched.
#[no_mangle]
pub unsafe extern "C" fn sp_plan_success(plan: *const SpPlan) -> bool {
    plan.as_ref().map(|p| p.plan.success).unwrap_or(false)
}

/// Achieved reward in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn sp_plan_reward(plan: *const SpPlan) -> f64 {
    plan.as_ref().map(|p| p.plan.reward).unwrap_or(0.0)
}

/// Number of search rollouts spent.
#[no_mangle]
pub unsafe extern "C" fn sp_plan_rollouts_used(plan: *const SpPlan) -> u64 {
    plan.as_ref().map(|p| p.plan.rollouts_used).unwrap_or(0)
}

/// Number of pick-and-place steps.
#[no_mangle]
pub unsafe extern "C" fn sp_plan_step_count(plan: *const SpPlan) -> usize {
    plan.as_ref().map(|p| p.plan.steps.len()).unwrap_or(0)
}

/// Serializes the plan to its JSON file form (caller frees the string).
#[no_mangle]
pub unsafe extern "C" fn sp_plan_to_json(
    plan: *const SpPlan,
    out_json: *mut *mut c_char,
) -> SpStatus {
    check_out!(out_json);
    let plan = deref!(plan, "plan");
    let file = plan_to_file(&plan.plan, &plan.catalog);
    out_string(
        serde_json::to_string_pretty(&file).expect("plan serializes"),
        out_json,
    )
}
