//! Assembly planning for box stacks from partial, noisy pose observations.
//!
//! Given a catalog of box primitives, a set of observed 6D poses for the
//! visible subset of a target structure, and pick poses for every primitive,
//! this crate searches STRIPS operator sequences with Monte Carlo tree
//! search, recovers precise poses (including those of hidden objects) by
//! constrained least squares under physical stability constraints, and
//! returns an executable pick-and-place plan.
//!
//! Modules:
//! - [`scene`]: primitives, poses, scenes, observations, plans.
//! - [`strips`]: planning states and the four stacking operators.
//! - [`constraints`]: stability constraints and penetration removal.
//! - [`qp`]: the dense active-set quadratic programming solver.
//! - [`planner`]: UCT search, operator filtering, reward evaluation.
//! - [`vision`]: synthetic occlusion-aware detections for experiments.
//! - [`formats`]: JSON file schemas.
//! - [`harness`]: seeded experiment batches, ablations, reports.

pub mod constraints;
pub mod formats;
pub mod harness;
pub mod planner;
pub mod qp;
pub mod scene;
pub mod strips;
pub mod vision;

pub use planner::{plan, plan_traced, Layout, PlanError, SearchConfig};
pub use scene::{Catalog, Observation, PlanResult, Pose, PrimId, Primitive, Rect, Scene, Vec3};
pub use vision::{observe, VisionConfig};
