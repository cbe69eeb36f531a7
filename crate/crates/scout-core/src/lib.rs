//! Dual-layer autonomous exploration planning on voxel grids.
//!
//! The crate couples a global layer — topological region routing solved with
//! an exploration-oriented heuristic Christofides walk — with a local layer
//! that picks curvature-penalized viewpoint targets and optimizes a
//! three-branch (exploring / continuous / safety) 4-D trajectory. A
//! deterministic closed-loop simulator drives the whole stack against
//! ASCII-grid environments and records coverage, speed, and planning
//! metrics.
//!
//! Data-parallel inner loops (ray casting, candidate scoring, distance-matrix
//! construction) run on rayon when the default `parallel` feature is on and
//! fall back to plain iterators without it; results are identical either way.

pub mod config;
pub mod dtg;
pub mod geom;
pub mod par;
pub mod pathfield;
pub mod router;
pub mod sim;
pub mod trajectory;
pub mod viewpoint;
pub mod voxel;

pub use config::PlannerConfig;
pub use geom::{wrap_angle, yaw_diff, Aabb, KinState, Viewpoint};
