//! Three-branch 4-D trajectory planning: minimum-jerk splines, corridors,
//! penalty objective, and the quasi-Newton optimizer, plus the glue that
//! turns a selected viewpoint triple into an optimized trajectory.

mod corridor;
mod objective;
mod optimize;
mod spline;

pub use corridor::{corridor_from_path, CorridorMode};
pub use objective::{
    branch_feasibility, objective, AseoBoundary, AseoCorridors, AseoGradient, AseoParams,
    AseoTrajectory,
};
pub use optimize::optimize;
pub use spline::{build_spline, pullback, EvalPolicy, Segment4, Spline4, SplineAdjoint, State4};

use crate::config::PlannerConfig;
use crate::geom::{unwrap_towards, KinState};
use crate::pathfield::point_along;
use crate::viewpoint::ViewpointTriple;
use crate::voxel::VoxelMap;
use nalgebra::{Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("non-positive segment duration {0}")]
    NonPositiveDuration(f64),
    #[error("bad trajectory shape: {0}")]
    BadShape(String),
    #[error("spline system is singular: {0}")]
    Singular(String),
    #[error("evaluation time {t} outside [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("corridor construction failed: {0}")]
    CorridorSeed(String),
    #[error("boundary conditions violated: {0}")]
    BoundaryViolation(String),
}

fn polyline_length(polyline: &[Vector3<f64>]) -> f64 {
    polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Seeds one branch: segment count from path length, waypoints evenly by
/// arc length, yaw interpolated linearly, and conservative durations the
/// optimizer then shortens.
fn seed_branch(
    polyline: &[Vector3<f64>],
    yaw_from: f64,
    yaw_to: f64,
    cfg: &PlannerConfig,
) -> (Vec<Vector4<f64>>, Vec<f64>) {
    let len = polyline_length(polyline);
    let m = ((len / cfg.seg_len).ceil() as u32).clamp(1, cfg.max_segs) as usize;
    let mut waypoints = Vec::with_capacity(m - 1);
    for k in 1..m {
        let frac = k as f64 / m as f64;
        let p = point_along(polyline, len * frac);
        let yaw = yaw_from + (yaw_to - yaw_from) * frac;
        waypoints.push(Vector4::new(p.x, p.y, p.z, yaw));
    }
    let seg_time = (len / m as f64 / (0.6 * cfg.v_m))
        .max((yaw_to - yaw_from).abs() / m as f64 / (0.7 * cfg.psi_dot_m))
        .max(cfg.t_min + 0.1);
    (waypoints, vec![seg_time; m])
}

/// Builds corridors and an initial guess for the selected triple, then
/// optimizes. The continuous branch may cross unknown space; the exploring
/// and safety branches stay in observed free space.
pub fn plan_aseo(
    map: &VoxelMap,
    robot: &KinState,
    triple: &ViewpointTriple,
    cfg: &PlannerConfig,
) -> Result<AseoTrajectory, TrajError> {
    let corridors = AseoCorridors {
        exploring: corridor_from_path(map, &triple.explore_path, CorridorMode::KnownFree, cfg)?,
        continuous: corridor_from_path(
            map,
            &triple.continue_path,
            CorridorMode::NonOccupied,
            cfg,
        )?,
        safety: corridor_from_path(map, &triple.safety_path, CorridorMode::KnownFree, cfg)?,
    };

    let yaw0 = robot.vp.yaw();
    let yaw_e = unwrap_towards(yaw0, triple.exploring.yaw());
    let yaw_c = unwrap_towards(yaw_e, triple.continuous.yaw());
    let yaw_s = unwrap_towards(yaw_e, triple.safety.yaw());

    let p4 = |p: &Vector3<f64>, yaw: f64| Vector4::new(p.x, p.y, p.z, yaw);
    let boundary = AseoBoundary {
        start: State4 {
            p: p4(&robot.vp.pos, yaw0),
            v: robot.vel,
            a: robot.acc,
        },
        vp_e: p4(&triple.exploring.pos, yaw_e),
        vp_c: p4(&triple.continuous.pos, yaw_c),
        vp_s: p4(&triple.safety.pos, yaw_s),
    };

    let (wp_e, t_e) = seed_branch(&triple.explore_path, yaw0, yaw_e, cfg);
    let (wp_c, t_c) = seed_branch(&triple.continue_path, yaw_e, yaw_c, cfg);
    let (wp_s, t_s) = seed_branch(&triple.safety_path, yaw_e, yaw_s, cfg);

    // Junction guess: carry a fraction of the arc speed toward the
    // continuous target.
    let to_c = triple.continuous.pos - triple.exploring.pos;
    let junction_vel = if to_c.norm() > 1e-6 {
        let dir = to_c / to_c.norm();
        let speed = 0.5 * triple.v_as.min(cfg.v_m);
        Vector4::new(dir.x * speed, dir.y * speed, dir.z * speed, 0.0)
    } else {
        Vector4::zeros()
    };

    let params = AseoParams {
        wp_e,
        t_e,
        wp_c,
        t_c,
        wp_s,
        t_s,
        junction_vel,
        junction_acc: Vector4::zeros(),
    };
    let initial = AseoTrajectory::assemble(&boundary, &params, corridors)?;
    optimize(initial, cfg)
}
