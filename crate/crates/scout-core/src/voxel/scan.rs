//! Simulated depth sensing: frustum ray casting against a ground-truth map.
//!
//! The sensor is noise-free. Rays start at the pose, sweep the configured
//! horizontal/vertical field of view around the pose yaw, and stop at the
//! first ground-truth occupied voxel or at max range. Angular spacing is
//! chosen so adjacent rays are at most one voxel apart at full range, which
//! leaves no holes in observed surfaces.

use super::{GridWalk, MapError, ScanResult, VoxelIdx, VoxelMap, VoxelState};
use crate::config::PlannerConfig;
use crate::geom::Viewpoint;
use crate::par;
use nalgebra::Vector3;

const RAY_CHUNK: usize = 256;

/// Precomputed sensor-frame ray directions (unit length) plus range.
#[derive(Debug, Clone)]
pub struct SensorModel {
    dirs: Vec<Vector3<f64>>,
    range: f64,
}

impl SensorModel {
    pub fn new(cfg: &PlannerConfig) -> Self {
        let dtheta = cfg.r_v / cfg.sensor_range;
        let n_h = (cfg.sensor_fov_h / dtheta).ceil() as usize + 1;
        let n_v = (cfg.sensor_fov_v / dtheta).ceil() as usize + 1;
        let mut dirs = Vec::with_capacity(n_h * n_v);
        for iv in 0..n_v {
            let pitch = -cfg.sensor_fov_v / 2.0
                + cfg.sensor_fov_v * (iv as f64) / ((n_v - 1).max(1) as f64);
            for ih in 0..n_h {
                let az = -cfg.sensor_fov_h / 2.0
                    + cfg.sensor_fov_h * (ih as f64) / ((n_h - 1).max(1) as f64);
                dirs.push(Vector3::new(
                    pitch.cos() * az.cos(),
                    pitch.cos() * az.sin(),
                    pitch.sin(),
                ));
            }
        }
        Self {
            dirs,
            range: cfg.sensor_range,
        }
    }

    pub fn ray_count(&self) -> usize {
        self.dirs.len()
    }

    pub fn range(&self) -> f64 {
        self.range
    }
}

fn cast_chunk(
    gt: &VoxelMap,
    pose: &Viewpoint,
    sensor: &SensorModel,
    lo: usize,
    hi: usize,
) -> Vec<(VoxelIdx, VoxelState)> {
    let (sin_yaw, cos_yaw) = pose.yaw().sin_cos();
    let mut out = Vec::with_capacity((hi - lo) * 8);
    for d in &sensor.dirs[lo..hi] {
        let world = Vector3::new(
            d.x * cos_yaw - d.y * sin_yaw,
            d.x * sin_yaw + d.y * cos_yaw,
            d.z,
        );
        for idx in GridWalk::new(&gt.origin(), gt.res(), &pose.pos, &world, sensor.range) {
            if !gt.in_bounds(idx) {
                break;
            }
            if gt.state(idx) == VoxelState::Occupied {
                out.push((idx, VoxelState::Occupied));
                break;
            }
            out.push((idx, VoxelState::Free));
        }
    }
    out
}

/// Casts the full frustum and returns the observation list in ray order.
/// Rays are independent, so chunks run on the rayon pool when the
/// `parallel` feature is enabled; the merge order is fixed either way.
pub fn cast_rays(
    gt: &VoxelMap,
    pose: &Viewpoint,
    sensor: &SensorModel,
) -> Vec<(VoxelIdx, VoxelState)> {
    let n_chunks = sensor.dirs.len().div_ceil(RAY_CHUNK);
    let chunks = par::map_range(n_chunks, |c| {
        let lo = c * RAY_CHUNK;
        let hi = (lo + RAY_CHUNK).min(sensor.dirs.len());
        cast_chunk(gt, pose, sensor, lo, hi)
    });
    chunks.concat()
}

/// Sequential twin of [`cast_rays`], for benchmarks and cross-checks.
pub fn cast_rays_seq(
    gt: &VoxelMap,
    pose: &Viewpoint,
    sensor: &SensorModel,
) -> Vec<(VoxelIdx, VoxelState)> {
    let n_chunks = sensor.dirs.len().div_ceil(RAY_CHUNK);
    let chunks = par::map_range_seq(n_chunks, |c| {
        let lo = c * RAY_CHUNK;
        let hi = (lo + RAY_CHUNK).min(sensor.dirs.len());
        cast_chunk(gt, pose, sensor, lo, hi)
    });
    chunks.concat()
}

/// Senses once from `pose` and integrates the result into `map`.
pub fn integrate_scan(
    map: &mut VoxelMap,
    pose: &Viewpoint,
    gt: &VoxelMap,
    sensor: &SensorModel,
) -> Result<ScanResult, MapError> {
    debug_assert!(map.same_geometry(gt), "observed map must match ground truth");
    if !gt.contains_point(&pose.pos) {
        return Err(MapError::OutOfBounds(pose.pos.x, pose.pos.y, pose.pos.z));
    }
    let pose_voxel = gt.voxel_of(&pose.pos).unwrap();
    if gt.state(pose_voxel) == VoxelState::Occupied {
        return Err(MapError::PoseInOccupied);
    }
    let obs = cast_rays(gt, pose, sensor);
    Ok(map.apply_observations(&obs))
}

/// Marks every ground-truth free voxel within `radius` of `center` as
/// observed free: the volume the robot's own body has swept through.
pub fn reveal_sphere(
    map: &mut VoxelMap,
    center: &Vector3<f64>,
    radius: f64,
    gt: &VoxelMap,
) -> ScanResult {
    let Some(c) = gt.voxel_of(center) else {
        return ScanResult::default();
    };
    let r = (radius / gt.res()).ceil() as i32;
    let mut obs = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                let v = VoxelIdx::new(c.x + dx, c.y + dy, c.z + dz);
                if !gt.in_bounds(v) {
                    continue;
                }
                if (gt.voxel_center(v) - center).norm() > radius {
                    continue;
                }
                if gt.state(v) != VoxelState::Occupied {
                    obs.push((v, VoxelState::Free));
                }
            }
        }
    }
    map.apply_observations(&obs)
}
