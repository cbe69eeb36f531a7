//! Grid traversal along rays and segments.
//!
//! Classic parametric voxel walk: track, per axis, the ray parameter at
//! which the walk would cross the next voxel boundary, and always step the
//! axis with the smallest crossing. Yields every voxel whose entry
//! parameter is within `[0, t_end]`, starting with the voxel containing the
//! ray origin.

use super::VoxelIdx;
use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct GridWalk {
    cur: [i32; 3],
    step: [i32; 3],
    t_next: [f64; 3],
    t_delta: [f64; 3],
    t_end: f64,
    done: bool,
}

impl GridWalk {
    /// Walk from `a` along `dir`, up to ray parameter `t_end`
    /// (world distance `t_end * |dir|`).
    pub fn new(origin: &Vector3<f64>, res: f64, a: &Vector3<f64>, dir: &Vector3<f64>, t_end: f64) -> Self {
        let mut cur = [0i32; 3];
        let mut step = [0i32; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            let c = ((a[i] - origin[i]) / res).floor() as i32;
            cur[i] = c;
            if dir[i] > 0.0 {
                step[i] = 1;
                t_delta[i] = res / dir[i];
                let boundary = origin[i] + (c + 1) as f64 * res;
                t_next[i] = (boundary - a[i]) / dir[i];
            } else if dir[i] < 0.0 {
                step[i] = -1;
                t_delta[i] = res / -dir[i];
                let boundary = origin[i] + c as f64 * res;
                t_next[i] = (boundary - a[i]) / dir[i];
            }
        }
        Self {
            cur,
            step,
            t_next,
            t_delta,
            t_end,
            done: false,
        }
    }

    /// Walk over every voxel the segment `a -> b` touches, inclusive.
    pub fn segment(origin: &Vector3<f64>, res: f64, a: &Vector3<f64>, b: &Vector3<f64>) -> Self {
        Self::new(origin, res, a, &(b - a), 1.0)
    }
}

impl Iterator for GridWalk {
    type Item = VoxelIdx;

    fn next(&mut self) -> Option<VoxelIdx> {
        if self.done {
            return None;
        }
        let out = VoxelIdx::new(self.cur[0], self.cur[1], self.cur[2]);
        let mut axis = 0;
        for i in 1..3 {
            if self.t_next[i] < self.t_next[axis] {
                axis = i;
            }
        }
        if self.t_next[axis] > self.t_end {
            self.done = true;
        } else {
            self.cur[axis] += self.step[axis];
            self.t_next[axis] += self.t_delta[axis];
        }
        Some(out)
    }
}
