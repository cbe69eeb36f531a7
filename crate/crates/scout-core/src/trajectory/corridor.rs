//! Collision-free corridors: chains of overlapping axis-aligned boxes
//! grown greedily from samples along a path polyline.
//!
//! Each box expands one voxel layer at a time in the six face directions as
//! long as every new voxel satisfies the mode predicate, up to a maximum
//! half extent. Faces that stopped against a violating voxel (or the map
//! edge) are pulled in by half a voxel afterwards, so a soft-constrained
//! trajectory keeps real clearance from the first inadmissible voxel.

use super::TrajError;
use crate::config::PlannerConfig;
use crate::geom::Aabb;
use crate::voxel::{VoxelIdx, VoxelMap, VoxelState};
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorridorMode {
    /// Boxes may only contain observed-free voxels.
    KnownFree,
    /// Boxes may contain free or unknown voxels, never occupied ones.
    NonOccupied,
}

impl CorridorMode {
    fn admits(self, s: VoxelState) -> bool {
        match self {
            CorridorMode::KnownFree => s == VoxelState::Free,
            CorridorMode::NonOccupied => s != VoxelState::Occupied,
        }
    }
}

fn resample(polyline: &[Vector3<f64>], step: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    if polyline.is_empty() {
        return out;
    }
    out.push(polyline[0]);
    let mut carry = 0.0;
    for w in polyline.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len < 1e-12 {
            continue;
        }
        let dir = seg / len;
        let mut s = step - carry;
        while s < len {
            out.push(w[0] + dir * s);
            s += step;
        }
        carry = len - (s - step);
    }
    let last = *polyline.last().unwrap();
    if (out.last().unwrap() - last).norm() > 1e-9 {
        out.push(last);
    }
    out
}

/// Greedy box inflation along `polyline`. Errors when a polyline sample
/// itself violates the predicate.
pub fn corridor_from_path(
    map: &VoxelMap,
    polyline: &[Vector3<f64>],
    mode: CorridorMode,
    cfg: &PlannerConfig,
) -> Result<Vec<Aabb>, TrajError> {
    if polyline.is_empty() {
        return Err(TrajError::BadShape("empty corridor polyline".into()));
    }
    let res = map.res();
    let max_steps = (cfg.corridor_max_ext / res).floor() as i32;
    let samples = resample(polyline, res);
    let mut boxes: Vec<Aabb> = Vec::new();
    for s in &samples {
        if let Some(last) = boxes.last() {
            // Stay inside the previous box with a little slack before
            // seeding a new one.
            if last.distance_outside(s) == 0.0 {
                let inner = Aabb::new(
                    last.min + Vector3::repeat(0.45 * res),
                    last.max - Vector3::repeat(0.45 * res),
                );
                if inner.min.x <= inner.max.x && inner.contains(s) {
                    continue;
                }
            }
        }
        let seed = map
            .voxel_of(s)
            .filter(|&v| mode.admits(map.state(v)))
            .ok_or_else(|| {
                TrajError::CorridorSeed(format!(
                    "polyline point ({:.2}, {:.2}, {:.2}) violates the corridor predicate",
                    s.x, s.y, s.z
                ))
            })?;
        let mut lo = [seed.x, seed.y, seed.z];
        let mut hi = [seed.x, seed.y, seed.z];
        // blocked[face]: 0 = growing, 1 = stopped at limit, 2 = stopped at
        // a violating voxel or map edge (gets the safety inset).
        let mut blocked = [0u8; 6];
        loop {
            let mut grew = false;
            for face in 0..6 {
                if blocked[face] != 0 {
                    continue;
                }
                let axis = face / 2;
                let positive = face % 2 == 0;
                let reach = if positive {
                    hi[axis] - [seed.x, seed.y, seed.z][axis]
                } else {
                    [seed.x, seed.y, seed.z][axis] - lo[axis]
                };
                if reach >= max_steps {
                    blocked[face] = 1;
                    continue;
                }
                let mut nlo = lo;
                let mut nhi = hi;
                if positive {
                    nhi[axis] += 1;
                    nlo[axis] = nhi[axis];
                } else {
                    nlo[axis] -= 1;
                    nhi[axis] = nlo[axis];
                }
                let mut ok = true;
                'layer: for x in nlo[0]..=nhi[0] {
                    for y in nlo[1]..=nhi[1] {
                        for z in nlo[2]..=nhi[2] {
                            let v = VoxelIdx::new(x, y, z);
                            if !map.in_bounds(v) || !mode.admits(map.state(v)) {
                                ok = false;
                                break 'layer;
                            }
                        }
                    }
                }
                if ok {
                    if positive {
                        hi[axis] += 1;
                    } else {
                        lo[axis] -= 1;
                    }
                    grew = true;
                } else {
                    blocked[face] = 2;
                }
            }
            if !grew {
                break;
            }
        }
        let origin = map.origin();
        let mut min = Vector3::new(
            origin.x + lo[0] as f64 * res,
            origin.y + lo[1] as f64 * res,
            origin.z + lo[2] as f64 * res,
        );
        let mut max = Vector3::new(
            origin.x + (hi[0] + 1) as f64 * res,
            origin.y + (hi[1] + 1) as f64 * res,
            origin.z + (hi[2] + 1) as f64 * res,
        );
        // Inset faces that stopped against inadmissible voxels, keeping the
        // seed sample strictly inside.
        for face in 0..6 {
            if blocked[face] != 2 {
                continue;
            }
            let axis = face / 2;
            let inset = 0.5 * res;
            if face % 2 == 0 {
                if max[axis] - inset > s[axis] && max[axis] - inset - min[axis] > res {
                    max[axis] -= inset;
                }
            } else if min[axis] + inset < s[axis] && max[axis] - (min[axis] + inset) > res {
                min[axis] += inset;
            }
        }
        boxes.push(Aabb::new(min, max));
    }
    debug_assert!(boxes.windows(2).all(|w| w[0].intersects(&w[1])));
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(dims: [usize; 3], res: f64, occupied: &dyn Fn(i32, i32, i32) -> bool) -> VoxelMap {
        let mut map = VoxelMap::new(Vector3::zeros(), dims, res);
        let mut obs = Vec::new();
        for x in 0..dims[0] as i32 {
            for y in 0..dims[1] as i32 {
                for z in 0..dims[2] as i32 {
                    let st = if occupied(x, y, z) {
                        VoxelState::Occupied
                    } else {
                        VoxelState::Free
                    };
                    obs.push((VoxelIdx::new(x, y, z), st));
                }
            }
        }
        map.apply_observations(&obs);
        map
    }

    fn cfg() -> PlannerConfig {
        PlannerConfig::default()
    }

    #[test]
    fn open_cube_yields_one_box_containing_the_line() {
        let c = cfg();
        // 10 m cube at 0.1 res; max half extent 4 m covers a short line.
        let map = room([100, 100, 100], 0.1, &|_, _, _| false);
        let line = vec![Vector3::new(4.0, 5.0, 5.0), Vector3::new(6.0, 5.0, 5.0)];
        let boxes = corridor_from_path(&map, &line, CorridorMode::KnownFree, &c).unwrap();
        assert_eq!(boxes.len(), 1);
        assert!(boxes[0].contains(&line[0]) && boxes[0].contains(&line[1]));
    }

    #[test]
    fn narrow_corridor_boxes_avoid_occupied_voxels() {
        let c = cfg();
        // Corridor 3 voxels wide in y around y = 5; walls elsewhere.
        let map = room([60, 11, 5], 0.1, &|_, y, _| !(4..=6).contains(&y));
        let line = vec![
            Vector3::new(0.55, 0.55, 0.25),
            Vector3::new(5.45, 0.55, 0.25),
        ];
        let boxes = corridor_from_path(&map, &line, CorridorMode::KnownFree, &c).unwrap();
        assert!(!boxes.is_empty());
        for b in &boxes {
            // Exhaustive voxel check: every voxel center inside a box must
            // be admissible.
            let lo = map.voxel_of(&(b.min + Vector3::repeat(0.01))).unwrap();
            let hi = map.voxel_of(&(b.max - Vector3::repeat(0.01))).unwrap();
            for x in lo.x..=hi.x {
                for y in lo.y..=hi.y {
                    for z in lo.z..=hi.z {
                        assert_ne!(
                            map.state(VoxelIdx::new(x, y, z)),
                            VoxelState::Occupied,
                            "corridor box contains an occupied voxel"
                        );
                    }
                }
            }
            // Inset keeps real clearance from the walls.
            assert!(b.min.y > 0.4 - 1e-9 && b.max.y < 0.7 + 1e-9);
        }
        // Consecutive boxes overlap.
        for w in boxes.windows(2) {
            assert!(w[0].intersects(&w[1]));
        }
    }

    #[test]
    fn random_maps_every_box_voxel_is_admissible() {
        let c = cfg();
        // Deterministic scattered obstacles away from the polyline.
        let map = room([80, 80, 10], 0.1, &|x, y, z| {
            (x * 31 + y * 17 + z * 7) % 23 == 0 && (y < 35 || y > 45)
        });
        let line = vec![
            Vector3::new(1.05, 4.05, 0.55),
            Vector3::new(6.55, 4.05, 0.55),
        ];
        for mode in [CorridorMode::KnownFree, CorridorMode::NonOccupied] {
            let boxes = corridor_from_path(&map, &line, mode, &c).unwrap();
            for b in &boxes {
                let lo = map.voxel_of(&(b.min + Vector3::repeat(1e-6))).unwrap();
                let hi = map.voxel_of(&(b.max - Vector3::repeat(1e-6))).unwrap();
                for x in lo.x..=hi.x {
                    for y in lo.y..=hi.y {
                        for z in lo.z..=hi.z {
                            let s = map.state(VoxelIdx::new(x, y, z));
                            assert!(mode.admits(s), "box voxel violates predicate");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn polyline_through_wall_is_rejected() {
        let c = cfg();
        let map = room([60, 11, 5], 0.1, &|x, _, _| x == 30);
        let line = vec![
            Vector3::new(0.55, 0.55, 0.25),
            Vector3::new(5.45, 0.55, 0.25),
        ];
        assert!(matches!(
            corridor_from_path(&map, &line, CorridorMode::KnownFree, &c),
            Err(TrajError::CorridorSeed(_))
        ));
    }

    #[test]
    fn unknown_space_needs_non_occupied_mode() {
        let c = cfg();
        let mut map = VoxelMap::new(Vector3::zeros(), [60, 11, 5], 0.1);
        let mut obs = Vec::new();
        for x in 0..30 {
            for y in 0..11 {
                for z in 0..5 {
                    obs.push((VoxelIdx::new(x, y, z), VoxelState::Free));
                }
            }
        }
        map.apply_observations(&obs);
        let line = vec![
            Vector3::new(0.55, 0.55, 0.25),
            Vector3::new(5.45, 0.55, 0.25),
        ];
        assert!(corridor_from_path(&map, &line, CorridorMode::KnownFree, &c).is_err());
        let boxes = corridor_from_path(&map, &line, CorridorMode::NonOccupied, &c).unwrap();
        assert!(!boxes.is_empty());
        assert!(boxes.last().unwrap().contains(&line[1]));
    }
}
