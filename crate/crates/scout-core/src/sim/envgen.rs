//! Deterministic ground-truth scene builders for tests and benchmarks.

use crate::geom::Viewpoint;
use crate::voxel::{VoxelIdx, VoxelMap, VoxelState};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A fully free room of the given extent in meters.
pub fn empty_room(w: f64, d: f64, h: f64, res: f64) -> VoxelMap {
    let dims = [
        (w / res).round() as usize,
        (d / res).round() as usize,
        (h / res).round() as usize,
    ];
    let mut map = VoxelMap::new(Vector3::zeros(), dims, res);
    for x in 0..dims[0] as i32 {
        for y in 0..dims[1] as i32 {
            for z in 0..dims[2] as i32 {
                map.set_state(VoxelIdx::new(x, y, z), VoxelState::Free);
            }
        }
    }
    map
}

/// A maze of full-height walls on a coarse cell lattice, carved with a
/// seeded depth-first walk plus a few extra openings for loops. Corridors
/// are `cell - wall` wide (about 2.3 m at the defaults), which suits
/// desk-scale coverage runs.
pub fn walled_maze(w: f64, d: f64, h: f64, res: f64, seed: u64) -> VoxelMap {
    let dims = [
        (w / res).round() as usize,
        (d / res).round() as usize,
        (h / res).round() as usize,
    ];
    let cell_m = 2.5;
    let wall_m = 0.2;
    let nx_c = ((w / cell_m).floor() as usize).max(2);
    let ny_c = ((d / cell_m).floor() as usize).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // DFS spanning tree over the cell grid.
    let idx = |cx: usize, cy: usize| cy * nx_c + cx;
    let mut visited = vec![false; nx_c * ny_c];
    // open_right[c] / open_up[c]: no wall between cell c and its neighbor.
    let mut open_right = vec![false; nx_c * ny_c];
    let mut open_up = vec![false; nx_c * ny_c];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    while let Some(&(cx, cy)) = stack.last() {
        let mut options: Vec<(usize, usize, u8)> = Vec::new();
        if cx + 1 < nx_c && !visited[idx(cx + 1, cy)] {
            options.push((cx + 1, cy, 0));
        }
        if cx > 0 && !visited[idx(cx - 1, cy)] {
            options.push((cx - 1, cy, 1));
        }
        if cy + 1 < ny_c && !visited[idx(cx, cy + 1)] {
            options.push((cx, cy + 1, 2));
        }
        if cy > 0 && !visited[idx(cx, cy - 1)] {
            options.push((cx, cy - 1, 3));
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (nxc, nyc, dir) = options[rng.random_range(0..options.len())];
        match dir {
            0 => open_right[idx(cx, cy)] = true,
            1 => open_right[idx(nxc, nyc)] = true,
            2 => open_up[idx(cx, cy)] = true,
            _ => open_up[idx(nxc, nyc)] = true,
        }
        visited[idx(nxc, nyc)] = true;
        stack.push((nxc, nyc));
    }
    // Extra openings create loops and cut dead-end backtracking.
    for cy in 0..ny_c {
        for cx in 0..nx_c {
            if cx + 1 < nx_c && !open_right[idx(cx, cy)] && rng.random::<f64>() < 0.25 {
                open_right[idx(cx, cy)] = true;
            }
            if cy + 1 < ny_c && !open_up[idx(cx, cy)] && rng.random::<f64>() < 0.25 {
                open_up[idx(cx, cy)] = true;
            }
        }
    }

    let mut map = VoxelMap::new(Vector3::zeros(), dims, res);
    let wall_vox = (wall_m / res).round().max(1.0) as i32;
    let (nx, ny, nz) = (dims[0] as i32, dims[1] as i32, dims[2] as i32);
    let cell_vox_x = nx as f64 / nx_c as f64;
    let cell_vox_y = ny as f64 / ny_c as f64;
    let mut occupied = vec![false; (nx * ny) as usize];
    let mut fill = |occupied: &mut Vec<bool>, x0: i32, x1: i32, y0: i32, y1: i32| {
        for x in x0.max(0)..x1.min(nx) {
            for y in y0.max(0)..y1.min(ny) {
                occupied[(y * nx + x) as usize] = true;
            }
        }
    };
    // Perimeter.
    fill(&mut occupied, 0, wall_vox, 0, ny);
    fill(&mut occupied, nx - wall_vox, nx, 0, ny);
    fill(&mut occupied, 0, nx, 0, wall_vox);
    fill(&mut occupied, 0, nx, ny - wall_vox, ny);
    // Internal walls where cells stay closed; door-sized gaps where open.
    for cy in 0..ny_c {
        for cx in 0..nx_c {
            if cx + 1 < nx_c {
                let wx = ((cx + 1) as f64 * cell_vox_x).round() as i32;
                let y0 = (cy as f64 * cell_vox_y).round() as i32;
                let y1 = ((cy + 1) as f64 * cell_vox_y).round() as i32;
                if !open_right[idx(cx, cy)] {
                    fill(&mut occupied, wx - wall_vox / 2, wx - wall_vox / 2 + wall_vox, y0, y1);
                }
            }
            if cy + 1 < ny_c {
                let wy = ((cy + 1) as f64 * cell_vox_y).round() as i32;
                let x0 = (cx as f64 * cell_vox_x).round() as i32;
                let x1 = ((cx + 1) as f64 * cell_vox_x).round() as i32;
                if !open_up[idx(cx, cy)] {
                    fill(&mut occupied, x0, x1, wy - wall_vox / 2, wy - wall_vox / 2 + wall_vox);
                }
            }
        }
    }
    for x in 0..nx {
        for y in 0..ny {
            let occ = occupied[(y * nx + x) as usize];
            for z in 0..nz {
                map.set_state(
                    VoxelIdx::new(x, y, z),
                    if occ {
                        VoxelState::Occupied
                    } else {
                        VoxelState::Free
                    },
                );
            }
        }
    }
    map
}

/// Free voxel center nearest the map center, searched in deterministic
/// expanding shells; yaw zero.
pub fn default_start(gt: &VoxelMap) -> Option<Viewpoint> {
    let dims = gt.dims();
    let c = VoxelIdx::new(dims[0] / 2, dims[1] / 2, dims[2] / 2);
    for r in 0..dims.iter().copied().max().unwrap_or(0) {
        let mut best: Option<VoxelIdx> = None;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let v = VoxelIdx::new(c.x + dx, c.y + dy, c.z + dz);
                    if gt.in_bounds(v) && gt.state(v) == VoxelState::Free {
                        best = match best {
                            Some(b) if b <= v => Some(b),
                            _ => Some(v),
                        };
                    }
                }
            }
        }
        if let Some(v) = best {
            return Some(Viewpoint::new(gt.voxel_center(v), 0.0));
        }
    }
    None
}

/// Reachable free volume from `start`: 6-connected flood fill over the
/// ground truth. Returns the reachable voxel set size.
pub fn reachable_free_count(gt: &VoxelMap, start: &Vector3<f64>) -> usize {
    let Some(s) = gt.voxel_of(start) else {
        return 0;
    };
    if gt.state(s) != VoxelState::Free {
        return 0;
    }
    let dims = gt.dims();
    let lin = |v: VoxelIdx| ((v.x * dims[1] + v.y) * dims[2] + v.z) as usize;
    let mut seen = vec![false; (dims[0] * dims[1] * dims[2]) as usize];
    let mut queue = std::collections::VecDeque::from([s]);
    seen[lin(s)] = true;
    let mut count = 0usize;
    while let Some(v) = queue.pop_front() {
        count += 1;
        for n in v.neighbors6() {
            if gt.in_bounds(n) && !seen[lin(n)] && gt.state(n) == VoxelState::Free {
                seen[lin(n)] = true;
                queue.push_back(n);
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_room_is_all_free() {
        let room = empty_room(4.0, 3.0, 2.0, 0.1);
        assert_eq!(room.dims(), [40, 30, 20]);
        assert_eq!(room.n_occupied(), 0);
        assert_eq!(room.n_free(), 40 * 30 * 20);
    }

    #[test]
    fn maze_is_deterministic_and_fully_reachable() {
        let a = walled_maze(20.0, 20.0, 2.0, 0.1, 7);
        let b = walled_maze(20.0, 20.0, 2.0, 0.1, 7);
        assert_eq!(
            crate::voxel::write_env(&a).unwrap(),
            crate::voxel::write_env(&b).unwrap()
        );
        assert!(a.n_occupied() > 0, "maze must have walls");
        let start = default_start(&a).unwrap();
        let reachable = reachable_free_count(&a, &start.pos);
        assert_eq!(
            reachable as u64,
            a.n_free(),
            "every free voxel must be reachable"
        );
    }

    #[test]
    fn different_seeds_give_different_mazes() {
        let a = walled_maze(20.0, 20.0, 2.0, 0.1, 1);
        let b = walled_maze(20.0, 20.0, 2.0, 0.1, 2);
        assert_ne!(
            crate::voxel::write_env(&a).unwrap(),
            crate::voxel::write_env(&b).unwrap()
        );
    }
}
