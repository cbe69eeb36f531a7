//! Lazily expanding Dijkstra over the free voxel grid.
//!
//! One planning cycle runs many target queries against the same source
//! (candidate viewpoints, then safety-viewpoint search), so the search
//! state persists between queries and only expands as far as the farthest
//! settled target. Moves are 26-connected over `Free` voxels, with the
//! usual no-corner-cutting rule: a diagonal step requires its axis
//! projections to be free too.

use crate::voxel::{VoxelIdx, VoxelMap, VoxelState};
use nalgebra::Vector3;
use std::collections::BinaryHeap;

struct Move {
    d: [i32; 3],
    cost: f64,
    guards: Vec<[i32; 3]>,
}

fn moves(res: f64) -> Vec<Move> {
    let mut out = Vec::with_capacity(26);
    for dx in -1i32..=1 {
        for dy in -1i32..=1 {
            for dz in -1i32..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let axes = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                let mut guards = Vec::new();
                if axes >= 2 {
                    for &(gx, gy, gz) in &[
                        (dx, 0, 0),
                        (0, dy, 0),
                        (0, 0, dz),
                        (dx, dy, 0),
                        (dx, 0, dz),
                        (0, dy, dz),
                    ] {
                        let g = [gx, gy, gz];
                        let nonzero = g.iter().filter(|&&v| v != 0).count() as u32;
                        if nonzero > 0 && nonzero < axes {
                            guards.push(g);
                        }
                    }
                }
                out.push(Move {
                    d: [dx, dy, dz],
                    cost: res * (axes as f64).sqrt(),
                    guards,
                });
            }
        }
    }
    out
}

#[derive(PartialEq)]
struct Entry(f64, u32);
impl Eq for Entry {}
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        // Min-heap with index tie-break, so expansion order is total.
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

pub struct PathField<'a> {
    map: &'a VoxelMap,
    start_pos: Vector3<f64>,
    start: VoxelIdx,
    dims: [i32; 3],
    dist: Vec<f64>,
    settled: Vec<bool>,
    parent: Vec<u32>,
    heap: BinaryHeap<Entry>,
    moves: Vec<Move>,
}

impl<'a> PathField<'a> {
    /// `None` when the start position is outside the map or not in observed
    /// free space.
    pub fn new(map: &'a VoxelMap, start_pos: Vector3<f64>) -> Option<Self> {
        let start = map.voxel_of(&start_pos)?;
        if map.state(start) != VoxelState::Free {
            return None;
        }
        let dims = map.dims();
        let n = (dims[0] as usize) * (dims[1] as usize) * (dims[2] as usize);
        let mut field = Self {
            map,
            start_pos,
            start,
            dims,
            dist: vec![f64::INFINITY; n],
            settled: vec![false; n],
            parent: vec![u32::MAX; n],
            heap: BinaryHeap::new(),
            moves: moves(map.res()),
        };
        let s = field.lin(start);
        field.dist[s] = 0.0;
        field.heap.push(Entry(0.0, s as u32));
        Some(field)
    }

    #[inline]
    fn lin(&self, v: VoxelIdx) -> usize {
        ((v.x * self.dims[1] + v.y) * self.dims[2] + v.z) as usize
    }

    fn unlin(&self, i: usize) -> VoxelIdx {
        let i = i as i32;
        let z = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        let x = i / (self.dims[2] * self.dims[1]);
        VoxelIdx::new(x, y, z)
    }

    /// Pops until `target` is settled; returns its distance, or `None` when
    /// the free space reachable from the start is exhausted first.
    pub fn distance_to(&mut self, target: VoxelIdx) -> Option<f64> {
        if !self.map.in_bounds(target) {
            return None;
        }
        let t = self.lin(target);
        while !self.settled[t] {
            self.expand_one()?;
        }
        Some(self.dist[t])
    }

    /// Expands until the first voxel of `targets` settles; returns it with
    /// its distance. Targets already settled win immediately (closest
    /// first by prior expansion order).
    pub fn nearest_of(&mut self, targets: &[VoxelIdx]) -> Option<(VoxelIdx, f64)> {
        let lins: Vec<usize> = targets
            .iter()
            .filter(|&&v| self.map.in_bounds(v))
            .map(|&v| self.lin(v))
            .collect();
        if lins.is_empty() {
            return None;
        }
        if let Some(&hit) = lins
            .iter()
            .filter(|&&l| self.settled[l])
            .min_by(|&&a, &&b| self.dist[a].total_cmp(&self.dist[b]).then(a.cmp(&b)))
        {
            return Some((self.unlin(hit), self.dist[hit]));
        }
        loop {
            let popped = self.expand_one()?;
            if lins.contains(&popped) {
                return Some((self.unlin(popped), self.dist[popped]));
            }
        }
    }

    /// Expands the next pending voxel; returns its linear index.
    fn expand_one(&mut self) -> Option<usize> {
        while let Some(Entry(d, u)) = self.heap.pop() {
            let u = u as usize;
            if self.settled[u] || d > self.dist[u] {
                continue;
            }
            self.settled[u] = true;
            let uv = self.unlin(u);
            for m in &self.moves {
                let n = VoxelIdx::new(uv.x + m.d[0], uv.y + m.d[1], uv.z + m.d[2]);
                if !self.map.in_bounds(n) || self.map.state(n) != VoxelState::Free {
                    continue;
                }
                let guarded = m.guards.iter().all(|g| {
                    let gv = VoxelIdx::new(uv.x + g[0], uv.y + g[1], uv.z + g[2]);
                    self.map.in_bounds(gv) && self.map.state(gv) == VoxelState::Free
                });
                if !guarded {
                    continue;
                }
                let nl = self.lin(n);
                let nd = d + m.cost;
                if nd < self.dist[nl] {
                    self.dist[nl] = nd;
                    self.parent[nl] = u as u32;
                    self.heap.push(Entry(nd, nl as u32));
                }
            }
            return Some(u);
        }
        None
    }

    /// Polyline from the exact start position to `target_pos` through voxel
    /// centers, with its length. The target voxel must be reachable free
    /// space.
    pub fn polyline_to(&mut self, target_pos: &Vector3<f64>) -> Option<(Vec<Vector3<f64>>, f64)> {
        let tv = self.map.voxel_of(target_pos)?;
        self.distance_to(tv)?;
        let mut chain = Vec::new();
        let mut cur = self.lin(tv);
        let start_lin = self.lin(self.start);
        while cur != start_lin {
            chain.push(self.unlin(cur));
            cur = self.parent[cur] as usize;
            debug_assert!(cur != u32::MAX as usize);
        }
        // chain runs target -> ... -> first voxel after the start; the
        // target voxel center is replaced by the exact target position.
        let mut pts = Vec::with_capacity(chain.len() + 2);
        pts.push(self.start_pos);
        for v in chain.iter().skip(1).rev() {
            pts.push(self.map.voxel_center(*v));
        }
        pts.push(*target_pos);
        // Drop zero-length lead/tail artifacts when start/target share voxels.
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
        let length = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Some((pts, length))
    }
}

/// A point `offset` meters along `polyline` (arc length), or the last point
/// when the polyline is shorter.
pub fn point_along(polyline: &[Vector3<f64>], offset: f64) -> Vector3<f64> {
    debug_assert!(!polyline.is_empty());
    let mut remaining = offset;
    for w in polyline.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if remaining <= len {
            if len < 1e-12 {
                return w[0];
            }
            return w[0] + seg * (remaining / len);
        }
        remaining -= len;
    }
    *polyline.last().unwrap()
}
