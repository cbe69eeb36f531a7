//! Three-state occupancy grid with incremental frontier bookkeeping.
//!
//! Storage is dense 16^3 chunks allocated on first write; voxels in
//! unallocated chunks read as `Unknown` without allocating. A frontier is a
//! `Free` voxel with at least one `Unknown` 6-neighbor inside the map.

mod io;
mod scan;
mod traverse;

pub use io::{parse_env, write_env};
pub use scan::{cast_rays, cast_rays_seq, integrate_scan, reveal_sphere, SensorModel};
pub use traverse::GridWalk;

use crate::geom::Aabb;
use nalgebra::Vector3;
use std::collections::BTreeSet;
use thiserror::Error;

pub const CHUNK_SIDE: i32 = 16;
const CHUNK_VOL: usize = (CHUNK_SIDE * CHUNK_SIDE * CHUNK_SIDE) as usize;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("point ({0:.3}, {1:.3}, {2:.3}) is outside the map bounds")]
    OutOfBounds(f64, f64, f64),
    #[error("sensor pose sits inside an occupied ground-truth voxel")]
    PoseInOccupied,
    #[error("environment file line {line}: {msg}")]
    EnvFormat { line: usize, msg: String },
    #[error("map contains unknown voxels and cannot be written as ground truth")]
    NotGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VoxelState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

impl VoxelState {
    fn from_u8(v: u8) -> Self {
        match v {
            1 => VoxelState::Free,
            2 => VoxelState::Occupied,
            _ => VoxelState::Unknown,
        }
    }
}

/// Integer voxel coordinates. Ordering is lexicographic (x, then y, then z),
/// which all deterministic iteration in the crate relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelIdx {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelIdx {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn neighbors6(&self) -> [VoxelIdx; 6] {
        [
            VoxelIdx::new(self.x - 1, self.y, self.z),
            VoxelIdx::new(self.x + 1, self.y, self.z),
            VoxelIdx::new(self.x, self.y - 1, self.z),
            VoxelIdx::new(self.x, self.y + 1, self.z),
            VoxelIdx::new(self.x, self.y, self.z - 1),
            VoxelIdx::new(self.x, self.y, self.z + 1),
        ]
    }
}

/// Result of classifying the voxels a segment touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentClass {
    AllFree,
    FreeOrUnknown,
    Blocked,
}

/// Voxels changed by one observation batch, plus the frontier delta it
/// caused. All lists are sorted.
#[derive(Debug, Clone, Default)]
pub struct ScanResult {
    pub changed: Vec<VoxelIdx>,
    pub frontier_added: Vec<VoxelIdx>,
    pub frontier_removed: Vec<VoxelIdx>,
}

impl ScanResult {
    pub fn merge(&mut self, other: ScanResult) {
        self.changed.extend(other.changed);
        self.frontier_added.extend(other.frontier_added);
        self.frontier_removed.extend(other.frontier_removed);
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    origin: Vector3<f64>,
    dims: [i32; 3],
    res: f64,
    chunk_dims: [i32; 3],
    chunks: Vec<Option<Box<[u8; CHUNK_VOL]>>>,
    frontier: BTreeSet<VoxelIdx>,
    n_free: u64,
    n_occupied: u64,
}

impl VoxelMap {
    /// A fully unknown map covering `dims` voxels from `origin`.
    pub fn new(origin: Vector3<f64>, dims: [usize; 3], res: f64) -> Self {
        assert!(res > 0.0 && dims.iter().all(|&d| d > 0), "invalid map geometry");
        let dims = [dims[0] as i32, dims[1] as i32, dims[2] as i32];
        let chunk_dims = [
            (dims[0] + CHUNK_SIDE - 1) / CHUNK_SIDE,
            (dims[1] + CHUNK_SIDE - 1) / CHUNK_SIDE,
            (dims[2] + CHUNK_SIDE - 1) / CHUNK_SIDE,
        ];
        let n_chunks = (chunk_dims[0] * chunk_dims[1] * chunk_dims[2]) as usize;
        Self {
            origin,
            dims,
            res,
            chunk_dims,
            chunks: vec![None; n_chunks],
            frontier: BTreeSet::new(),
            n_free: 0,
            n_occupied: 0,
        }
    }

    /// An unknown map with the same origin, dims, and resolution as `other`.
    pub fn blank_like(other: &VoxelMap) -> Self {
        Self::new(
            other.origin,
            [
                other.dims[0] as usize,
                other.dims[1] as usize,
                other.dims[2] as usize,
            ],
            other.res,
        )
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn dims(&self) -> [i32; 3] {
        self.dims
    }

    pub fn res(&self) -> f64 {
        self.res
    }

    pub fn same_geometry(&self, other: &VoxelMap) -> bool {
        self.origin == other.origin && self.dims == other.dims && self.res == other.res
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(
            self.origin,
            self.origin
                + Vector3::new(
                    self.dims[0] as f64 * self.res,
                    self.dims[1] as f64 * self.res,
                    self.dims[2] as f64 * self.res,
                ),
        )
    }

    pub fn in_bounds(&self, idx: VoxelIdx) -> bool {
        idx.x >= 0
            && idx.y >= 0
            && idx.z >= 0
            && idx.x < self.dims[0]
            && idx.y < self.dims[1]
            && idx.z < self.dims[2]
    }

    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| {
            let rel = p[i] - self.origin[i];
            rel >= 0.0 && rel < self.dims[i] as f64 * self.res
        })
    }

    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<VoxelIdx> {
        if !self.contains_point(p) {
            return None;
        }
        Some(VoxelIdx::new(
            ((p.x - self.origin.x) / self.res).floor() as i32,
            ((p.y - self.origin.y) / self.res).floor() as i32,
            ((p.z - self.origin.z) / self.res).floor() as i32,
        ))
    }

    pub fn voxel_center(&self, idx: VoxelIdx) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                (idx.x as f64 + 0.5) * self.res,
                (idx.y as f64 + 0.5) * self.res,
                (idx.z as f64 + 0.5) * self.res,
            )
    }

    #[inline]
    fn chunk_slot(&self, idx: VoxelIdx) -> (usize, usize) {
        let (cx, cy, cz) = (idx.x / CHUNK_SIDE, idx.y / CHUNK_SIDE, idx.z / CHUNK_SIDE);
        let chunk = (cx * self.chunk_dims[1] + cy) * self.chunk_dims[2] + cz;
        let (lx, ly, lz) = (idx.x % CHUNK_SIDE, idx.y % CHUNK_SIDE, idx.z % CHUNK_SIDE);
        let offset = (lx * CHUNK_SIDE + ly) * CHUNK_SIDE + lz;
        (chunk as usize, offset as usize)
    }

    /// State of an in-bounds voxel; unallocated chunks read `Unknown`
    /// without allocating.
    #[inline]
    pub fn state(&self, idx: VoxelIdx) -> VoxelState {
        debug_assert!(self.in_bounds(idx), "state() out of bounds: {idx:?}");
        let (chunk, offset) = self.chunk_slot(idx);
        match &self.chunks[chunk] {
            Some(c) => VoxelState::from_u8(c[offset]),
            None => VoxelState::Unknown,
        }
    }

    /// Raw state write with occupancy counters but no frontier upkeep.
    /// Ground-truth construction goes through this; observed maps must use
    /// [`VoxelMap::apply_observations`] to keep the frontier set valid.
    pub fn set_state(&mut self, idx: VoxelIdx, s: VoxelState) {
        assert!(self.in_bounds(idx), "set_state out of bounds: {idx:?}");
        let (chunk, offset) = self.chunk_slot(idx);
        let c = self.chunks[chunk].get_or_insert_with(|| Box::new([0u8; CHUNK_VOL]));
        let old = VoxelState::from_u8(c[offset]);
        if old == s {
            return;
        }
        match old {
            VoxelState::Free => self.n_free -= 1,
            VoxelState::Occupied => self.n_occupied -= 1,
            VoxelState::Unknown => {}
        }
        match s {
            VoxelState::Free => self.n_free += 1,
            VoxelState::Occupied => self.n_occupied += 1,
            VoxelState::Unknown => {}
        }
        c[offset] = s as u8;
    }

    /// Applies a batch of observations and incrementally refreshes the
    /// frontier set around every change.
    pub fn apply_observations(&mut self, obs: &[(VoxelIdx, VoxelState)]) -> ScanResult {
        let mut changed = Vec::new();
        for &(idx, s) in obs {
            debug_assert!(self.in_bounds(idx));
            let old = self.state(idx);
            if old == s {
                continue;
            }
            debug_assert_eq!(
                old,
                VoxelState::Unknown,
                "perfect-sensor updates never revise a known voxel"
            );
            self.set_state(idx, s);
            changed.push(idx);
        }
        changed.sort_unstable();
        changed.dedup();

        let mut candidates: BTreeSet<VoxelIdx> = BTreeSet::new();
        for &c in &changed {
            candidates.insert(c);
            for n in c.neighbors6() {
                if self.in_bounds(n) {
                    candidates.insert(n);
                }
            }
        }
        let mut frontier_added = Vec::new();
        let mut frontier_removed = Vec::new();
        for c in candidates {
            let now = self.is_frontier(c);
            let was = self.frontier.contains(&c);
            if now && !was {
                self.frontier.insert(c);
                frontier_added.push(c);
            } else if !now && was {
                self.frontier.remove(&c);
                frontier_removed.push(c);
            }
        }
        ScanResult {
            changed,
            frontier_added,
            frontier_removed,
        }
    }

    /// Frontier predicate evaluated from voxel states (not the cached set).
    pub fn is_frontier(&self, idx: VoxelIdx) -> bool {
        if self.state(idx) != VoxelState::Free {
            return false;
        }
        idx.neighbors6()
            .iter()
            .any(|&n| self.in_bounds(n) && self.state(n) == VoxelState::Unknown)
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    pub fn frontier_iter(&self) -> impl Iterator<Item = &VoxelIdx> {
        self.frontier.iter()
    }

    /// Frontier voxels whose centers lie inside `region`, sorted.
    pub fn frontier_in_region(&self, region: &Aabb) -> Vec<VoxelIdx> {
        let lo_x = ((region.min.x - self.origin.x) / self.res).floor() as i32;
        let hi_x = ((region.max.x - self.origin.x) / self.res).ceil() as i32;
        let lo = VoxelIdx::new(lo_x, i32::MIN, i32::MIN);
        let hi = VoxelIdx::new(hi_x, i32::MAX, i32::MAX);
        self.frontier
            .range(lo..=hi)
            .filter(|&&v| region.contains(&self.voxel_center(v)))
            .copied()
            .collect()
    }

    /// Walks the voxel line from `a` to `b` and classifies it. `Blocked`
    /// wins over everything, otherwise any `Unknown` voxel demotes the
    /// result to `FreeOrUnknown`.
    pub fn classify_segment(
        &self,
        a: &Vector3<f64>,
        b: &Vector3<f64>,
    ) -> Result<SegmentClass, MapError> {
        if !self.contains_point(a) {
            return Err(MapError::OutOfBounds(a.x, a.y, a.z));
        }
        if !self.contains_point(b) {
            return Err(MapError::OutOfBounds(b.x, b.y, b.z));
        }
        let mut saw_unknown = false;
        for idx in GridWalk::segment(&self.origin, self.res, a, b) {
            debug_assert!(self.in_bounds(idx));
            match self.state(idx) {
                VoxelState::Occupied => return Ok(SegmentClass::Blocked),
                VoxelState::Unknown => saw_unknown = true,
                VoxelState::Free => {}
            }
        }
        Ok(if saw_unknown {
            SegmentClass::FreeOrUnknown
        } else {
            SegmentClass::AllFree
        })
    }

    /// True when both endpoints are in bounds and the segment classifies
    /// exactly as `class`.
    pub fn segment_is(&self, a: &Vector3<f64>, b: &Vector3<f64>, class: SegmentClass) -> bool {
        self.classify_segment(a, b).map_or(false, |c| c == class)
    }

    /// Conservative sight predicate: true only for an in-bounds segment that
    /// touches no occupied voxel.
    pub fn sight_clear(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        matches!(
            self.classify_segment(a, b),
            Ok(SegmentClass::AllFree | SegmentClass::FreeOrUnknown)
        )
    }

    pub fn n_free(&self) -> u64 {
        self.n_free
    }

    pub fn n_occupied(&self) -> u64 {
        self.n_occupied
    }

    pub fn n_voxels(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    /// Volume of known (free or occupied) voxels, in cubic meters.
    pub fn explored_volume(&self) -> f64 {
        (self.n_free + self.n_occupied) as f64 * self.res.powi(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_map() -> VoxelMap {
        VoxelMap::new(Vector3::zeros(), [8, 8, 8], 1.0)
    }

    /// Full-grid frontier recomputation, independent of the cached set.
    fn brute_frontier(map: &VoxelMap) -> BTreeSet<VoxelIdx> {
        let mut out = BTreeSet::new();
        let [nx, ny, nz] = map.dims();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let v = VoxelIdx::new(x, y, z);
                    if map.is_frontier(v) {
                        out.insert(v);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unallocated_chunks_read_unknown_without_allocating() {
        let map = small_map();
        assert_eq!(map.state(VoxelIdx::new(3, 3, 3)), VoxelState::Unknown);
        assert!(map.chunks.iter().all(|c| c.is_none()));
    }

    #[test]
    fn fully_unknown_map_has_no_frontier() {
        let map = small_map();
        assert_eq!(map.frontier_len(), 0);
        assert!(brute_frontier(&map).is_empty());
    }

    #[test]
    fn single_free_voxel_surrounded_by_unknown_is_frontier() {
        let mut map = small_map();
        let v = VoxelIdx::new(4, 4, 4);
        let res = map.apply_observations(&[(v, VoxelState::Free)]);
        assert_eq!(res.changed, vec![v]);
        assert_eq!(res.frontier_added, vec![v]);
        assert!(map.frontier.contains(&v));
        let region = map.bounds();
        assert_eq!(map.frontier_in_region(&region), vec![v]);
    }

    #[test]
    fn frontier_voxel_never_occupied_and_tracks_brute_force() {
        let mut map = VoxelMap::new(Vector3::zeros(), [20, 20, 20], 1.0);
        // Deterministic pseudo-random flips.
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s
        };
        for _ in 0..50 {
            let x = (next() % 20) as i32;
            let y = (next() % 20) as i32;
            let z = (next() % 20) as i32;
            let v = VoxelIdx::new(x, y, z);
            if map.state(v) != VoxelState::Unknown {
                continue;
            }
            let st = if next() % 3 == 0 {
                VoxelState::Occupied
            } else {
                VoxelState::Free
            };
            map.apply_observations(&[(v, st)]);
            let brute = brute_frontier(&map);
            let incremental: BTreeSet<_> = map.frontier_iter().copied().collect();
            assert_eq!(incremental, brute);
            assert!(brute.iter().all(|&f| map.state(f) == VoxelState::Free));
        }
    }

    #[test]
    fn classify_degenerate_segment_in_free_voxel() {
        let mut map = small_map();
        map.apply_observations(&[(VoxelIdx::new(2, 2, 2), VoxelState::Free)]);
        let p = map.voxel_center(VoxelIdx::new(2, 2, 2));
        assert_eq!(map.classify_segment(&p, &p).unwrap(), SegmentClass::AllFree);
    }

    #[test]
    fn classify_mixed_and_blocked_segments() {
        let mut map = small_map();
        for x in 0..6 {
            map.apply_observations(&[(VoxelIdx::new(x, 4, 4), VoxelState::Free)]);
        }
        let a = map.voxel_center(VoxelIdx::new(0, 4, 4));
        let b = map.voxel_center(VoxelIdx::new(5, 4, 4));
        assert_eq!(map.classify_segment(&a, &b).unwrap(), SegmentClass::AllFree);

        // Re-do on a fresh map with one unknown voxel along the line.
        let mut map = small_map();
        for x in 0..6 {
            if x != 3 {
                map.apply_observations(&[(VoxelIdx::new(x, 4, 4), VoxelState::Free)]);
            }
        }
        assert_eq!(
            map.classify_segment(&a, &b).unwrap(),
            SegmentClass::FreeOrUnknown
        );

        let mut map = small_map();
        for x in 0..6 {
            let st = if x == 3 {
                VoxelState::Occupied
            } else {
                VoxelState::Free
            };
            map.apply_observations(&[(VoxelIdx::new(x, 4, 4), st)]);
        }
        assert_eq!(map.classify_segment(&a, &b).unwrap(), SegmentClass::Blocked);
    }

    #[test]
    fn classify_rejects_out_of_bounds_endpoints() {
        let map = small_map();
        let inside = Vector3::new(1.0, 1.0, 1.0);
        let outside = Vector3::new(-1.0, 1.0, 1.0);
        assert!(map.classify_segment(&inside, &outside).is_err());
        assert!(map.classify_segment(&outside, &inside).is_err());
    }

    /// Oracle: classify from an exhaustive scan of all voxels whose boxes
    /// the segment intersects (slab test), independent of the grid walk.
    fn classify_oracle(map: &VoxelMap, a: &Vector3<f64>, b: &Vector3<f64>) -> SegmentClass {
        let d = b - a;
        let mut blocked = false;
        let mut unknown = false;
        let [nx, ny, nz] = map.dims();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let v = VoxelIdx::new(x, y, z);
                    let lo = map.origin() + Vector3::new(x as f64, y as f64, z as f64) * map.res();
                    let hi = lo + Vector3::repeat(map.res());
                    let mut t0 = 0.0f64;
                    let mut t1 = 1.0f64;
                    let mut hit = true;
                    for i in 0..3 {
                        if d[i].abs() < 1e-15 {
                            if a[i] < lo[i] || a[i] > hi[i] {
                                hit = false;
                                break;
                            }
                        } else {
                            let ta = (lo[i] - a[i]) / d[i];
                            let tb = (hi[i] - a[i]) / d[i];
                            t0 = t0.max(ta.min(tb));
                            t1 = t1.min(ta.max(tb));
                            if t0 > t1 {
                                hit = false;
                                break;
                            }
                        }
                    }
                    if hit {
                        match map.state(v) {
                            VoxelState::Occupied => blocked = true,
                            VoxelState::Unknown => unknown = true,
                            VoxelState::Free => {}
                        }
                    }
                }
            }
        }
        if blocked {
            SegmentClass::Blocked
        } else if unknown {
            SegmentClass::FreeOrUnknown
        } else {
            SegmentClass::AllFree
        }
    }

    #[test]
    fn classify_matches_exhaustive_oracle_and_is_symmetric() {
        let mut map = small_map();
        let mut s = 0x51a2b3c4d5e6f708u64;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s
        };
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    let r = next() % 10;
                    let st = if r < 2 {
                        VoxelState::Occupied
                    } else if r < 8 {
                        VoxelState::Free
                    } else {
                        VoxelState::Unknown
                    };
                    if st != VoxelState::Unknown {
                        map.apply_observations(&[(VoxelIdx::new(x, y, z), st)]);
                    }
                }
            }
        }
        for _ in 0..60 {
            // Fine-grained offsets keep endpoints off exact voxel boundaries,
            // where "touches" is ambiguous between walk and slab test.
            let rnd = |n: &mut dyn FnMut() -> u64| ((n() % 699989) as f64) / 1e5 + 0.25;
            let a = Vector3::new(rnd(&mut next), rnd(&mut next), rnd(&mut next));
            let b = Vector3::new(rnd(&mut next), rnd(&mut next), rnd(&mut next));
            let got = map.classify_segment(&a, &b).unwrap();
            let rev = map.classify_segment(&b, &a).unwrap();
            assert_eq!(got, rev, "classification must be symmetric");
            assert_eq!(got, classify_oracle(&map, &a, &b), "a={a:?} b={b:?}");
        }
    }
}
