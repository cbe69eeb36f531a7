//! Dynamic topological graph: history nodes dropped along the traveled
//! path, free-sight traversability edges, and explorable regions of
//! interest (EROIs) — cubes on a fixed lattice that still contain frontier
//! voxels, each carrying candidate viewpoints scored by frontier
//! visibility.
//!
//! Regions are keyed by their lattice coordinates, so a region that stays
//! active keeps its id across updates. A region whose frontier count drops
//! to zero is deactivated and, should frontiers reappear in the same cube
//! later, the cube comes back under a fresh id.

use crate::config::PlannerConfig;
use crate::geom::{Aabb, Viewpoint};
use crate::par;
use crate::voxel::{SegmentClass, VoxelIdx, VoxelMap};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node id {0} does not exist")]
    InvalidNode(usize),
    #[error("no sources given")]
    NoSources,
}

/// Lattice coordinates of an explorable region cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RegionKey {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

#[derive(Debug, Clone)]
pub struct TopoNode {
    pub id: usize,
    pub pos: Vector3<f64>,
    /// Keys of regions attached to this node.
    pub regions: BTreeSet<RegionKey>,
}

#[derive(Debug, Clone, Copy)]
pub struct TopoEdge {
    pub a: usize,
    pub b: usize,
    pub len: f64,
}

/// A candidate viewpoint with the number of frontier voxels it can see.
#[derive(Debug, Clone, Copy)]
pub struct ScoredViewpoint {
    pub vp: Viewpoint,
    pub visible: u32,
}

#[derive(Debug, Clone)]
pub struct Eroi {
    pub id: u64,
    pub key: RegionKey,
    pub cube: Aabb,
    pub frontier_count: usize,
    /// Frontier voxels inside the cube at the last update, sorted.
    pub frontier: Vec<VoxelIdx>,
    /// Up to `vp_cap` viewpoints, best visibility first.
    pub viewpoints: Vec<ScoredViewpoint>,
    pub attached: BTreeSet<usize>,
}

/// Distance/predecessor tables of a multi-source Dijkstra run.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub sources: Vec<usize>,
    pub dist: Vec<Vec<f64>>,
    pub pred: Vec<Vec<Option<usize>>>,
}

impl ShortestPaths {
    pub fn row(&self, source: usize) -> Option<&[f64]> {
        self.sources
            .iter()
            .position(|&s| s == source)
            .map(|i| self.dist[i].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct TopoGraph {
    nodes: Vec<TopoNode>,
    adj: Vec<Vec<(usize, f64)>>,
    edges: Vec<TopoEdge>,
    erois: BTreeMap<RegionKey, Eroi>,
    next_eroi_id: u64,
    sample_salt: u64,
}

impl TopoGraph {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            adj: Vec::new(),
            edges: Vec::new(),
            erois: BTreeMap::new(),
            next_eroi_id: 0,
            sample_salt: seed,
        }
    }

    pub fn nodes(&self) -> &[TopoNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&TopoNode> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> &[TopoEdge] {
        &self.edges
    }

    pub fn erois(&self) -> impl Iterator<Item = &Eroi> {
        self.erois.values()
    }

    pub fn eroi(&self, key: RegionKey) -> Option<&Eroi> {
        self.erois.get(&key)
    }

    pub fn eroi_by_id(&self, id: u64) -> Option<&Eroi> {
        self.erois.values().find(|e| e.id == id)
    }

    fn add_node(&mut self, pos: Vector3<f64>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TopoNode {
            id,
            pos,
            regions: BTreeSet::new(),
        });
        self.adj.push(Vec::new());
        id
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        if a == b || self.adj[a].iter().any(|&(n, _)| n == b) {
            return;
        }
        let len = (self.nodes[a].pos - self.nodes[b].pos).norm();
        self.adj[a].push((b, len));
        self.adj[b].push((a, len));
        self.edges.push(TopoEdge { a, b, len });
    }

    /// Drops a history node when the robot has moved more than `d_node`
    /// away from every existing node. The new node gets a free-sight edge
    /// to every node within `r_connect`, and always an edge to the nearest
    /// node (the one it traveled from), which keeps the graph connected.
    pub fn update_graph(
        &mut self,
        pose: &Viewpoint,
        map: &VoxelMap,
        cfg: &PlannerConfig,
    ) -> Option<usize> {
        if self.nodes.is_empty() {
            let id = self.add_node(pose.pos);
            self.attach_node_to_regions(id, map, cfg);
            return Some(id);
        }
        let (nearest, d_min) = self
            .nodes
            .iter()
            .map(|n| (n.id, (n.pos - pose.pos).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        if d_min <= cfg.d_node {
            return None;
        }
        let id = self.add_node(pose.pos);
        for other in 0..id {
            let p = self.nodes[other].pos;
            if (p - pose.pos).norm() <= cfg.r_connect
                && map.segment_is(&pose.pos, &p, SegmentClass::AllFree)
            {
                self.add_edge(id, other);
            }
        }
        if !self.adj[id].iter().any(|&(n, _)| n == nearest) {
            self.add_edge(id, nearest);
        }
        self.attach_node_to_regions(id, map, cfg);
        Some(id)
    }

    /// Region lattice cell containing `p`, anchored at the map origin.
    pub fn region_of(map: &VoxelMap, p: &Vector3<f64>, cfg: &PlannerConfig) -> RegionKey {
        let rel = p - map.origin();
        RegionKey {
            x: (rel.x / cfg.l_region).floor() as i32,
            y: (rel.y / cfg.l_region).floor() as i32,
            z: (rel.z / cfg.l_region).floor() as i32,
        }
    }

    /// World-space cube of a region, clamped to the map bounds.
    pub fn region_cube(map: &VoxelMap, key: RegionKey, cfg: &PlannerConfig) -> Aabb {
        let o = map.origin();
        let b = map.bounds();
        let lo = Vector3::new(
            (o.x + key.x as f64 * cfg.l_region).max(b.min.x),
            (o.y + key.y as f64 * cfg.l_region).max(b.min.y),
            (o.z + key.z as f64 * cfg.l_region).max(b.min.z),
        );
        let hi = Vector3::new(
            (o.x + (key.x + 1) as f64 * cfg.l_region).min(b.max.x),
            (o.y + (key.y + 1) as f64 * cfg.l_region).min(b.max.y),
            (o.z + (key.z + 1) as f64 * cfg.l_region).min(b.max.z),
        );
        Aabb::new(lo, hi)
    }

    /// Refreshes every region touched by `changed` voxels: recounts
    /// frontiers, deactivates empty regions, resamples viewpoints when the
    /// region's frontier set actually changed, and recomputes node
    /// attachment.
    pub fn update_erois(&mut self, map: &VoxelMap, changed: &[VoxelIdx], cfg: &PlannerConfig) {
        let touched: BTreeSet<RegionKey> = changed
            .iter()
            .map(|&v| Self::region_of(map, &map.voxel_center(v), cfg))
            .collect();
        for key in touched {
            let cube = Self::region_cube(map, key, cfg);
            let frontier = map.frontier_in_region(&cube);
            if frontier.is_empty() {
                if let Some(eroi) = self.erois.remove(&key) {
                    for n in eroi.attached {
                        self.nodes[n].regions.remove(&key);
                    }
                }
                continue;
            }
            let needs_sample = match self.erois.get(&key) {
                Some(e) => e.frontier != frontier,
                None => true,
            };
            if needs_sample {
                let id = match self.erois.get(&key) {
                    Some(e) => e.id,
                    None => {
                        let id = self.next_eroi_id;
                        self.next_eroi_id += 1;
                        id
                    }
                };
                let phase = self.ring_phase(key, cfg);
                let viewpoints = sample_viewpoints(map, &frontier, cfg, phase);
                let attached = match self.erois.remove(&key) {
                    Some(old) => {
                        for n in &old.attached {
                            self.nodes[*n].regions.remove(&key);
                        }
                        BTreeSet::new()
                    }
                    None => BTreeSet::new(),
                };
                self.erois.insert(
                    key,
                    Eroi {
                        id,
                        key,
                        cube,
                        frontier_count: frontier.len(),
                        frontier,
                        viewpoints,
                        attached,
                    },
                );
            }
            self.reattach_region(key, map, cfg);
        }
    }

    /// Deterministic per-region ring rotation derived from the mission seed.
    fn ring_phase(&self, key: RegionKey, cfg: &PlannerConfig) -> f64 {
        let kx = key.x as i64 as u64;
        let ky = key.y as i64 as u64;
        let kz = key.z as i64 as u64;
        let mixed = self
            .sample_salt
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(kx.wrapping_mul(0xbf58476d1ce4e5b9))
            .wrapping_add(ky.wrapping_mul(0x94d049bb133111eb))
            .wrapping_add(kz);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        rng.random::<f64>() * TAU / cfg.vp_azimuths as f64
    }

    fn reattach_region(&mut self, key: RegionKey, map: &VoxelMap, cfg: &PlannerConfig) {
        let Some(eroi) = self.erois.get(&key) else {
            return;
        };
        let center = eroi.cube.center();
        let vp_positions: Vec<Vector3<f64>> =
            eroi.viewpoints.iter().map(|s| s.vp.pos).collect();
        let mut attached = BTreeSet::new();
        for n in &self.nodes {
            if (n.pos - center).norm() > cfg.r_attach {
                continue;
            }
            if Self::has_sight(map, &n.pos, &center, &vp_positions) {
                attached.insert(n.id);
            }
        }
        let old = std::mem::replace(&mut self.erois.get_mut(&key).unwrap().attached, attached.clone());
        for n in old.difference(&attached) {
            self.nodes[*n].regions.remove(&key);
        }
        for n in &attached {
            self.nodes[*n].regions.insert(key);
        }
    }

    fn has_sight(
        map: &VoxelMap,
        from: &Vector3<f64>,
        center: &Vector3<f64>,
        viewpoints: &[Vector3<f64>],
    ) -> bool {
        if map.sight_clear(from, center) {
            return true;
        }
        viewpoints.iter().any(|p| map.sight_clear(from, p))
    }

    /// Attaches a freshly dropped node to every active region it qualifies
    /// for, so regions created earlier still become routable through it.
    fn attach_node_to_regions(&mut self, id: usize, map: &VoxelMap, cfg: &PlannerConfig) {
        let pos = self.nodes[id].pos;
        let mut keys = Vec::new();
        for (key, eroi) in &self.erois {
            let center = eroi.cube.center();
            if (pos - center).norm() > cfg.r_attach {
                continue;
            }
            let vp_positions: Vec<Vector3<f64>> =
                eroi.viewpoints.iter().map(|s| s.vp.pos).collect();
            if Self::has_sight(map, &pos, &center, &vp_positions) {
                keys.push(*key);
            }
        }
        for key in keys {
            self.erois.get_mut(&key).unwrap().attached.insert(id);
            self.nodes[id].regions.insert(key);
        }
    }

    /// Nodes with at least one attached active region that has viewpoints.
    pub fn explorable_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| {
                n.regions.iter().any(|k| {
                    self.erois
                        .get(k)
                        .is_some_and(|e| !e.viewpoints.is_empty())
                })
            })
            .map(|n| n.id)
            .collect()
    }

    /// Exact Dijkstra over the graph edges from each source.
    pub fn shortest_paths(&self, sources: &[usize]) -> Result<ShortestPaths, GraphError> {
        if sources.is_empty() {
            return Err(GraphError::NoSources);
        }
        for &s in sources {
            if s >= self.nodes.len() {
                return Err(GraphError::InvalidNode(s));
            }
        }
        let tables = par::map_collect(sources, |&s| self.dijkstra_from(s));
        let (dist, pred) = tables.into_iter().unzip();
        Ok(ShortestPaths {
            sources: sources.to_vec(),
            dist,
            pred,
        })
    }

    fn dijkstra_from(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                // Reversed: BinaryHeap is a max-heap, we want min-cost first.
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = Some(u);
                    heap.push(Entry(nd, v));
                }
            }
        }
        (dist, pred)
    }

    /// Text dump for golden tests and offline inspection.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            writeln!(
                out,
                "NODE {} {:.3} {:.3} {:.3}",
                n.id, n.pos.x, n.pos.y, n.pos.z
            )
            .unwrap();
        }
        for e in &self.edges {
            writeln!(out, "EDGE {} {} {:.3}", e.a, e.b, e.len).unwrap();
        }
        for eroi in self.erois.values() {
            let c = eroi.cube.center();
            writeln!(
                out,
                "EROI {} {:.3} {:.3} {:.3} {} {}",
                eroi.id,
                c.x,
                c.y,
                c.z,
                eroi.frontier_count,
                eroi.viewpoints.len()
            )
            .unwrap();
        }
        out
    }
}

/// True when `target` lies inside the sensor frustum of a pose at `pos`
/// with the given yaw.
pub fn in_frustum(
    pos: &Vector3<f64>,
    yaw: f64,
    target: &Vector3<f64>,
    cfg: &PlannerConfig,
) -> bool {
    let rel = target - pos;
    let dist = rel.norm();
    if dist > cfg.sensor_range {
        return false;
    }
    if dist < 1e-9 {
        return true;
    }
    let az = crate::geom::yaw_diff(rel.y.atan2(rel.x), yaw);
    if az > cfg.sensor_fov_h / 2.0 {
        return false;
    }
    let elev = rel.z.atan2(rel.xy().norm()).abs();
    elev <= cfg.sensor_fov_v / 2.0
}

/// Samples candidate viewpoints for one region: frontier voxels are
/// clustered by 26-connectivity, ring positions around each cluster
/// centroid are kept when non-occupied with an unblocked line to the
/// centroid, and each survivor is scored by how many frontier voxels of
/// the region its sensor frustum would actually cover.
fn sample_viewpoints(
    map: &VoxelMap,
    frontier: &[VoxelIdx],
    cfg: &PlannerConfig,
    phase: f64,
) -> Vec<ScoredViewpoint> {
    let set: BTreeSet<VoxelIdx> = frontier.iter().copied().collect();
    let mut visited: BTreeSet<VoxelIdx> = BTreeSet::new();
    let mut clusters: Vec<Vec<VoxelIdx>> = Vec::new();
    for &start in frontier {
        if visited.contains(&start) {
            continue;
        }
        let mut cluster = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(v) = queue.pop_front() {
            cluster.push(v);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let n = VoxelIdx::new(v.x + dx, v.y + dy, v.z + dz);
                        if set.contains(&n) && visited.insert(n) {
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        clusters.push(cluster);
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters.truncate(cfg.vp_max_clusters as usize);

    struct Cand {
        pos: Vector3<f64>,
        yaw: f64,
        rank: (usize, usize, u32),
    }
    let mut cands: Vec<Cand> = Vec::new();
    for (ci, cluster) in clusters.iter().enumerate() {
        let mut centroid = Vector3::zeros();
        for &v in cluster {
            centroid += map.voxel_center(v);
        }
        centroid /= cluster.len() as f64;
        for (ri, radius) in [cfg.vp_ring_inner, cfg.vp_ring_outer].into_iter().enumerate() {
            for ai in 0..cfg.vp_azimuths {
                let ang = phase + TAU * ai as f64 / cfg.vp_azimuths as f64;
                let pos = centroid + Vector3::new(radius * ang.cos(), radius * ang.sin(), 0.0);
                let Some(v) = map.voxel_of(&pos) else {
                    continue;
                };
                if map.state(v) == crate::voxel::VoxelState::Occupied {
                    continue;
                }
                if !map.sight_clear(&pos, &centroid) {
                    continue;
                }
                let yaw = (centroid.y - pos.y).atan2(centroid.x - pos.x);
                cands.push(Cand {
                    pos,
                    yaw,
                    rank: (ci, ri, ai),
                });
            }
        }
    }

    // Visibility scoring against an evenly strided frontier subsample: a
    // frontier voxel counts when it lies inside the sensor frustum of the
    // candidate pose (range, horizontal and vertical field of view around
    // the candidate yaw) with an unblocked line of sight.
    let stride = (frontier.len() + cfg.vp_score_samples as usize - 1)
        / cfg.vp_score_samples as usize;
    let targets: Vec<Vector3<f64>> = frontier
        .iter()
        .step_by(stride.max(1))
        .map(|&v| map.voxel_center(v))
        .collect();
    let scores = par::map_collect(&cands, |c| {
        targets
            .iter()
            .filter(|t| in_frustum(&c.pos, c.yaw, t, cfg) && map.sight_clear(&c.pos, t))
            .count() as u32
    });
    let mut scored: Vec<(u32, &Cand)> = scores
        .into_iter()
        .zip(&cands)
        .filter(|(s, _)| *s >= 1)
        .map(|(s, c)| (s, c))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.rank.cmp(&b.1.rank)));
    scored.truncate(cfg.vp_cap as usize);
    scored
        .into_iter()
        .map(|(s, c)| ScoredViewpoint {
            vp: Viewpoint::new(c.pos, c.yaw),
            visible: s,
        })
        .collect()
}
