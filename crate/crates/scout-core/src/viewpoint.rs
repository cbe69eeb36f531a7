//! Short-term target selection in the first region of the routing.
//!
//! Every reachable candidate viewpoint gets a virtual circular-arc estimate
//! fitted through the robot position, its velocity, and an anchor point a
//! fixed arc length down the candidate's path. The arc curvature caps the
//! admissible speed, which penalizes candidates that require sharp turns.
//! Viewpoint pairs (exploring target plus follow-on continuous target in
//! the same region) are scored with an exponential gain over both motion
//! costs, and the best feasible pair wins. A third, safety viewpoint in
//! known free space backs the pair up.

use crate::config::PlannerConfig;
use crate::dtg::{Eroi, TopoGraph};
use crate::geom::{yaw_diff, KinState, Viewpoint};
use crate::par;
use crate::pathfield::{point_along, PathField};
use crate::voxel::{GridWalk, VoxelIdx, VoxelMap, VoxelState};
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("the region has no stored viewpoints")]
    NoRegionViewpoints,
    #[error("no viewpoint in the region is reachable through free space")]
    NoReachableViewpoint,
    #[error("robot position is not in observed free space")]
    RobotNotInFreeSpace,
}

/// Circular-arc fit for one candidate: center and curvature of the virtual
/// arc, plus the curvature-capped admissible speed.
#[derive(Debug, Clone, Copy)]
pub struct ArcEstimate {
    /// `None` for straight (degenerate) motion.
    pub center: Option<Vector3<f64>>,
    /// 1/m; zero when straight.
    pub curvature: f64,
    /// Admissible speed toward the candidate [m/s].
    pub v_as: f64,
}

/// Speed cap from the circular motion model at curvature `k`.
pub fn curvature_speed(k: f64, cfg: &PlannerConfig) -> f64 {
    if k <= 0.0 {
        cfg.v_m
    } else {
        (cfg.lambda_a * cfg.a_m / k).sqrt().min(cfg.v_m)
    }
}

/// Fits the virtual arc through the robot position `p_c` with velocity
/// `v_c`, passing through the anchor `p_a`: the center is equidistant from
/// `p_c` and `p_a`, perpendicular to `v_c` at `p_c`, and coplanar with the
/// three constraints. Near-zero speed, a too-close anchor, or collinear
/// geometry degenerate to straight motion.
pub fn fit_arc(
    p_c: &Vector3<f64>,
    v_c: &Vector3<f64>,
    p_a: &Vector3<f64>,
    cfg: &PlannerConfig,
) -> ArcEstimate {
    let straight = ArcEstimate {
        center: None,
        curvature: 0.0,
        v_as: cfg.v_m,
    };
    let chord = p_a - p_c;
    if v_c.norm() < 0.05 || chord.norm() < cfg.r_v {
        return straight;
    }
    let normal = chord.cross(v_c);
    let m = Matrix3::from_rows(&[v_c.transpose(), chord.transpose(), normal.transpose()]);
    if m.determinant().abs() < 1e-9 {
        return straight;
    }
    let rhs = Vector3::new(
        v_c.dot(p_c),
        chord.dot(&((p_a + p_c) * 0.5)),
        normal.dot(p_c),
    );
    let Some(center) = m.lu().solve(&rhs) else {
        return straight;
    };
    let radius = (center - p_c).norm();
    if !(radius.is_finite() && radius > 0.0) {
        return straight;
    }
    let curvature = 1.0 / radius;
    ArcEstimate {
        center: Some(center),
        curvature,
        v_as: curvature_speed(curvature, cfg),
    }
}

/// Motion cost of flying `path_len` meters at speed `v_as` while turning
/// the yaw from `psi_c` to the candidate's yaw.
pub fn cost_explore(
    vp: &Viewpoint,
    psi_c: f64,
    path_len: f64,
    v_as: f64,
    cfg: &PlannerConfig,
) -> f64 {
    debug_assert!(v_as > 0.0 && path_len >= 0.0);
    (path_len / v_as).max(yaw_diff(vp.yaw(), psi_c) / cfg.psi_dot_m)
}

/// Continuation cost from the exploring viewpoint to a follow-on viewpoint,
/// still at the arc speed (the terminal speed is unknown at this point).
/// The continuous motion is the straight pair line.
pub fn cost_continue(from: &Viewpoint, to: &Viewpoint, v_as: f64, cfg: &PlannerConfig) -> f64 {
    debug_assert!(v_as > 0.0);
    ((to.pos - from.pos).norm() / v_as).max(yaw_diff(to.yaw(), from.yaw()) / cfg.psi_dot_m)
}

/// Pair gain: strictly decreasing in both costs, range (0, 2].
pub fn pair_gain(cost_e: f64, cost_c: f64, lambda_e: f64) -> f64 {
    (-lambda_e * cost_e).exp() * (1.0 + (-lambda_e * cost_c).exp())
}

/// Feasibility filter over pair lines: builds a voxel -> pair-indices table
/// from all segments, then sweeps each table voxel once; an occupied voxel
/// kills every pair whose line crosses it. Out-of-map segments are
/// infeasible. Equivalent to classifying each segment separately.
pub fn filter_pairs(map: &VoxelMap, pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Vec<bool> {
    let mut feasible = vec![true; pairs.len()];
    let mut table: HashMap<VoxelIdx, Vec<u32>> = HashMap::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        if !map.contains_point(a) || !map.contains_point(b) {
            feasible[i] = false;
            continue;
        }
        for v in GridWalk::segment(&map.origin(), map.res(), a, b) {
            table.entry(v).or_default().push(i as u32);
        }
    }
    for (v, ids) in &table {
        if map.state(*v) == VoxelState::Occupied {
            for &i in ids {
                feasible[i as usize] = false;
            }
        }
    }
    feasible
}

/// The selected target triple plus the paths that back each branch.
#[derive(Debug, Clone)]
pub struct ViewpointTriple {
    pub exploring: Viewpoint,
    pub continuous: Viewpoint,
    pub safety: Viewpoint,
    /// Free-space polyline robot -> exploring viewpoint.
    pub explore_path: Vec<Vector3<f64>>,
    /// Intended continuation path exploring -> continuous viewpoint.
    pub continue_path: Vec<Vector3<f64>>,
    /// Free-space polyline exploring -> safety viewpoint.
    pub safety_path: Vec<Vector3<f64>>,
    /// Arc-capped speed toward the exploring viewpoint.
    pub v_as: f64,
    pub gain: f64,
    /// Region that produced the exploring viewpoint.
    pub eroi_id: u64,
    /// Top pair gains for the planner debug record: (gain, exploring
    /// candidate ordinal, continuous viewpoint ordinal).
    pub top_pairs: Vec<(f64, usize, usize)>,
}

impl ViewpointTriple {
    /// One-cycle planner debug record, consumed by golden tests.
    pub fn debug_record(&self) -> String {
        let mut out = String::new();
        let p = |vp: &Viewpoint| {
            let yaw = vp.yaw();
            format!("{:.3} {:.3} {:.3} {:.3}", vp.pos.x, vp.pos.y, vp.pos.z, yaw)
        };
        writeln!(
            out,
            "TRIPLE e {} c {} s {} gain {:.5}",
            p(&self.exploring),
            p(&self.continuous),
            p(&self.safety),
            self.gain
        )
        .unwrap();
        for (rank, (gain, k, j)) in self.top_pairs.iter().enumerate() {
            writeln!(out, "PAIR {} {:.5} {} {}", rank + 1, gain, k, j).unwrap();
        }
        out
    }
}

struct Candidate {
    vp: Viewpoint,
    eroi_ord: usize,
    vp_ord: usize,
    path: Vec<Vector3<f64>>,
    path_len: f64,
    v_as: f64,
    cost_e: f64,
}

/// Selects the exploring/continuous/safety triple from the given region
/// viewpoint lists. `erois` must be the active regions of one routing
/// region's node, in a deterministic order.
pub fn select_from_erois(
    map: &VoxelMap,
    erois: &[&Eroi],
    robot: &KinState,
    cfg: &PlannerConfig,
) -> Result<ViewpointTriple, SelectError> {
    if erois.iter().all(|e| e.viewpoints.is_empty()) {
        return Err(SelectError::NoRegionViewpoints);
    }
    let mut field =
        PathField::new(map, robot.vp.pos).ok_or(SelectError::RobotNotInFreeSpace)?;

    // Reachable exploring candidates with their arc estimates and costs.
    let mut cands: Vec<Candidate> = Vec::new();
    for (eroi_ord, eroi) in erois.iter().enumerate() {
        for (vp_ord, sv) in eroi.viewpoints.iter().enumerate() {
            let Some(v) = map.voxel_of(&sv.vp.pos) else {
                continue;
            };
            if map.state(v) != VoxelState::Free {
                continue;
            }
            let Some((path, path_len)) = field.polyline_to(&sv.vp.pos) else {
                continue;
            };
            let anchor = point_along(&path, cfg.anchor_distance());
            let arc = fit_arc(&robot.vp.pos, &robot.linear_vel(), &anchor, cfg);
            let cost_e = cost_explore(&sv.vp, robot.vp.yaw(), path_len, arc.v_as, cfg);
            cands.push(Candidate {
                vp: sv.vp,
                eroi_ord,
                vp_ord,
                path,
                path_len,
                v_as: arc.v_as,
                cost_e,
            });
        }
    }
    if cands.is_empty() {
        return Err(SelectError::NoReachableViewpoint);
    }
    cands.sort_by(|a, b| {
        a.cost_e
            .total_cmp(&b.cost_e)
            .then(a.eroi_ord.cmp(&b.eroi_ord))
            .then(a.vp_ord.cmp(&b.vp_ord))
    });
    cands.truncate(cfg.pair_cap as usize);

    // Pair enumeration: continuous viewpoints come from the exploring
    // candidate's own region and may sit in unknown space.
    struct PairMeta {
        k: usize,
        j: usize,
    }
    let mut segments = Vec::new();
    let mut metas: Vec<PairMeta> = Vec::new();
    for (k, cand) in cands.iter().enumerate() {
        for (j, sv) in erois[cand.eroi_ord].viewpoints.iter().enumerate() {
            if (sv.vp.pos - cand.vp.pos).norm() < 1e-9 {
                continue;
            }
            segments.push((cand.vp.pos, sv.vp.pos));
            metas.push(PairMeta { k, j });
        }
    }
    let feasible = filter_pairs(map, &segments);
    let gains = par::map_range(metas.len(), |i| {
        if !feasible[i] {
            return f64::NEG_INFINITY;
        }
        let m = &metas[i];
        let cand = &cands[m.k];
        let to = &erois[cand.eroi_ord].viewpoints[m.j].vp;
        let cost_c = cost_continue(&cand.vp, to, cand.v_as, cfg);
        pair_gain(cand.cost_e, cost_c, cfg.lambda_e)
    });

    let mut ranked: Vec<(f64, usize, usize)> = metas
        .iter()
        .zip(&gains)
        .filter(|(_, &g)| g.is_finite())
        .map(|(m, &g)| (g, m.k, m.j))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let top_pairs: Vec<(f64, usize, usize)> = ranked.iter().take(5).copied().collect();

    let (exploring_idx, continuous, pair_gain_val) = match ranked.first() {
        Some(&(g, k, j)) => {
            let to = erois[cands[k].eroi_ord].viewpoints[j].vp;
            (k, Some(to), g)
        }
        None => (0, None, pair_gain(cands[0].cost_e, f64::INFINITY, cfg.lambda_e)),
    };
    let chosen = &cands[exploring_idx];

    // Safety viewpoint: nearest free-space region viewpoint to the
    // exploring target, excluding the pair itself; falls back to a point
    // one meter back along the approach path.
    let mut safety_cands: Vec<(VoxelIdx, Viewpoint, usize, usize)> = Vec::new();
    for (eroi_ord, eroi) in erois.iter().enumerate() {
        for (vp_ord, sv) in eroi.viewpoints.iter().enumerate() {
            let Some(v) = map.voxel_of(&sv.vp.pos) else {
                continue;
            };
            if map.state(v) != VoxelState::Free {
                continue;
            }
            if (sv.vp.pos - chosen.vp.pos).norm() < 1e-9 {
                continue;
            }
            if let Some(c) = continuous {
                if (sv.vp.pos - c.pos).norm() < 1e-9 {
                    continue;
                }
            }
            safety_cands.push((v, sv.vp, eroi_ord, vp_ord));
        }
    }
    let mut safety_field =
        PathField::new(map, chosen.vp.pos).ok_or(SelectError::NoReachableViewpoint)?;
    let mut safety: Option<(Viewpoint, Vec<Vector3<f64>>)> = None;
    let targets: Vec<VoxelIdx> = safety_cands.iter().map(|c| c.0).collect();
    if let Some((hit, _d)) = safety_field.nearest_of(&targets) {
        // Several viewpoints can share a voxel; take the first in region /
        // viewpoint order.
        let pick = safety_cands
            .iter()
            .filter(|c| c.0 == hit)
            .min_by_key(|c| (c.2, c.3))
            .unwrap();
        if let Some((path, _)) = safety_field.polyline_to(&pick.1.pos) {
            safety = Some((pick.1, path));
        }
    }
    let (safety, safety_path) = match safety {
        Some(s) => s,
        None => {
            // Back off along the approach path; known free by construction.
            let back = (chosen.path_len - 1.0).max(chosen.path_len * 0.5);
            let p = point_along(&chosen.path, back);
            let mut rev: Vec<Vector3<f64>> = Vec::new();
            let mut acc = 0.0;
            rev.push(chosen.vp.pos);
            for w in chosen.path.windows(2).rev() {
                acc += (w[1] - w[0]).norm();
                if acc >= chosen.path_len - back {
                    break;
                }
                rev.push(w[0]);
            }
            rev.push(p);
            rev.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
            (Viewpoint::new(p, chosen.vp.yaw()), rev)
        }
    };

    let (continuous, continue_path) = match continuous {
        Some(c) => (c, vec![chosen.vp.pos, c.pos]),
        // Fallback: the safety viewpoint doubles as the continuous target,
        // reached back along the known-free safety path.
        None => (safety, safety_path.clone()),
    };

    Ok(ViewpointTriple {
        exploring: chosen.vp,
        continuous,
        safety,
        explore_path: chosen.path.clone(),
        continue_path,
        safety_path,
        v_as: chosen.v_as,
        gain: pair_gain_val,
        eroi_id: erois[chosen.eroi_ord].id,
        top_pairs,
    })
}

/// Runs [`select_from_erois`] for one routing region (a history node).
pub fn select_in_region(
    graph: &TopoGraph,
    map: &VoxelMap,
    node_id: usize,
    robot: &KinState,
    cfg: &PlannerConfig,
) -> Result<ViewpointTriple, SelectError> {
    let node = graph.node(node_id).ok_or(SelectError::NoRegionViewpoints)?;
    let erois: Vec<&Eroi> = node
        .regions
        .iter()
        .filter_map(|k| graph.eroi(*k))
        .filter(|e| !e.viewpoints.is_empty())
        .collect();
    select_from_erois(map, &erois, robot, cfg)
}

/// Walks the routing order and returns the first region that yields a
/// target triple, together with its position in the order. Regions whose
/// viewpoints are unreachable are skipped, which advances the routing.
pub fn select_targets(
    graph: &TopoGraph,
    map: &VoxelMap,
    routing_nodes: &[usize],
    robot: &KinState,
    cfg: &PlannerConfig,
) -> Result<(ViewpointTriple, usize), SelectError> {
    let mut last = SelectError::NoRegionViewpoints;
    for (i, &node) in routing_nodes.iter().enumerate() {
        match select_in_region(graph, map, node, robot, cfg) {
            Ok(t) => return Ok((t, i)),
            Err(SelectError::RobotNotInFreeSpace) => {
                return Err(SelectError::RobotNotInFreeSpace)
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}
