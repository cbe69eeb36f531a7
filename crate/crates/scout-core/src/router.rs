//! Global region routing: an open-tour ATSP over explorable history nodes,
//! solved with an exploration-oriented heuristic Christofides walk.
//!
//! The walk builds a Prim MST of the metric instance, then emits it
//! depth-first with two ordering rules: the branch holding the leaf
//! farthest from the robot is deferred to last at every ancestor along its
//! root path (no need to come back), and among the remaining siblings the
//! subtree whose root is closest to the last emitted node goes first. On a
//! metric instance the resulting open tour is never longer than twice the
//! optimal tour plus the largest robot-to-node distance.

use crate::dtg::TopoGraph;
use crate::geom::Viewpoint;
use crate::voxel::VoxelMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("instance text: {0}")]
    Parse(String),
}

/// Complete symmetric metric instance. Index 0 is the robot's virtual node;
/// `ids[i]` holds the graph node id behind index `i` (`None` for the robot).
#[derive(Debug, Clone)]
pub struct AtspInstance {
    pub ids: Vec<Option<usize>>,
    pub dist: Vec<Vec<f64>>,
}

impl AtspInstance {
    /// Instance from a bare matrix; indices become their own ids.
    pub fn from_matrix(dist: Vec<Vec<f64>>) -> Self {
        let ids = (0..dist.len())
            .map(|i| if i == 0 { None } else { Some(i) })
            .collect();
        Self { ids, dist }
    }

    pub fn n(&self) -> usize {
        self.dist.len()
    }

    /// Largest robot-to-node distance.
    pub fn l_m(&self) -> f64 {
        self.dist[0].iter().copied().fold(0.0, f64::max)
    }

    pub fn parse_text(text: &str) -> Result<Self, RouterError> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or_else(|| RouterError::Parse("empty instance".into()))?
            .parse()
            .map_err(|e| RouterError::Parse(format!("bad node count: {e}")))?;
        if n == 0 {
            return Err(RouterError::Parse("instance needs at least one node".into()));
        }
        let mut dist = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let tok = tokens.next().ok_or_else(|| {
                    RouterError::Parse(format!("matrix truncated at row {i}, col {j}"))
                })?;
                dist[i][j] = tok
                    .parse()
                    .map_err(|e| RouterError::Parse(format!("bad entry at ({i},{j}): {e}")))?;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !dist[i][j].is_finite() || (dist[i][j] - dist[j][i]).abs() > 1e-9 {
                    return Err(RouterError::Parse(format!(
                        "matrix must be finite and symmetric, offends at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self::from_matrix(dist))
    }
}

/// An open tour: instance indices starting at the robot, plus its length.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRouting {
    pub order: Vec<usize>,
    pub length: f64,
}

impl RegionRouting {
    /// Graph node ids along the tour, robot excluded.
    pub fn node_ids(&self, inst: &AtspInstance) -> Vec<usize> {
        self.order.iter().filter_map(|&i| inst.ids[i]).collect()
    }

    pub fn to_text(&self) -> String {
        let order: Vec<String> = self.order.iter().map(|i| i.to_string()).collect();
        format!("{}\n{:.6}\n", order.join(" "), self.length)
    }
}

/// Builds the ATSP instance for the current planning cycle: the robot is
/// hooked onto its nearest visible history node, distances come from graph
/// Dijkstra, and nodes unreachable from the robot are dropped. `None`
/// signals that exploration is complete (no explorable nodes).
pub fn build_instance(
    graph: &TopoGraph,
    map: &VoxelMap,
    robot: &Viewpoint,
) -> Option<AtspInstance> {
    let explorable = graph.explorable_nodes();
    if explorable.is_empty() {
        return None;
    }
    let anchor = graph
        .nodes()
        .iter()
        .filter(|n| map.sight_clear(&robot.pos, &n.pos))
        .map(|n| (n.id, (n.pos - robot.pos).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .or_else(|| {
            graph
                .nodes()
                .iter()
                .map(|n| (n.id, (n.pos - robot.pos).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        })?;
    let (anchor_id, hop) = anchor;

    let mut sources = Vec::with_capacity(explorable.len() + 1);
    sources.push(anchor_id);
    for &e in &explorable {
        if e != anchor_id {
            sources.push(e);
        }
    }
    let sp = graph.shortest_paths(&sources).ok()?;
    let anchor_row = sp.row(anchor_id)?;
    let reachable: Vec<usize> = explorable
        .iter()
        .copied()
        .filter(|&e| anchor_row[e].is_finite())
        .collect();
    if reachable.is_empty() {
        return None;
    }

    let n = reachable.len() + 1;
    let mut dist = vec![vec![0.0; n]; n];
    let mut ids = vec![None; n];
    for (i, &e) in reachable.iter().enumerate() {
        ids[i + 1] = Some(e);
        let d = hop + anchor_row[e];
        dist[0][i + 1] = d;
        dist[i + 1][0] = d;
    }
    for i in 0..reachable.len() {
        let row = sp.row(reachable[i]).unwrap();
        for j in (i + 1)..reachable.len() {
            let d = row[reachable[j]];
            dist[i + 1][j + 1] = d;
            dist[j + 1][i + 1] = d;
        }
    }
    Some(AtspInstance { ids, dist })
}

/// Dense Prim MST rooted at index 0; returns the parent array
/// (`parent[0] == 0`). Ties go to the lower index, so the tree is
/// deterministic for a given instance.
pub fn prim_mst(inst: &AtspInstance) -> Vec<usize> {
    let n = inst.n();
    assert!(n >= 2, "MST needs at least two nodes");
    let mut in_tree = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    key[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || key[v] < key[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        for v in 0..n {
            if !in_tree[v] && inst.dist[u][v] < key[v] {
                key[v] = inst.dist[u][v];
                parent[v] = u;
            }
        }
    }
    parent
}

struct Walker<'a> {
    dist: &'a [Vec<f64>],
    children: Vec<Vec<usize>>,
    deferred: Vec<Option<usize>>,
}

impl Walker<'_> {
    fn visit(&self, v: usize, order: &mut Vec<usize>, last: &mut usize) {
        order.push(v);
        *last = v;
        let mut rem: Vec<usize> = self.children[v]
            .iter()
            .copied()
            .filter(|&c| Some(c) != self.deferred[v])
            .collect();
        while !rem.is_empty() {
            let mut best = 0;
            for i in 1..rem.len() {
                if self.dist[*last][rem[i]] < self.dist[*last][rem[best]] {
                    best = i;
                }
            }
            let c = rem.remove(best);
            self.visit(c, order, last);
        }
        if let Some(d) = self.deferred[v] {
            self.visit(d, order, last);
        }
    }
}

/// Emits the MST as an open tour per the two EOHC ordering rules.
pub fn eohc_tour(inst: &AtspInstance, parent: &[usize]) -> RegionRouting {
    let n = inst.n();
    if n == 1 {
        return RegionRouting {
            order: vec![0],
            length: 0.0,
        };
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 1..n {
        children[parent[v]].push(v);
    }
    let mut farthest: Option<usize> = None;
    for v in 1..n {
        if children[v].is_empty() {
            let better = match farthest {
                None => true,
                Some(f) => inst.dist[0][v] > inst.dist[0][f],
            };
            if better {
                farthest = Some(v);
            }
        }
    }
    let mut deferred: Vec<Option<usize>> = vec![None; n];
    if let Some(mut v) = farthest {
        while v != 0 {
            deferred[parent[v]] = Some(v);
            v = parent[v];
        }
    }
    let walker = Walker {
        dist: &inst.dist,
        children,
        deferred,
    };
    let mut order = Vec::with_capacity(n);
    let mut last = 0;
    walker.visit(0, &mut order, &mut last);
    let length = order.windows(2).map(|w| inst.dist[w[0]][w[1]]).sum();
    RegionRouting { order, length }
}

/// MST plus walk in one call.
pub fn solve(inst: &AtspInstance) -> RegionRouting {
    if inst.n() == 1 {
        return RegionRouting {
            order: vec![0],
            length: 0.0,
        };
    }
    let parent = prim_mst(inst);
    eohc_tour(inst, &parent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn euclid_instance(points: &[(f64, f64, f64)]) -> AtspInstance {
        let n = points.len();
        let mut dist = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let (ax, ay, az) = points[i];
                let (bx, by, bz) = points[j];
                dist[i][j] = ((ax - bx).powi(2) + (ay - by).powi(2) + (az - bz).powi(2)).sqrt();
            }
        }
        AtspInstance::from_matrix(dist)
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> AtspInstance {
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random::<f64>() * 50.0,
                    rng.random::<f64>() * 50.0,
                    rng.random::<f64>() * 5.0,
                )
            })
            .collect();
        euclid_instance(&pts)
    }

    /// Kruskal with union-find, as the MST weight oracle.
    fn kruskal_weight(inst: &AtspInstance) -> f64 {
        let n = inst.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((inst.dist[i][j], i, j));
            }
        }
        edges.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut root: Vec<usize> = (0..n).collect();
        fn find(root: &mut Vec<usize>, mut v: usize) -> usize {
            while root[v] != v {
                root[v] = root[root[v]];
                v = root[v];
            }
            v
        }
        let mut total = 0.0;
        for (w, a, b) in edges {
            let (ra, rb) = (find(&mut root, a), find(&mut root, b));
            if ra != rb {
                root[ra] = rb;
                total += w;
            }
        }
        total
    }

    fn tree_weight(inst: &AtspInstance, parent: &[usize]) -> f64 {
        (1..inst.n()).map(|v| inst.dist[v][parent[v]]).sum()
    }

    /// Optimal open tour by exhaustive permutation of indices 1..n.
    fn exhaustive_open_optimum(inst: &AtspInstance) -> f64 {
        let n = inst.n();
        let mut rest: Vec<usize> = (1..n).collect();
        let mut best = f64::INFINITY;
        fn recurse(
            dist: &[Vec<f64>],
            rest: &mut Vec<usize>,
            chosen: &mut Vec<usize>,
            acc: f64,
            best: &mut f64,
        ) {
            if acc >= *best {
                return;
            }
            if rest.is_empty() {
                *best = acc;
                return;
            }
            for i in 0..rest.len() {
                let v = rest.remove(i);
                let from = *chosen.last().unwrap();
                chosen.push(v);
                recurse(dist, rest, chosen, acc + dist[from][v], best);
                chosen.pop();
                rest.insert(i, v);
            }
        }
        recurse(&inst.dist, &mut rest, &mut vec![0], 0.0, &mut best);
        best
    }

    #[test]
    fn two_node_tree_is_single_edge() {
        let inst = euclid_instance(&[(0.0, 0.0, 0.0), (3.0, 4.0, 0.0)]);
        let parent = prim_mst(&inst);
        assert_eq!(parent, vec![0, 0]);
        let tour = eohc_tour(&inst, &parent);
        assert_eq!(tour.order, vec![0, 1]);
        assert!((tour.length - 5.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_give_chain_tree() {
        let inst = euclid_instance(&[
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (2.0, 0.0, 0.0),
            (3.0, 0.0, 0.0),
        ]);
        let parent = prim_mst(&inst);
        assert_eq!(parent, vec![0, 0, 1, 2]);
        assert!((tree_weight(&inst, &parent) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn prim_matches_kruskal_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let inst = random_instance(&mut rng, 10);
            let parent = prim_mst(&inst);
            assert!((tree_weight(&inst, &parent) - kruskal_weight(&inst)).abs() < 1e-9);
        }
    }

    #[test]
    fn star_example_orders_by_rules() {
        // Robot at center; leaves at graph distances 1, 2, 3;
        // dist(leaf_i, leaf_j) = d_i + d_j.
        let d = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 3.0, 4.0],
            vec![2.0, 3.0, 0.0, 5.0],
            vec![3.0, 4.0, 5.0, 0.0],
        ];
        let inst = AtspInstance::from_matrix(d);
        let routing = solve(&inst);
        assert_eq!(routing.order, vec![0, 1, 2, 3]);
        assert!((routing.length - 9.0).abs() < 1e-12);
        // All six orders, for the record: the rules pick the one ending at
        // the farthest leaf with nearest-first siblings.
        let oracle = exhaustive_open_optimum(&inst);
        assert!(routing.length <= 2.0 * oracle + inst.l_m() + 1e-9);
    }

    #[test]
    fn farthest_leaf_is_emitted_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = 3 + (rng.random::<u32>() % 7) as usize;
            let inst = random_instance(&mut rng, n);
            let parent = prim_mst(&inst);
            let routing = eohc_tour(&inst, &parent);
            // Valid permutation starting at the robot.
            let mut seen = vec![false; n];
            for &v in &routing.order {
                assert!(!seen[v]);
                seen[v] = true;
            }
            assert!(seen.iter().all(|&s| s));
            assert_eq!(routing.order[0], 0);
            // The deferred branch puts the farthest leaf at the very end.
            let mut children = vec![0usize; n];
            for v in 1..n {
                children[parent[v]] += 1;
            }
            let far = (1..n)
                .filter(|&v| children[v] == 0)
                .max_by(|&a, &b| inst.dist[0][a].total_cmp(&inst.dist[0][b]))
                .unwrap();
            assert_eq!(*routing.order.last().unwrap(), far);
        }
    }

    #[test]
    fn open_tour_bound_holds_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let n = 4 + (rng.random::<u32>() % 4) as usize; // 4..=7
            let inst = random_instance(&mut rng, n);
            let routing = solve(&inst);
            let optimum = exhaustive_open_optimum(&inst);
            assert!(
                routing.length <= 2.0 * optimum + inst.l_m() + 1e-9,
                "bound violated: {} > 2*{} + {}",
                routing.length,
                optimum,
                inst.l_m()
            );
        }
    }

    #[test]
    fn routing_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = random_instance(&mut rng, 30);
        assert_eq!(solve(&inst), solve(&inst));
    }

    #[test]
    fn instance_text_roundtrip() {
        let text = "3\n0 1 2\n1 0 1.5\n2 1.5 0\n";
        let inst = AtspInstance::parse_text(text).unwrap();
        assert_eq!(inst.n(), 3);
        assert_eq!(inst.dist[2][1], 1.5);
        let routing = solve(&inst);
        let rendered = routing.to_text();
        let mut lines = rendered.lines();
        let order_line = lines.next().unwrap();
        assert!(order_line.starts_with("0 "));
        let len: f64 = lines.next().unwrap().parse().unwrap();
        assert!((len - routing.length).abs() < 1e-6);

        assert!(AtspInstance::parse_text("2\n0 1\n2 0\n").is_err()); // asymmetric
        assert!(AtspInstance::parse_text("2\n0 1\n").is_err()); // truncated
    }
}
