//! Deterministic closed-loop simulator.
//!
//! Fixed 50 Hz physics with ideal trajectory tracking, 10 Hz noise-free
//! sensing, event-driven planning: the robot executes the exploring branch,
//! continues into the continuous branch only when a replan is not possible
//! yet, and diverts into the safety branch at the junction when a known
//! obstacle has appeared on the continuous corridor. Every byte of the
//! mission outputs is a function of (environment, config, seed); planner
//! wall-clock times are reported out of band so they never leak into the
//! deterministic artifacts.

pub mod envgen;
pub mod plot;

use crate::config::{ConfigError, PlannerConfig};
use crate::dtg::TopoGraph;
use crate::geom::{KinState, Viewpoint};
use crate::router;
use crate::trajectory::{plan_aseo, AseoTrajectory, EvalPolicy, TrajError};
use crate::viewpoint::{select_targets, SelectError};
use crate::voxel::{
    integrate_scan, parse_env, reveal_sphere, MapError, SensorModel, VoxelMap, VoxelState,
};
use nalgebra::{Vector3, Vector4};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad mission start: {0}")]
    BadStart(String),
    #[error("safety violation at t={t:.2}s, position ({x:.2}, {y:.2}, {z:.2})")]
    SafetyViolation { t: f64, x: f64, y: f64, z: f64 },
}

pub const METRICS_HEADER: &str = "t,explored_volume,traveled_distance,speed,planning_ms,n_nodes,n_erois";

#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub t: f64,
    pub explored_volume: f64,
    pub traveled_distance: f64,
    pub speed: f64,
    pub planning_ms: f64,
    pub n_nodes: usize,
    pub n_erois: usize,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{:.2},{:.3},{:.3},{:.3},{:.3},{},{}",
            self.t,
            self.explored_volume,
            self.traveled_distance,
            self.speed,
            self.planning_ms,
            self.n_nodes,
            self.n_erois
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Running,
    Complete { t: f64, stalled: bool },
    Failed,
}

struct ActivePlan {
    traj: AseoTrajectory,
    eroi_id: u64,
    /// Execution time since the start of the exploring branch.
    tau: f64,
    exec_safety: bool,
    danger_continuous: bool,
    danger_exploring: bool,
}

pub struct MissionState {
    pub cfg: PlannerConfig,
    pub gt: VoxelMap,
    pub map: VoxelMap,
    pub graph: TopoGraph,
    pub robot: KinState,
    pub clock: f64,
    pub seed: u64,
    pub phase: Phase,
    pub metrics: Vec<MetricsRow>,
    pub traveled: f64,
    active: Option<ActivePlan>,
    sensor: SensorModel,
    step_idx: u64,
    sensor_every: u64,
    plan_events: u32,
    sim_plan_ms_pending: f64,
    pub wall_plan_ms: Vec<f64>,
    stall_since: Option<f64>,
    retry_after_sense: bool,
    start_pos: Vector3<f64>,
    traj_log: String,
    planner_log: String,
}

impl MissionState {
    pub fn new(
        gt: VoxelMap,
        cfg: PlannerConfig,
        start: Viewpoint,
        seed: u64,
    ) -> Result<Self, SimError> {
        let start_voxel = gt
            .voxel_of(&start.pos)
            .ok_or_else(|| SimError::BadStart("start position outside the map".into()))?;
        if gt.state(start_voxel) != VoxelState::Free {
            return Err(SimError::BadStart(
                "start position is not in free space".into(),
            ));
        }
        let sensor_every = (cfg.sensor_dt / cfg.sim_dt).round().max(1.0) as u64;
        let map = VoxelMap::blank_like(&gt);
        let sensor = SensorModel::new(&cfg);
        Ok(Self {
            graph: TopoGraph::new(seed),
            robot: KinState::at_rest(start),
            clock: 0.0,
            seed,
            phase: Phase::Running,
            metrics: Vec::new(),
            traveled: 0.0,
            active: None,
            sensor,
            step_idx: 0,
            sensor_every,
            plan_events: 0,
            sim_plan_ms_pending: 0.0,
            wall_plan_ms: Vec::new(),
            stall_since: None,
            retry_after_sense: false,
            start_pos: start.pos,
            traj_log: String::new(),
            planner_log: String::new(),
            gt,
            map,
            cfg,
        })
    }

    pub fn start_pos(&self) -> Vector3<f64> {
        self.start_pos
    }

    pub fn traj_log(&self) -> &str {
        &self.traj_log
    }

    pub fn planner_log(&self) -> &str {
        &self.planner_log
    }

    pub fn plan_events(&self) -> u32 {
        self.plan_events
    }

    pub fn step_count(&self) -> u64 {
        self.step_idx
    }

    /// Fraction of the reachable ground-truth free volume currently known
    /// free in the observed map.
    pub fn coverage(&self) -> f64 {
        let reachable = envgen::reachable_free_count(&self.gt, &self.start_pos);
        if reachable == 0 {
            return 0.0;
        }
        let mut known = 0usize;
        let Some(s) = self.gt.voxel_of(&self.start_pos) else {
            return 0.0;
        };
        // Flood fill again, counting voxels the map has learned are free.
        let dims = self.gt.dims();
        let lin = |v: crate::voxel::VoxelIdx| ((v.x * dims[1] + v.y) * dims[2] + v.z) as usize;
        let mut seen = vec![false; (dims[0] * dims[1] * dims[2]) as usize];
        let mut queue = std::collections::VecDeque::from([s]);
        seen[lin(s)] = true;
        while let Some(v) = queue.pop_front() {
            if self.map.state(v) == VoxelState::Free {
                known += 1;
            }
            for n in v.neighbors6() {
                if self.gt.in_bounds(n)
                    && !seen[lin(n)]
                    && self.gt.state(n) == VoxelState::Free
                {
                    seen[lin(n)] = true;
                    queue.push_back(n);
                }
            }
        }
        known as f64 / reachable as f64
    }

    fn sense(&mut self) -> Result<Vec<crate::voxel::VoxelIdx>, SimError> {
        let mut changed = Vec::new();
        let sphere = reveal_sphere(&mut self.map, &self.robot.vp.pos, 0.3, &self.gt);
        changed.extend(sphere.changed);
        let scan = integrate_scan(&mut self.map, &self.robot.vp, &self.gt, &self.sensor)?;
        changed.extend(scan.changed);
        self.graph.update_graph(&self.robot.vp, &self.map, &self.cfg);
        self.graph.update_erois(&self.map, &changed, &self.cfg);
        // Newly observed obstacles inside active corridors raise danger
        // flags; states are monotone, so only new occupied voxels matter.
        if let Some(plan) = &mut self.active {
            for &v in &changed {
                if self.map.state(v) != VoxelState::Occupied {
                    continue;
                }
                let c = self.map.voxel_center(v);
                if plan.traj.corridors.continuous.iter().any(|b| b.contains(&c)) {
                    plan.danger_continuous = true;
                }
                if plan.traj.corridors.exploring.iter().any(|b| b.contains(&c)) {
                    plan.danger_exploring = true;
                }
            }
        }
        self.retry_after_sense = false;
        Ok(changed)
    }

    fn want_plan(&self) -> bool {
        match &self.active {
            None => true,
            Some(p) => {
                if p.exec_safety {
                    // Committed to the safe stop; replan once it finishes.
                    return p.tau
                        >= p.traj.exploring.total_duration()
                            + p.traj.safety.total_duration();
                }
                let t_e = p.traj.exploring.total_duration();
                let eroi_gone = self.graph.eroi_by_id(p.eroi_id).is_none();
                eroi_gone
                    || p.danger_exploring
                    || (p.danger_continuous && p.tau < t_e)
                    || p.tau >= t_e
            }
        }
    }

    fn try_plan(&mut self) {
        let t0 = Instant::now();
        self.plan_events += 1;
        self.sim_plan_ms_pending += self.cfg.plan_latency_ms;
        let outcome = (|| -> Option<(ActivePlan, String)> {
            let instance = router::build_instance(&self.graph, &self.map, &self.robot.vp)?;
            let routing = router::solve(&instance);
            let nodes = routing.node_ids(&instance);
            let (triple, _region) =
                match select_targets(&self.graph, &self.map, &nodes, &self.robot, &self.cfg) {
                    Ok(t) => t,
                    Err(SelectError::RobotNotInFreeSpace) => return None,
                    Err(_) => return None,
                };
            let traj = plan_aseo(&self.map, &self.robot, &triple, &self.cfg).ok()?;
            let mut record = String::new();
            write!(
                record,
                "CYCLE {} t {:.2}\n{}",
                self.plan_events,
                self.clock,
                triple.debug_record()
            )
            .unwrap();
            Some((
                ActivePlan {
                    traj,
                    eroi_id: triple.eroi_id,
                    tau: 0.0,
                    exec_safety: false,
                    danger_continuous: false,
                    danger_exploring: false,
                },
                record,
            ))
        })();
        self.wall_plan_ms
            .push(t0.elapsed().as_secs_f64() * 1e3);
        match outcome {
            Some((plan, record)) => {
                self.active = Some(plan);
                self.planner_log.push_str(&record);
                self.stall_since = None;
            }
            None => {
                if self.graph.explorable_nodes().is_empty() && self.step_idx > 0 {
                    self.phase = Phase::Complete {
                        t: self.clock,
                        stalled: false,
                    };
                    self.active = None;
                    return;
                }
                // Explorable regions exist but none is plannable right now:
                // keep flying the current plan (it may open the way) or hold
                // and retry after fresh sensor data; give up after a grace
                // period without progress.
                self.retry_after_sense = true;
                if self.active.is_none() {
                    let since = *self.stall_since.get_or_insert(self.clock);
                    if self.clock - since > 2.0 {
                        self.phase = Phase::Complete {
                            t: self.clock,
                            stalled: true,
                        };
                    }
                }
            }
        }
    }

    /// Robot state on the active plan at execution time `tau`, with the
    /// branch tag: exploring, then continuous (aggressive continuation) or
    /// safety after a junction diversion, then hold.
    fn sample_plan(
        plan: &ActivePlan,
        tau: f64,
    ) -> (Vector4<f64>, Vector4<f64>, Vector4<f64>, char) {
        let t_e = plan.traj.exploring.total_duration();
        if tau <= t_e && !(plan.exec_safety && tau >= t_e) {
            let (p, v, a) = plan
                .traj
                .exploring
                .evaluate(tau, EvalPolicy::Clamp)
                .expect("clamped");
            return (p, v, a, 'e');
        }
        let local = tau - t_e;
        let branch = if plan.exec_safety {
            &plan.traj.safety
        } else {
            &plan.traj.continuous
        };
        let total = branch.total_duration();
        let (p, v, a) = branch
            .evaluate(local.min(total), EvalPolicy::Clamp)
            .expect("clamped");
        let tag = if local > total {
            'h'
        } else if plan.exec_safety {
            's'
        } else {
            'c'
        };
        (p, v, a, tag)
    }

    /// One 50 Hz physics step: sense (at the sensor rate), replan on
    /// events, advance the robot along the executing branch, log, and
    /// collect metrics.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.phase != Phase::Running {
            return Ok(());
        }
        let dt = self.cfg.sim_dt;
        let sense_tick = self.step_idx % self.sensor_every == 0;
        if sense_tick {
            self.sense()?;
        }
        if self.want_plan() && !self.retry_after_sense {
            self.try_plan();
        }
        if sense_tick && self.phase == Phase::Running {
            let row = MetricsRow {
                t: self.clock,
                explored_volume: self.map.explored_volume(),
                traveled_distance: self.traveled,
                speed: self.robot.linear_vel().norm(),
                planning_ms: self.sim_plan_ms_pending,
                n_nodes: self.graph.nodes().len(),
                n_erois: self.graph.erois().count(),
            };
            self.sim_plan_ms_pending = 0.0;
            self.metrics.push(row);
        }

        // Advance with junction bookkeeping.
        let prev_pos = self.robot.vp.pos;
        let mut tag = 'h';
        let mut state = (
            self.robot.vp.as_vec4(),
            Vector4::zeros(),
            Vector4::zeros(),
        );
        if let Some(plan) = &mut self.active {
            let t_e = plan.traj.exploring.total_duration();
            let before = plan.tau;
            plan.tau += dt;
            if !plan.exec_safety
                && before < t_e
                && plan.tau >= t_e
                && plan.danger_continuous
            {
                // Obstacle known on the continuous corridor: divert into the
                // safety branch at the shared junction.
                plan.exec_safety = true;
            }
            let (p, v, a, t) = Self::sample_plan(plan, plan.tau);
            state = (p, v, a);
            tag = t;
        }
        let new_pos = state.0.xyz();
        let voxel = self.gt.voxel_of(&new_pos);
        let collided = match voxel {
            Some(v) => self.gt.state(v) == VoxelState::Occupied,
            None => true,
        };
        if collided {
            self.phase = Phase::Failed;
            return Err(SimError::SafetyViolation {
                t: self.clock + dt,
                x: new_pos.x,
                y: new_pos.y,
                z: new_pos.z,
            });
        }
        self.traveled += (new_pos - prev_pos).norm();
        self.robot = KinState {
            vp: Viewpoint::new(new_pos, state.0[3]),
            vel: state.1,
            acc: state.2,
        };

        // 100 Hz executed-trajectory log: two samples per physics step.
        for half in [0.5, 1.0] {
            let t = self.clock + dt * half;
            let (p, v, a) = match &self.active {
                Some(plan) => {
                    let tau = plan.tau - dt * (1.0 - half);
                    let (p, v, a, _) = Self::sample_plan(plan, tau);
                    (p, v, a)
                }
                None => state,
            };
            writeln!(
                self.traj_log,
                "{} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
                tag, t, p[0], p[1], p[2], p[3], v[0], v[1], v[2], v[3], a[0], a[1], a[2], a[3]
            )
            .unwrap();
        }

        self.clock += dt;
        self.step_idx += 1;
        Ok(())
    }
}

/// Summary facts of one mission run. Wall-clock planner timings live here
/// (and on stderr), never in the deterministic output files.
#[derive(Debug, Clone)]
pub struct MissionReport {
    pub sim_time: f64,
    pub completed: bool,
    pub stalled: bool,
    pub coverage: f64,
    pub traveled: f64,
    pub avg_speed: f64,
    pub explored_volume: f64,
    pub n_plans: u32,
    pub avg_plan_wall_ms: f64,
    pub max_plan_wall_ms: f64,
}

fn summary_text(state: &MissionState, report: &MissionReport, env_name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "env={env_name}");
    let _ = writeln!(s, "seed={}", state.seed);
    let _ = writeln!(s, "sim_time={:.2}", report.sim_time);
    let _ = writeln!(s, "completed={}", report.completed);
    let _ = writeln!(s, "stalled={}", report.stalled);
    let _ = writeln!(s, "coverage_pct={:.2}", report.coverage * 100.0);
    let _ = writeln!(s, "traveled_m={:.3}", report.traveled);
    let _ = writeln!(s, "avg_speed={:.3}", report.avg_speed);
    let _ = writeln!(s, "explored_volume_m3={:.3}", report.explored_volume);
    let _ = writeln!(s, "n_plans={}", report.n_plans);
    let _ = writeln!(
        s,
        "avg_planning_ms={:.3}",
        if report.n_plans > 0 {
            state.cfg.plan_latency_ms
        } else {
            0.0
        }
    );
    s
}

/// Runs a mission to completion or `time_limit` simulated seconds and
/// writes `metrics.csv`, `trajectory.txt`, `planner.txt`, `graph.txt`, and
/// `summary.txt` into `out_dir`. All files are byte-deterministic for a
/// given (environment, config, seed). On a safety violation the outputs
/// are still written before the error returns.
pub fn run_mission(
    env_path: &Path,
    config_path: Option<&Path>,
    seed: u64,
    time_limit: f64,
    out_dir: &Path,
    start: Option<Viewpoint>,
) -> Result<MissionReport, SimError> {
    let gt = parse_env(&std::fs::read_to_string(env_path)?)?;
    let cfg = match config_path {
        Some(p) => PlannerConfig::parse(&std::fs::read_to_string(p)?)?,
        None => PlannerConfig::default(),
    };
    let start = match start {
        Some(s) => s,
        None => envgen::default_start(&gt)
            .ok_or_else(|| SimError::BadStart("environment has no free voxel".into()))?,
    };
    let mut state = MissionState::new(gt, cfg, start, seed)?;

    let mut violation: Option<SimError> = None;
    while state.phase == Phase::Running && state.clock < time_limit - 1e-9 {
        if let Err(e) = state.step() {
            violation = Some(e);
            break;
        }
    }

    let completed = matches!(state.phase, Phase::Complete { .. });
    let stalled = matches!(state.phase, Phase::Complete { stalled: true, .. });
    let end_t = match state.phase {
        Phase::Complete { t, .. } => t,
        _ => state.clock,
    };
    let report = MissionReport {
        sim_time: end_t,
        completed,
        stalled,
        coverage: state.coverage(),
        traveled: state.traveled,
        avg_speed: if end_t > 0.0 {
            state.traveled / end_t
        } else {
            0.0
        },
        explored_volume: state.map.explored_volume(),
        n_plans: state.plan_events,
        avg_plan_wall_ms: if state.wall_plan_ms.is_empty() {
            0.0
        } else {
            state.wall_plan_ms.iter().sum::<f64>() / state.wall_plan_ms.len() as f64
        },
        max_plan_wall_ms: state.wall_plan_ms.iter().copied().fold(0.0, f64::max),
    };

    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &state.metrics {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;
    std::fs::write(out_dir.join("trajectory.txt"), state.traj_log())?;
    std::fs::write(out_dir.join("planner.txt"), state.planner_log())?;
    std::fs::write(out_dir.join("graph.txt"), state.graph.dump())?;
    let env_name = env_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    std::fs::write(
        out_dir.join("summary.txt"),
        summary_text(&state, &report, &env_name),
    )?;

    match violation {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
