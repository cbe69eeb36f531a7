//! Three-branch trajectory assembly and the penalty objective.
//!
//! The exploring branch starts at the current robot state and all three
//! branches meet at the exploring viewpoint with one shared junction
//! velocity/acceleration; the continuous and safety branches end at rest at
//! their targets. Those boundary conditions are parameters of the spline
//! construction — never penalized — so they hold exactly for any parameter
//! values the optimizer tries.
//!
//! Cost: per-branch feasibility (squared hinge on distance outside the
//! corridor, cubic hinges on squared speed/acceleration overages, linear
//! and yaw separately) integrated by midpoint quadrature, plus a time term
//! for the exploring and continuous branches only.

use super::spline::{build_spline, pullback, Spline4, State4};
use super::TrajError;
use crate::config::PlannerConfig;
use crate::geom::Aabb;
use nalgebra::{DVector, Vector3, Vector4};
use std::fmt::Write as _;

/// Fixed data of one optimization problem: the robot state and the three
/// 4-D targets (yaw already unwrapped).
#[derive(Debug, Clone, Copy)]
pub struct AseoBoundary {
    pub start: State4,
    pub vp_e: Vector4<f64>,
    pub vp_c: Vector4<f64>,
    pub vp_s: Vector4<f64>,
}

/// Optimizable parameters: intermediate waypoints and durations of every
/// branch, plus the shared junction velocity/acceleration.
#[derive(Debug, Clone)]
pub struct AseoParams {
    pub wp_e: Vec<Vector4<f64>>,
    pub t_e: Vec<f64>,
    pub wp_c: Vec<Vector4<f64>>,
    pub t_c: Vec<f64>,
    pub wp_s: Vec<Vector4<f64>>,
    pub t_s: Vec<f64>,
    pub junction_vel: Vector4<f64>,
    pub junction_acc: Vector4<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AseoCorridors {
    pub exploring: Vec<Aabb>,
    pub continuous: Vec<Aabb>,
    pub safety: Vec<Aabb>,
}

#[derive(Debug, Clone)]
pub struct AseoTrajectory {
    pub exploring: Spline4,
    pub continuous: Spline4,
    pub safety: Spline4,
    pub junction: State4,
    pub corridors: AseoCorridors,
}

impl AseoTrajectory {
    /// Builds all three branches from one parameter set; the junction state
    /// is written into each branch verbatim.
    pub fn assemble(
        boundary: &AseoBoundary,
        params: &AseoParams,
        corridors: AseoCorridors,
    ) -> Result<Self, TrajError> {
        let junction = State4 {
            p: boundary.vp_e,
            v: params.junction_vel,
            a: params.junction_acc,
        };
        let exploring = build_spline(&params.wp_e, &params.t_e, &boundary.start, &junction)?;
        let continuous = build_spline(
            &params.wp_c,
            &params.t_c,
            &junction,
            &State4::at_rest(boundary.vp_c),
        )?;
        let safety = build_spline(
            &params.wp_s,
            &params.t_s,
            &junction,
            &State4::at_rest(boundary.vp_s),
        )?;
        Ok(Self {
            exploring,
            continuous,
            safety,
            junction,
            corridors,
        })
    }

    pub fn boundary(&self) -> AseoBoundary {
        AseoBoundary {
            start: self.exploring.start,
            vp_e: self.junction.p,
            vp_c: self.continuous.end.p,
            vp_s: self.safety.end.p,
        }
    }

    pub fn params(&self) -> AseoParams {
        AseoParams {
            wp_e: self.exploring.waypoints.clone(),
            t_e: self.exploring.durations(),
            wp_c: self.continuous.waypoints.clone(),
            t_c: self.continuous.durations(),
            wp_s: self.safety.waypoints.clone(),
            t_s: self.safety.durations(),
            junction_vel: self.junction.v,
            junction_acc: self.junction.a,
        }
    }

    /// Checks the fixed boundary conditions: branch boundary states must
    /// hold the shared junction bit-exactly and both backup branches must
    /// end at rest.
    pub fn validate(&self) -> Result<(), TrajError> {
        let j = &self.junction;
        let same = |s: &State4| s.p == j.p && s.v == j.v && s.a == j.a;
        if !same(&self.exploring.end)
            || !same(&self.continuous.start)
            || !same(&self.safety.start)
        {
            return Err(TrajError::BoundaryViolation(
                "branches do not share the junction state".into(),
            ));
        }
        let rest = |s: &State4| s.v == Vector4::zeros() && s.a == Vector4::zeros();
        if !rest(&self.continuous.end) || !rest(&self.safety.end) {
            return Err(TrajError::BoundaryViolation(
                "continuous/safety branches must end at rest".into(),
            ));
        }
        Ok(())
    }

    /// Text dump: rows `branch t x y z yaw vx vy vz vyaw ax ay az ayaw`
    /// sampled at 100 Hz per branch (t local to the branch).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (tag, spline) in [
            ("e", &self.exploring),
            ("c", &self.continuous),
            ("s", &self.safety),
        ] {
            let total = spline.total_duration();
            let steps = (total / 0.01).floor() as usize;
            for k in 0..=steps {
                let t = (k as f64) * 0.01;
                let (p, v, a) = spline
                    .evaluate(t, super::spline::EvalPolicy::Clamp)
                    .expect("clamped evaluation cannot fail");
                writeln!(
                    out,
                    "{} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
                    tag, t, p[0], p[1], p[2], p[3], v[0], v[1], v[2], v[3], a[0], a[1], a[2], a[3]
                )
                .unwrap();
            }
        }
        out
    }
}

/// Gradients of the objective with respect to every optimizable parameter.
#[derive(Debug, Clone)]
pub struct AseoGradient {
    pub wp_e: Vec<Vector4<f64>>,
    pub t_e: Vec<f64>,
    pub wp_c: Vec<Vector4<f64>>,
    pub t_c: Vec<f64>,
    pub wp_s: Vec<Vector4<f64>>,
    pub t_s: Vec<f64>,
    pub junction_vel: Vector4<f64>,
    pub junction_acc: Vector4<f64>,
}

/// Distance outside the box union and the unscaled direction term
/// `p - clamp(p, nearest box)`; both zero inside any box.
fn corridor_violation(p: &Vector3<f64>, boxes: &[Aabb]) -> (f64, Vector3<f64>) {
    if boxes.is_empty() {
        return (0.0, Vector3::zeros());
    }
    let mut best_d = f64::INFINITY;
    let mut best_dir = Vector3::zeros();
    for b in boxes {
        let cl = b.clamp_point(p);
        let diff = p - cl;
        let d = diff.norm();
        if d <= 0.0 {
            return (0.0, Vector3::zeros());
        }
        if d < best_d {
            best_d = d;
            best_dir = diff;
        }
    }
    (best_d, best_dir)
}

struct BranchEval {
    cost: f64,
    grad_coef: [DVector<f64>; 4],
    extra_t: Vec<f64>,
}

fn branch_penalty(
    spline: &Spline4,
    boxes: &[Aabb],
    cfg: &PlannerConfig,
    with_time: bool,
) -> BranchEval {
    let m = spline.segs.len();
    let q_n = cfg.quad_samples;
    let mut cost = 0.0;
    let mut grad_coef = [
        DVector::zeros(6 * m),
        DVector::zeros(6 * m),
        DVector::zeros(6 * m),
        DVector::zeros(6 * m),
    ];
    let mut extra_t = vec![0.0; m];

    for (i, seg) in spline.segs.iter().enumerate() {
        let t_i = seg.dur;
        let w = t_i / q_n as f64;
        for q in 0..q_n {
            let u = (q as f64 + 0.5) / q_n as f64;
            let (p, v, a) = seg.eval(u);

            let mut pen = 0.0;
            let mut grad_p: Vector4<f64> = Vector4::zeros();
            let mut grad_v: Vector4<f64> = Vector4::zeros();
            let mut grad_a: Vector4<f64> = Vector4::zeros();

            // Corridor: squared hinge of the distance outside the union.
            let (d, dir) = corridor_violation(&p.xyz(), boxes);
            if d > 0.0 {
                pen += cfg.lambda_p * d * d;
                for k in 0..3 {
                    grad_p[k] += cfg.lambda_p * 2.0 * dir[k];
                }
            }

            // Cubic hinges on squared-magnitude overages.
            let mut dyn_pen = 0.0;
            let sv = v.xyz().norm_squared() - cfg.v_m * cfg.v_m;
            if sv > 0.0 {
                dyn_pen += sv.powi(3);
                let f = 3.0 * sv * sv * 2.0;
                for k in 0..3 {
                    grad_v[k] += cfg.lambda_d * f * v[k];
                }
            }
            let sw = v[3] * v[3] - cfg.psi_dot_m * cfg.psi_dot_m;
            if sw > 0.0 {
                dyn_pen += sw.powi(3);
                grad_v[3] += cfg.lambda_d * 6.0 * sw * sw * v[3];
            }
            let sa = a.xyz().norm_squared() - cfg.a_m * cfg.a_m;
            if sa > 0.0 {
                dyn_pen += sa.powi(3);
                let f = 3.0 * sa * sa * 2.0;
                for k in 0..3 {
                    grad_a[k] += cfg.lambda_d * f * a[k];
                }
            }
            let swa = a[3] * a[3] - cfg.psi_ddot_m * cfg.psi_ddot_m;
            if swa > 0.0 {
                dyn_pen += swa.powi(3);
                grad_a[3] += cfg.lambda_d * 6.0 * swa * swa * a[3];
            }
            pen += cfg.lambda_d * dyn_pen;

            cost += w * pen;

            // Chain to normalized coefficients: p = sum c u^j,
            // v = sum j c u^(j-1) / T, a = sum j(j-1) c u^(j-2) / T^2.
            let mut pow = [1.0f64; 6];
            for j in 1..6 {
                pow[j] = pow[j - 1] * u;
            }
            for dim in 0..4 {
                if grad_p[dim] == 0.0 && grad_v[dim] == 0.0 && grad_a[dim] == 0.0 {
                    continue;
                }
                for j in 0..6 {
                    let mut g = grad_p[dim] * pow[j];
                    if j >= 1 {
                        g += grad_v[dim] * j as f64 * pow[j - 1] / t_i;
                    }
                    if j >= 2 {
                        g += grad_a[dim] * (j * (j - 1)) as f64 * pow[j - 2] / (t_i * t_i);
                    }
                    grad_coef[dim][6 * i + j] += w * g;
                }
            }
            // Direct duration dependence: quadrature weight plus the 1/T
            // factors inside v and a at fixed u.
            let mut dpen_dt = 0.0;
            for dim in 0..4 {
                dpen_dt += grad_v[dim] * (-v[dim] / t_i) + grad_a[dim] * (-2.0 * a[dim] / t_i);
            }
            extra_t[i] += pen / q_n as f64 + w * dpen_dt;
        }
        if with_time {
            cost += cfg.lambda_t * t_i;
            extra_t[i] += cfg.lambda_t;
        }
    }
    BranchEval {
        cost,
        grad_coef,
        extra_t,
    }
}

/// Feasibility integral of one branch alone (no time term); used by the
/// simulator and tests to reason about descent on infeasible starts.
pub fn branch_feasibility(spline: &Spline4, boxes: &[Aabb], cfg: &PlannerConfig) -> f64 {
    branch_penalty(spline, boxes, cfg, false).cost
}

/// Full objective with gradients for all optimizable parameters.
pub fn objective(
    traj: &AseoTrajectory,
    cfg: &PlannerConfig,
) -> Result<(f64, AseoGradient), TrajError> {
    let ev_e = branch_penalty(&traj.exploring, &traj.corridors.exploring, cfg, true);
    let ev_c = branch_penalty(&traj.continuous, &traj.corridors.continuous, cfg, true);
    let ev_s = branch_penalty(&traj.safety, &traj.corridors.safety, cfg, false);

    let adj_e = pullback(&traj.exploring, &ev_e.grad_coef, &ev_e.extra_t)?;
    let adj_c = pullback(&traj.continuous, &ev_c.grad_coef, &ev_c.extra_t)?;
    let adj_s = pullback(&traj.safety, &ev_s.grad_coef, &ev_s.extra_t)?;

    let cost = ev_e.cost + ev_c.cost + ev_s.cost;
    let grad = AseoGradient {
        wp_e: adj_e.waypoints,
        t_e: adj_e.durations,
        wp_c: adj_c.waypoints,
        t_c: adj_c.durations,
        wp_s: adj_s.waypoints,
        t_s: adj_s.durations,
        junction_vel: adj_e.end_vel + adj_c.start_vel + adj_s.start_vel,
        junction_acc: adj_e.end_acc + adj_c.start_acc + adj_s.start_acc,
    };
    Ok((cost, grad))
}
