//! L-BFGS descent over the unconstrained trajectory parameters.
//!
//! Durations are reparameterized as `T = t_min + exp(tau)`, which keeps
//! them positive with a smooth chain rule; waypoints and the junction
//! velocity/acceleration enter directly. The budget is a deterministic
//! evaluation cap rather than wall time, so two runs of the same problem
//! produce bit-identical trajectories.

use super::objective::{objective, AseoParams, AseoTrajectory};
use super::TrajError;
use crate::config::PlannerConfig;
use nalgebra::DVector;

const HISTORY: usize = 8;
const TAU_MAX: f64 = 8.0; // T <= t_min + e^8 ~ 3000 s

fn tau_of(t: f64, t_min: f64) -> f64 {
    (t - t_min).max(1e-6).ln()
}

fn t_of(tau: f64, t_min: f64) -> f64 {
    t_min + tau.min(TAU_MAX).exp()
}

struct Packing {
    n_wp_e: usize,
    n_t_e: usize,
    n_wp_c: usize,
    n_t_c: usize,
    n_wp_s: usize,
    n_t_s: usize,
}

impl Packing {
    fn of(p: &AseoParams) -> Self {
        Self {
            n_wp_e: p.wp_e.len(),
            n_t_e: p.t_e.len(),
            n_wp_c: p.wp_c.len(),
            n_t_c: p.t_c.len(),
            n_wp_s: p.wp_s.len(),
            n_t_s: p.t_s.len(),
        }
    }

    fn len(&self) -> usize {
        4 * (self.n_wp_e + self.n_wp_c + self.n_wp_s)
            + self.n_t_e
            + self.n_t_c
            + self.n_t_s
            + 8
    }

    fn pack(&self, p: &AseoParams, t_min: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        let mut i = 0;
        let put_wp = |x: &mut DVector<f64>, i: &mut usize, wps: &[nalgebra::Vector4<f64>]| {
            for w in wps {
                for d in 0..4 {
                    x[*i] = w[d];
                    *i += 1;
                }
            }
        };
        let put_t = |x: &mut DVector<f64>, i: &mut usize, ts: &[f64]| {
            for &t in ts {
                x[*i] = tau_of(t, t_min);
                *i += 1;
            }
        };
        put_wp(&mut x, &mut i, &p.wp_e);
        put_t(&mut x, &mut i, &p.t_e);
        put_wp(&mut x, &mut i, &p.wp_c);
        put_t(&mut x, &mut i, &p.t_c);
        put_wp(&mut x, &mut i, &p.wp_s);
        put_t(&mut x, &mut i, &p.t_s);
        for d in 0..4 {
            x[i] = p.junction_vel[d];
            i += 1;
        }
        for d in 0..4 {
            x[i] = p.junction_acc[d];
            i += 1;
        }
        debug_assert_eq!(i, self.len());
        x
    }

    fn unpack(&self, x: &DVector<f64>, template: &AseoParams, t_min: f64) -> AseoParams {
        let mut p = template.clone();
        let mut i = 0;
        let get_wp = |i: &mut usize, wps: &mut Vec<nalgebra::Vector4<f64>>| {
            for w in wps.iter_mut() {
                for d in 0..4 {
                    w[d] = x[*i];
                    *i += 1;
                }
            }
        };
        let get_t = |i: &mut usize, ts: &mut Vec<f64>| {
            for t in ts.iter_mut() {
                *t = t_of(x[*i], t_min);
                *i += 1;
            }
        };
        get_wp(&mut i, &mut p.wp_e);
        get_t(&mut i, &mut p.t_e);
        get_wp(&mut i, &mut p.wp_c);
        get_t(&mut i, &mut p.t_c);
        get_wp(&mut i, &mut p.wp_s);
        get_t(&mut i, &mut p.t_s);
        for d in 0..4 {
            p.junction_vel[d] = x[i];
            i += 1;
        }
        for d in 0..4 {
            p.junction_acc[d] = x[i];
            i += 1;
        }
        p
    }
}

/// Minimizes the objective from `initial`, which must satisfy the fixed
/// boundary conditions. The result satisfies them too (they are carried by
/// the parameterization) and never costs more than the input.
pub fn optimize(initial: AseoTrajectory, cfg: &PlannerConfig) -> Result<AseoTrajectory, TrajError> {
    initial.validate()?;
    let boundary = initial.boundary();
    let template = initial.params();
    let corridors = initial.corridors.clone();
    let packing = Packing::of(&template);
    let t_min = cfg.t_min;

    let evals = std::cell::Cell::new(0u32);
    let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>), TrajError> {
        evals.set(evals.get() + 1);
        let params = packing.unpack(x, &template, t_min);
        let traj = AseoTrajectory::assemble(&boundary, &params, corridors.clone())?;
        let (cost, grad) = objective(&traj, cfg)?;
        let mut g = DVector::zeros(packing.len());
        let mut i = 0;
        let put_wp = |g: &mut DVector<f64>, i: &mut usize, ws: &[nalgebra::Vector4<f64>]| {
            for w in ws {
                for d in 0..4 {
                    g[*i] = w[d];
                    *i += 1;
                }
            }
        };
        // Chain rule through T = t_min + exp(tau): dJ/dtau = dJ/dT (T - t_min).
        let put_t = |g: &mut DVector<f64>, i: &mut usize, gt: &[f64], ts: &[f64]| {
            for (k, &gv) in gt.iter().enumerate() {
                g[*i] = gv * (ts[k] - t_min);
                *i += 1;
            }
        };
        put_wp(&mut g, &mut i, &grad.wp_e);
        put_t(&mut g, &mut i, &grad.t_e, &params.t_e);
        put_wp(&mut g, &mut i, &grad.wp_c);
        put_t(&mut g, &mut i, &grad.t_c, &params.t_c);
        put_wp(&mut g, &mut i, &grad.wp_s);
        put_t(&mut g, &mut i, &grad.t_s, &params.t_s);
        for d in 0..4 {
            g[i] = grad.junction_vel[d];
            i += 1;
        }
        for d in 0..4 {
            g[i] = grad.junction_acc[d];
            i += 1;
        }
        Ok((cost, g))
    };

    let mut x = packing.pack(&template, t_min);
    let (mut f, mut g) = eval(&x)?;
    let mut best_x = x.clone();
    let mut best_f = f;

    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();

    for _iter in 0..cfg.opt_max_iters {
        if g.norm() < cfg.opt_grad_tol || evals.get() >= cfg.opt_max_evals {
            break;
        }
        // Two-loop recursion.
        let mut d = g.clone();
        let mut alpha = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            alpha[k] = rho[k] * s_hist[k].dot(&d);
            d -= &y_hist[k] * alpha[k];
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let yy = y.dot(y);
            if yy > 0.0 {
                d *= s.dot(y) / yy;
            }
        }
        for k in 0..s_hist.len() {
            let beta = rho[k] * y_hist[k].dot(&d);
            d += &s_hist[k] * (alpha[k] - beta);
        }
        d = -d;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -g.clone();
            slope = g.dot(&d);
            if !(slope < 0.0) {
                break;
            }
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..25 {
            if evals.get() >= cfg.opt_max_evals {
                break;
            }
            let cand = &x + &d * step;
            match eval(&cand) {
                Ok((fc, gc)) if fc.is_finite() && fc <= f + 1e-4 * step * slope => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
            if s_hist.len() > HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
        }
        x = x_new;
        f = f_new;
        g = g_new;
        if f < best_f {
            best_f = f;
            best_x = x.clone();
        }
    }

    let mut params = packing.unpack(&best_x, &template, t_min);
    // Time reallocation: the soft penalty leaves a small geometry-dependent
    // overshoot at its equilibrium. Clamp the free junction rates to the
    // margin, then stretch all durations until finely sampled peaks respect
    // the limits. Boundary conditions are re-enforced by reconstruction.
    let margin = 1.015;
    let jv = params.junction_vel.xyz().norm();
    if jv > margin * cfg.v_m {
        let f = margin * cfg.v_m / jv;
        for d in 0..3 {
            params.junction_vel[d] *= f;
        }
    }
    let jw = params.junction_vel[3].abs();
    if jw > margin * cfg.psi_dot_m {
        params.junction_vel[3] *= margin * cfg.psi_dot_m / jw;
    }
    let ja = params.junction_acc.xyz().norm();
    if ja > margin * cfg.a_m {
        let f = margin * cfg.a_m / ja;
        for d in 0..3 {
            params.junction_acc[d] *= f;
        }
    }
    let jwa = params.junction_acc[3].abs();
    if jwa > margin * cfg.psi_ddot_m {
        params.junction_acc[3] *= margin * cfg.psi_ddot_m / jwa;
    }
    let mut out = AseoTrajectory::assemble(&boundary, &params, corridors.clone())?;
    for round in 0..12 {
        let s = needed_time_scale(&out, cfg);
        if s <= 1.0 {
            break;
        }
        for t in params
            .t_e
            .iter_mut()
            .chain(params.t_c.iter_mut())
            .chain(params.t_s.iter_mut())
        {
            *t *= s.min(2.0);
        }
        // A peak just before the junction is pinned by the junction rates
        // themselves (a braking junction acceleration raises the approach
        // speed no matter how long the segments get), so damp them too.
        if round >= 1 {
            params.junction_acc *= 0.6;
            if params.junction_vel.xyz().norm() > cfg.v_m {
                for d in 0..3 {
                    params.junction_vel[d] *= 0.97;
                }
            }
        }
        out = AseoTrajectory::assemble(&boundary, &params, corridors.clone())?;
    }
    Ok(out)
}

/// Uniform duration factor that brings 1 kHz-sampled velocity and
/// acceleration peaks within 2% of the limits; `<= 1` when already inside.
fn needed_time_scale(traj: &AseoTrajectory, cfg: &PlannerConfig) -> f64 {
    let target = 1.02;
    let mut scale = 0.0f64;
    for spline in [&traj.exploring, &traj.continuous, &traj.safety] {
        let total = spline.total_duration();
        let n = ((total * 1000.0).ceil() as usize).clamp(10, 20_000);
        for k in 0..=n {
            let t = total * k as f64 / n as f64;
            let (_, v, a) = spline
                .evaluate(t, super::spline::EvalPolicy::Clamp)
                .expect("clamped evaluation cannot fail");
            let rv = v.xyz().norm() / (target * cfg.v_m);
            let rw = v[3].abs() / (target * cfg.psi_dot_m);
            let ra = a.xyz().norm() / (target * cfg.a_m);
            let rwa = a[3].abs() / (target * cfg.psi_ddot_m);
            scale = scale.max(rv).max(rw).max(ra.sqrt()).max(rwa.sqrt());
        }
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Aabb;
    use crate::trajectory::objective::{branch_feasibility, AseoBoundary, AseoCorridors};
    use crate::trajectory::spline::State4;
    use nalgebra::{Vector3, Vector4};

    fn v4(x: f64, y: f64, z: f64, w: f64) -> Vector4<f64> {
        Vector4::new(x, y, z, w)
    }

    fn corridor_chain() -> AseoCorridors {
        let b = Aabb::new(Vector3::new(-1.0, -1.5, 0.0), Vector3::new(9.0, 1.5, 2.0));
        AseoCorridors {
            exploring: vec![b],
            continuous: vec![b],
            safety: vec![b],
        }
    }

    fn straight_problem() -> (AseoBoundary, AseoParams) {
        let boundary = AseoBoundary {
            start: State4::at_rest(v4(0.0, 0.0, 1.0, 0.0)),
            vp_e: v4(4.0, 0.0, 1.0, 0.0),
            vp_c: v4(7.0, 0.0, 1.0, 0.0),
            vp_s: v4(3.0, 0.8, 1.0, 0.0),
        };
        let params = AseoParams {
            wp_e: vec![v4(2.0, 0.0, 1.0, 0.0)],
            t_e: vec![3.0, 3.0], // generous
            wp_c: vec![],
            t_c: vec![4.0],
            wp_s: vec![],
            t_s: vec![2.5],
            junction_vel: v4(0.5, 0.0, 0.0, 0.0),
            junction_acc: Vector4::zeros(),
        };
        (boundary, params)
    }

    #[test]
    fn open_corridor_shortens_time_and_beats_uniform_scaling() {
        let cfg = PlannerConfig::default();
        let (boundary, params) = straight_problem();
        let initial =
            AseoTrajectory::assemble(&boundary, &params, corridor_chain()).unwrap();
        let (initial_cost, _) = objective(&initial, &cfg).unwrap();
        let initial_te = initial.exploring.total_duration();

        let optimized = optimize(initial.clone(), &cfg).unwrap();
        optimized.validate().unwrap();
        let (final_cost, _) = objective(&optimized, &cfg).unwrap();

        assert!(final_cost <= initial_cost + 1e-9, "descent must not regress");
        assert!(
            optimized.exploring.total_duration() < initial_te,
            "generous exploring time must shrink"
        );
        // The corridor constraint stays exactly satisfied; the soft dynamic
        // limits may carry the usual small overshoot (checked at 5%).
        for (spline, boxes) in [
            (&optimized.exploring, &optimized.corridors.exploring),
            (&optimized.continuous, &optimized.corridors.continuous),
            (&optimized.safety, &optimized.corridors.safety),
        ] {
            let total = spline.total_duration();
            let n = (total * 1000.0) as usize;
            for k in 0..=n {
                let t = total * k as f64 / n as f64;
                let (p, v, a) = spline
                    .evaluate(t, crate::trajectory::EvalPolicy::Clamp)
                    .unwrap();
                let outside = boxes
                    .iter()
                    .map(|b| b.distance_outside(&p.xyz()))
                    .fold(f64::INFINITY, f64::min);
                assert!(outside == 0.0, "corridor violated at t={t}");
                assert!(v.xyz().norm() <= 1.05 * cfg.v_m, "speed overshoot at t={t}");
                assert!(a.xyz().norm() <= 1.05 * cfg.a_m, "accel overshoot at t={t}");
                assert!(v[3].abs() <= 1.05 * cfg.psi_dot_m);
            }
        }

        // Oracle: grid search over uniform scaling of all durations.
        let mut best_grid = f64::INFINITY;
        for step in 0..120 {
            let scale = 0.15 + step as f64 * 0.02;
            let mut p = params.clone();
            for t in p
                .t_e
                .iter_mut()
                .chain(p.t_c.iter_mut())
                .chain(p.t_s.iter_mut())
            {
                *t = (*t * scale).max(cfg.t_min + 1e-3);
            }
            let traj = AseoTrajectory::assemble(&boundary, &p, corridor_chain()).unwrap();
            let (cost, _) = objective(&traj, &cfg).unwrap();
            best_grid = best_grid.min(cost);
        }
        assert!(
            final_cost <= best_grid * 1.02 + 1e-6,
            "optimizer ({final_cost}) must match or beat uniform scaling ({best_grid})"
        );
    }

    #[test]
    fn degenerate_continuous_target_collapses_duration() {
        let cfg = PlannerConfig::default();
        let boundary = AseoBoundary {
            start: State4::at_rest(v4(0.0, 0.0, 1.0, 0.0)),
            vp_e: v4(3.0, 0.0, 1.0, 0.0),
            vp_c: v4(3.0, 0.0, 1.0, 0.0), // same as vp_e
            vp_s: v4(2.0, 0.5, 1.0, 0.0),
        };
        let params = AseoParams {
            wp_e: vec![],
            t_e: vec![2.5],
            wp_c: vec![],
            t_c: vec![1.5],
            wp_s: vec![],
            t_s: vec![1.5],
            junction_vel: v4(0.2, 0.0, 0.0, 0.0),
            junction_acc: Vector4::zeros(),
        };
        let initial =
            AseoTrajectory::assemble(&boundary, &params, corridor_chain()).unwrap();
        let optimized = optimize(initial, &cfg).unwrap();
        let t_c = optimized.continuous.total_duration();
        assert!(t_c >= cfg.t_min, "duration floor must hold");
        assert!(t_c < 1.0, "degenerate branch must collapse toward the floor");
    }

    #[test]
    fn infeasible_start_reduces_corridor_violation() {
        let cfg = PlannerConfig::default();
        let (boundary, mut params) = straight_problem();
        // Drag the exploring waypoint far outside the corridor.
        params.wp_e = vec![v4(2.0, 4.0, 1.0, 0.0)];
        let initial =
            AseoTrajectory::assemble(&boundary, &params, corridor_chain()).unwrap();
        let before =
            branch_feasibility(&initial.exploring, &initial.corridors.exploring, &cfg);
        assert!(before > 0.0, "start must actually violate the corridor");
        let optimized = optimize(initial, &cfg).unwrap();
        let after = branch_feasibility(
            &optimized.exploring,
            &optimized.corridors.exploring,
            &cfg,
        );
        assert!(after < before, "violation must decrease: {after} !< {before}");
    }

    #[test]
    fn optimize_is_deterministic() {
        let cfg = PlannerConfig::default();
        let (boundary, params) = straight_problem();
        let run = || {
            let initial =
                AseoTrajectory::assemble(&boundary, &params, corridor_chain()).unwrap();
            let t = optimize(initial, &cfg).unwrap();
            t.dump()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn violated_boundary_conditions_are_rejected() {
        let cfg = PlannerConfig::default();
        let (boundary, params) = straight_problem();
        let mut traj = AseoTrajectory::assemble(&boundary, &params, corridor_chain()).unwrap();
        traj.continuous.start.v[1] += 0.5;
        assert!(matches!(
            optimize(traj, &cfg),
            Err(TrajError::BoundaryViolation(_))
        ));
    }
}

