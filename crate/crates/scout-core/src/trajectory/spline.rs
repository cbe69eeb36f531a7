//! Minimum-jerk quintic splines in 4 dimensions (x, y, z, yaw).
//!
//! A branch with `m` segments is the unique degree-5 piecewise polynomial
//! through `m - 1` intermediate 4-D waypoints that matches the boundary
//! position/velocity/acceleration exactly and is C4-continuous at interior
//! knots — which is precisely the minimizer of the integrated squared jerk
//! under those constraints.
//!
//! Coefficients live in per-segment normalized time `u = t / T_i`, and
//! derivative rows of the constraint system are scaled by duration powers,
//! so every entry stays polynomial in the durations. That keeps the system
//! well-conditioned for short segments and makes the rows smoothly
//! differentiable in `T`, which the adjoint gradient below relies on.

use super::TrajError;
use nalgebra::{DMatrix, DVector, Vector4};

/// Position/velocity/acceleration of one 4-D boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State4 {
    pub p: Vector4<f64>,
    pub v: Vector4<f64>,
    pub a: Vector4<f64>,
}

impl State4 {
    pub fn at_rest(p: Vector4<f64>) -> Self {
        Self {
            p,
            v: Vector4::zeros(),
            a: Vector4::zeros(),
        }
    }
}

/// Out-of-range evaluation handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Strict,
    Clamp,
}

#[derive(Debug, Clone)]
pub struct Segment4 {
    pub dur: f64,
    /// `coef[dim][j]` multiplies `u^j`.
    pub coef: [[f64; 6]; 4],
}

impl Segment4 {
    /// Position, velocity, acceleration at normalized time `u`.
    pub fn eval(&self, u: f64) -> (Vector4<f64>, Vector4<f64>, Vector4<f64>) {
        let mut pow = [1.0; 6];
        for j in 1..6 {
            pow[j] = pow[j - 1] * u;
        }
        let mut p = Vector4::zeros();
        let mut v = Vector4::zeros();
        let mut a = Vector4::zeros();
        for d in 0..4 {
            let c = &self.coef[d];
            let mut pd = 0.0;
            let mut vd = 0.0;
            let mut ad = 0.0;
            for j in 0..6 {
                pd += c[j] * pow[j];
                if j >= 1 {
                    vd += j as f64 * c[j] * pow[j - 1];
                }
                if j >= 2 {
                    ad += (j * (j - 1)) as f64 * c[j] * pow[j - 2];
                }
            }
            p[d] = pd;
            v[d] = vd / self.dur;
            a[d] = ad / (self.dur * self.dur);
        }
        (p, v, a)
    }
}

#[derive(Debug, Clone)]
pub struct Spline4 {
    pub segs: Vec<Segment4>,
    /// Boundary states as given to the solver, stored verbatim.
    pub start: State4,
    pub end: State4,
    /// Intermediate waypoints (`segs.len() - 1` of them).
    pub waypoints: Vec<Vector4<f64>>,
}

/// Factorial-style derivative factors `j! / (j-k)!`.
fn dfac(j: usize, k: usize) -> f64 {
    let mut f = 1.0;
    for i in 0..k {
        f *= (j - i) as f64;
    }
    f
}

fn system_size(m: usize) -> usize {
    6 * m
}

/// Assembles the scaled constraint matrix for the given durations.
fn assemble(durations: &[f64]) -> DMatrix<f64> {
    let m = durations.len();
    let n = system_size(m);
    let mut a = DMatrix::zeros(n, n);
    // Start of segment 0 at u=0, rows scaled by T0^k.
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    a[(2, 2)] = 2.0;
    for k in 0..m - 1 {
        let base = 3 + 6 * k;
        let left = 6 * k;
        let right = 6 * (k + 1);
        let r = durations[k] / durations[k + 1];
        for j in 0..6 {
            a[(base, left + j)] = 1.0;
        }
        a[(base + 1, right)] = 1.0;
        for (row, ord) in (2..6).zip(1..5) {
            for j in ord..6 {
                a[(base + row, left + j)] = dfac(j, ord);
            }
            a[(base + row, right + ord)] = -dfac(ord, ord) * r.powi(ord as i32);
        }
    }
    let last = 6 * (m - 1);
    let n3 = n - 3;
    for j in 0..6 {
        a[(n3, last + j)] = 1.0;
        if j >= 1 {
            a[(n3 + 1, last + j)] = j as f64;
        }
        if j >= 2 {
            a[(n3 + 2, last + j)] = (j * (j - 1)) as f64;
        }
    }
    a
}

fn assemble_rhs(
    durations: &[f64],
    waypoints: &[Vector4<f64>],
    start: &State4,
    end: &State4,
) -> DMatrix<f64> {
    let m = durations.len();
    let n = system_size(m);
    let mut b = DMatrix::zeros(n, 4);
    let t0 = durations[0];
    let tm = durations[m - 1];
    for d in 0..4 {
        b[(0, d)] = start.p[d];
        b[(1, d)] = start.v[d] * t0;
        b[(2, d)] = start.a[d] * t0 * t0;
        for (k, q) in waypoints.iter().enumerate() {
            let base = 3 + 6 * k;
            b[(base, d)] = q[d];
            b[(base + 1, d)] = q[d];
        }
        b[(n - 3, d)] = end.p[d];
        b[(n - 2, d)] = end.v[d] * tm;
        b[(n - 1, d)] = end.a[d] * tm * tm;
    }
    b
}

/// Builds the minimum-jerk spline through `waypoints` with the given
/// boundary states and per-segment durations
/// (`waypoints.len() == durations.len() - 1`).
pub fn build_spline(
    waypoints: &[Vector4<f64>],
    durations: &[f64],
    start: &State4,
    end: &State4,
) -> Result<Spline4, TrajError> {
    if durations.is_empty() {
        return Err(TrajError::BadShape(
            "a spline needs at least one segment".into(),
        ));
    }
    if waypoints.len() + 1 != durations.len() {
        return Err(TrajError::BadShape(format!(
            "{} waypoints do not fit {} segments",
            waypoints.len(),
            durations.len()
        )));
    }
    for &t in durations {
        if !(t.is_finite() && t > 0.0) {
            return Err(TrajError::NonPositiveDuration(t));
        }
    }
    let a = assemble(durations);
    let b = assemble_rhs(durations, waypoints, start, end);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| TrajError::Singular("spline system".into()))?;
    let m = durations.len();
    let mut segs = Vec::with_capacity(m);
    for i in 0..m {
        let mut coef = [[0.0; 6]; 4];
        for d in 0..4 {
            for j in 0..6 {
                coef[d][j] = x[(6 * i + j, d)];
            }
        }
        segs.push(Segment4 {
            dur: durations[i],
            coef,
        });
    }
    Ok(Spline4 {
        segs,
        start: *start,
        end: *end,
        waypoints: waypoints.to_vec(),
    })
}

impl Spline4 {
    pub fn total_duration(&self) -> f64 {
        self.segs.iter().map(|s| s.dur).sum()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segs.iter().map(|s| s.dur).collect()
    }

    /// Piecewise evaluation; `t` exactly at a knot evaluates the left
    /// segment at `u = 1` (equal to the right segment start by continuity).
    pub fn evaluate(
        &self,
        t: f64,
        policy: EvalPolicy,
    ) -> Result<(Vector4<f64>, Vector4<f64>, Vector4<f64>), TrajError> {
        let total = self.total_duration();
        let mut t = t;
        if t < 0.0 || t > total {
            match policy {
                EvalPolicy::Strict => return Err(TrajError::OutOfRange { t, total }),
                EvalPolicy::Clamp => t = t.clamp(0.0, total),
            }
        }
        let mut acc = 0.0;
        for (i, seg) in self.segs.iter().enumerate() {
            let is_last = i + 1 == self.segs.len();
            if t <= acc + seg.dur || is_last {
                let u = ((t - acc) / seg.dur).clamp(0.0, 1.0);
                return Ok(seg.eval(u));
            }
            acc += seg.dur;
        }
        unreachable!("segment lookup cannot fall through");
    }
}

/// Per-branch gradient bundle produced by the adjoint pass: derivatives of
/// a scalar cost with respect to the intermediate waypoints, durations, and
/// the boundary velocities/accelerations.
#[derive(Debug, Clone)]
pub struct SplineAdjoint {
    pub waypoints: Vec<Vector4<f64>>,
    pub durations: Vec<f64>,
    pub start_vel: Vector4<f64>,
    pub start_acc: Vector4<f64>,
    pub end_vel: Vector4<f64>,
    pub end_acc: Vector4<f64>,
}

/// Propagates a cost gradient with respect to the spline coefficients
/// (`g[dim][6*i + j]`, normalized basis) back to the construction
/// parameters. `extra_t` carries the direct duration dependence of the
/// cost (quadrature weights and explicit `1/T` factors), to which the
/// implicit dependence through the coefficients is added.
pub fn pullback(
    spline: &Spline4,
    g: &[DVector<f64>; 4],
    extra_t: &[f64],
) -> Result<SplineAdjoint, TrajError> {
    let durations = spline.durations();
    let m = durations.len();
    let n = system_size(m);
    debug_assert_eq!(extra_t.len(), m);

    let a = assemble(&durations);
    let at = a.transpose();
    let lu = at.lu();
    let mut lambda: Vec<DVector<f64>> = Vec::with_capacity(4);
    for gd in g {
        let l = lu
            .solve(gd)
            .ok_or_else(|| TrajError::Singular("adjoint system".into()))?;
        lambda.push(l);
    }

    let coef = |d: usize, i: usize, j: usize| spline.segs[i].coef[d][j];
    let mut grad_t = extra_t.to_vec();
    let t0 = durations[0];
    let tm = durations[m - 1];

    for d in 0..4 {
        let l = &lambda[d];
        // b rows that scale with durations.
        grad_t[0] += l[1] * spline.start.v[d] + l[2] * 2.0 * spline.start.a[d] * t0;
        grad_t[m - 1] += l[n - 2] * spline.end.v[d] + l[n - 1] * 2.0 * spline.end.a[d] * tm;
        // A entries that depend on the duration ratio at each knot.
        for k in 0..m - 1 {
            let base = 3 + 6 * k;
            let r = durations[k] / durations[k + 1];
            let right = k + 1;
            // d/dr of the right-side entries times lambda and coefficient.
            let mut dot_dr = 0.0;
            for (row, ord) in (2..6).zip(1..5usize) {
                let factor = -dfac(ord, ord) * ord as f64 * r.powi(ord as i32 - 1);
                dot_dr += l[base + row] * factor * coef(d, right, ord);
            }
            // r = T_k / T_{k+1}
            grad_t[k] -= dot_dr / durations[k + 1];
            grad_t[k + 1] -= dot_dr * (-durations[k] / (durations[k + 1] * durations[k + 1]));
        }
    }

    let mut grad_wp = vec![Vector4::zeros(); m.saturating_sub(1)];
    for (k, gw) in grad_wp.iter_mut().enumerate() {
        let base = 3 + 6 * k;
        for d in 0..4 {
            gw[d] = lambda[d][base] + lambda[d][base + 1];
        }
    }
    let mut start_vel = Vector4::zeros();
    let mut start_acc = Vector4::zeros();
    let mut end_vel = Vector4::zeros();
    let mut end_acc = Vector4::zeros();
    for d in 0..4 {
        start_vel[d] = lambda[d][1] * t0;
        start_acc[d] = lambda[d][2] * t0 * t0;
        end_vel[d] = lambda[d][n - 2] * tm;
        end_acc[d] = lambda[d][n - 1] * tm * tm;
    }
    Ok(SplineAdjoint {
        waypoints: grad_wp,
        durations: grad_t,
        start_vel,
        start_acc,
        end_vel,
        end_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v4(x: f64, y: f64, z: f64, w: f64) -> Vector4<f64> {
        Vector4::new(x, y, z, w)
    }

    #[test]
    fn rest_to_rest_single_segment_is_symmetric() {
        let start = State4::at_rest(v4(0.0, 0.0, 0.0, 0.0));
        let end = State4::at_rest(v4(2.0, -1.0, 0.5, 1.0));
        let s = build_spline(&[], &[2.0], &start, &end).unwrap();
        let (p, _, _) = s.evaluate(1.0, EvalPolicy::Strict).unwrap();
        for d in 0..4 {
            assert_abs_diff_eq!(p[d], end.p[d] / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_displacement_rest_to_rest_is_constant() {
        let state = State4::at_rest(v4(1.0, 2.0, 3.0, 0.5));
        let s = build_spline(&[], &[1.5], &state, &state).unwrap();
        for i in 0..=10 {
            let t = 1.5 * i as f64 / 10.0;
            let (p, v, a) = s.evaluate(t, EvalPolicy::Strict).unwrap();
            for d in 0..4 {
                assert_abs_diff_eq!(p[d], state.p[d], epsilon = 1e-9);
                assert_abs_diff_eq!(v[d], 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(a[d], 0.0, epsilon = 1e-9);
            }
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> State4 {
        let r = |rng: &mut ChaCha8Rng, s: f64| (rng.random::<f64>() - 0.5) * s;
        State4 {
            p: v4(r(rng, 10.0), r(rng, 10.0), r(rng, 4.0), r(rng, 3.0)),
            v: v4(r(rng, 4.0), r(rng, 4.0), r(rng, 2.0), r(rng, 2.0)),
            a: v4(r(rng, 6.0), r(rng, 6.0), r(rng, 3.0), r(rng, 3.0)),
        }
    }

    #[test]
    fn boundary_and_waypoint_conditions_hold_to_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let m = 1 + (rng.random::<u32>() % 5) as usize;
            let start = random_state(&mut rng);
            let end = random_state(&mut rng);
            let waypoints: Vec<Vector4<f64>> =
                (0..m - 1).map(|_| random_state(&mut rng).p).collect();
            let durations: Vec<f64> =
                (0..m).map(|_| 0.1 + rng.random::<f64>() * 2.0).collect();
            let s = build_spline(&waypoints, &durations, &start, &end).unwrap();

            let (p0, v0, a0) = s.evaluate(0.0, EvalPolicy::Strict).unwrap();
            let (p1, v1, a1) = s.evaluate(s.total_duration(), EvalPolicy::Strict).unwrap();
            for d in 0..4 {
                assert_abs_diff_eq!(p0[d], start.p[d], epsilon = 1e-9);
                assert_abs_diff_eq!(v0[d], start.v[d], epsilon = 1e-9);
                assert_abs_diff_eq!(a0[d], start.a[d], epsilon = 1e-9);
                assert_abs_diff_eq!(p1[d], end.p[d], epsilon = 1e-9);
                assert_abs_diff_eq!(v1[d], end.v[d], epsilon = 1e-9);
                assert_abs_diff_eq!(a1[d], end.a[d], epsilon = 1e-9);
            }
            // Interior knots: waypoint interpolation plus C2 continuity.
            let mut acc = 0.0;
            for (k, wp) in waypoints.iter().enumerate() {
                acc += durations[k];
                let left = s.segs[k].eval(1.0);
                let right = s.segs[k + 1].eval(0.0);
                for d in 0..4 {
                    assert_abs_diff_eq!(left.0[d], wp[d], epsilon = 1e-8);
                    assert_abs_diff_eq!(right.0[d], wp[d], epsilon = 1e-8);
                    assert_abs_diff_eq!(left.1[d], right.1[d], epsilon = 1e-7);
                    assert_abs_diff_eq!(left.2[d], right.2[d], epsilon = 1e-6);
                }
                let _ = acc;
            }
        }
    }

    #[test]
    fn velocity_matches_finite_difference_of_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let start = random_state(&mut rng);
        let end = random_state(&mut rng);
        let wp = vec![random_state(&mut rng).p, random_state(&mut rng).p];
        let s = build_spline(&wp, &[0.8, 1.3, 0.6], &start, &end).unwrap();
        let h = 1e-5;
        for i in 1..40 {
            let t = s.total_duration() * i as f64 / 40.0;
            if t - h < 0.0 || t + h > s.total_duration() {
                continue;
            }
            let (_, v, a) = s.evaluate(t, EvalPolicy::Strict).unwrap();
            let (pm, vm, _) = s.evaluate(t - h, EvalPolicy::Strict).unwrap();
            let (pp, vp, _) = s.evaluate(t + h, EvalPolicy::Strict).unwrap();
            for d in 0..4 {
                assert_abs_diff_eq!(v[d], (pp[d] - pm[d]) / (2.0 * h), epsilon = 1e-6);
                assert_abs_diff_eq!(a[d], (vp[d] - vm[d]) / (2.0 * h), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn invalid_shapes_and_durations_error() {
        let s0 = State4::at_rest(Vector4::zeros());
        assert!(matches!(
            build_spline(&[], &[], &s0, &s0),
            Err(TrajError::BadShape(_))
        ));
        assert!(matches!(
            build_spline(&[Vector4::zeros()], &[1.0], &s0, &s0),
            Err(TrajError::BadShape(_))
        ));
        assert!(matches!(
            build_spline(&[], &[0.0], &s0, &s0),
            Err(TrajError::NonPositiveDuration(_))
        ));
        let s = build_spline(&[], &[1.0], &s0, &s0).unwrap();
        assert!(matches!(
            s.evaluate(2.0, EvalPolicy::Strict),
            Err(TrajError::OutOfRange { .. })
        ));
        assert!(s.evaluate(2.0, EvalPolicy::Clamp).is_ok());
    }

    /// The adjoint must agree with finite differences of an arbitrary
    /// smooth function of the coefficients. The probe cost is a weighted
    /// sum of positions/velocities sampled mid-segment.
    #[test]
    fn pullback_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let start = random_state(&mut rng);
        let end = random_state(&mut rng);
        let wp = vec![random_state(&mut rng).p, random_state(&mut rng).p];
        let durations = vec![0.7, 1.1, 0.9];

        // Probe: sum over segments and dims of w1 * p(0.37) + w2 * v(0.81).
        let cost = |s: &Spline4| -> f64 {
            let mut acc = 0.0;
            for (i, seg) in s.segs.iter().enumerate() {
                let (p, v, _) = seg.eval(0.37);
                let (p2, _, _) = seg.eval(0.81);
                for d in 0..4 {
                    acc += (1.0 + i as f64) * p[d] + 0.5 * v[d] + 0.25 * p2[d];
                }
            }
            acc
        };
        // Coefficient gradient of the probe (normalized basis).
        let grad_coef = |s: &Spline4| -> [DVector<f64>; 4] {
            let m = s.segs.len();
            let mut g = [
                DVector::zeros(6 * m),
                DVector::zeros(6 * m),
                DVector::zeros(6 * m),
                DVector::zeros(6 * m),
            ];
            for (i, seg) in s.segs.iter().enumerate() {
                for d in 0..4 {
                    for j in 0..6 {
                        let u1: f64 = 0.37;
                        let u2: f64 = 0.81;
                        let mut val = (1.0 + i as f64) * u1.powi(j as i32);
                        if j >= 1 {
                            val += 0.5 * j as f64 * u1.powi(j as i32 - 1) / seg.dur;
                        }
                        val += 0.25 * u2.powi(j as i32);
                        g[d][6 * i + j] = val;
                    }
                }
            }
            g
        };
        // Direct duration dependence of the probe: v = poly / T.
        let extra_t = |s: &Spline4| -> Vec<f64> {
            s.segs
                .iter()
                .map(|seg| {
                    let (_, v, _) = seg.eval(0.37);
                    let mut acc = 0.0;
                    for d in 0..4 {
                        acc += 0.5 * (-v[d] / seg.dur);
                    }
                    acc
                })
                .collect()
        };

        let s = build_spline(&wp, &durations, &start, &end).unwrap();
        let adj = pullback(&s, &grad_coef(&s), &extra_t(&s)).unwrap();

        let h = 1e-6;
        // Waypoints.
        for (k, _) in wp.iter().enumerate() {
            for d in 0..4 {
                let mut wl = wp.clone();
                let mut wr = wp.clone();
                wl[k][d] -= h;
                wr[k][d] += h;
                let cl = cost(&build_spline(&wl, &durations, &start, &end).unwrap());
                let cr = cost(&build_spline(&wr, &durations, &start, &end).unwrap());
                let fd = (cr - cl) / (2.0 * h);
                assert_abs_diff_eq!(adj.waypoints[k][d], fd, epsilon = 1e-4);
            }
        }
        // Durations.
        for i in 0..durations.len() {
            let mut dl = durations.clone();
            let mut dr = durations.clone();
            dl[i] -= h;
            dr[i] += h;
            let cl = cost(&build_spline(&wp, &dl, &start, &end).unwrap());
            let cr = cost(&build_spline(&wp, &dr, &start, &end).unwrap());
            let fd = (cr - cl) / (2.0 * h);
            assert_abs_diff_eq!(adj.durations[i], fd, epsilon = 1e-4);
        }
        // Boundary velocity/acceleration.
        for d in 0..4 {
            for (which, expected) in [(0, adj.end_vel[d]), (1, adj.end_acc[d])] {
                let mut el = end;
                let mut er = end;
                if which == 0 {
                    el.v[d] -= h;
                    er.v[d] += h;
                } else {
                    el.a[d] -= h;
                    er.a[d] += h;
                }
                let cl = cost(&build_spline(&wp, &durations, &start, &el).unwrap());
                let cr = cost(&build_spline(&wp, &durations, &start, &er).unwrap());
                let fd = (cr - cl) / (2.0 * h);
                assert_abs_diff_eq!(expected, fd, epsilon = 1e-4);
            }
            for (which, expected) in [(0, adj.start_vel[d]), (1, adj.start_acc[d])] {
                let mut sl = start;
                let mut sr = start;
                if which == 0 {
                    sl.v[d] -= h;
                    sr.v[d] += h;
                } else {
                    sl.a[d] -= h;
                    sr.a[d] += h;
                }
                let cl = cost(&build_spline(&wp, &durations, &sl, &end).unwrap());
                let cr = cost(&build_spline(&wp, &durations, &sr, &end).unwrap());
                let fd = (cr - cl) / (2.0 * h);
                assert_abs_diff_eq!(expected, fd, epsilon = 1e-4);
            }
        }
    }
}
