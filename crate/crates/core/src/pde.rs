//! Explicit monotone finite-difference solvers for the two limiting
//! equations in one space dimension, used as acceptance oracles.
//!
//! Both schemes upwind each first-order term by the sign of its velocity,
//! use central second differences, and clamp at the boundary (Neumann). For
//! `dt (max|β|/dx + 2D/dx²) ≤ 1` every update is a nonnegative combination
//! of neighbouring values, so the schemes are monotone.

use serde::{Deserialize, Serialize};

use crate::costs::RunningCost;
use crate::dynamics::{LevyTriplet, OUModel};
use crate::error::{Error, Result};
use crate::lattice::SamplePlan;

const CFL: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSolverSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    /// Fixed time step; chosen from the stability bound when absent.
    pub dt: Option<f64>,
    pub horizon: f64,
    /// Number of equally spaced output times after `t = 0`.
    pub snapshots: usize,
}

impl GridSolverSpec {
    /// `[−3R, 3R]` for a plan of radius `R`: a buffer of two radii.
    pub fn for_plan(plan: &SamplePlan, dx: f64, horizon: f64) -> Self {
        let r = 3.0 * plan.radius();
        Self { x_min: -r, x_max: r, dx, dt: None, horizon, snapshots: 1 }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = ((self.x_max - self.x_min) / self.dx).round() as usize;
        (0..=n).map(|i| self.x_min + i as f64 * self.dx).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min) || !(self.dx > 0.0) || !(self.horizon > 0.0) || self.snapshots == 0 {
            return Err(Error::Spec("need x_min < x_max, dx > 0, horizon > 0 and snapshots ≥ 1".into()));
        }
        let n = (self.x_max - self.x_min) / self.dx;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n < 2.0 {
            return Err(Error::Spec("interval length must be a multiple of dx with at least 3 nodes".into()));
        }
        Ok(())
    }

    /// Whether the interval contains the plan ball.
    pub fn covers(&self, plan: &SamplePlan) -> bool {
        plan.dim() == 1 && self.x_min <= -plan.radius() && self.x_max >= plan.radius()
    }

    /// Steps per snapshot and the time step, respecting the stability bound
    /// `rate = max|β|/dx + 2D/dx²`.
    fn stepping(&self, rate: f64) -> Result<(usize, f64)> {
        let dt_max = if rate > 0.0 { CFL / rate } else { f64::INFINITY };
        let span = self.horizon / self.snapshots as f64;
        match self.dt {
            Some(dt) => {
                if !(dt > 0.0) || dt > dt_max {
                    return Err(Error::Spec(format!("dt = {dt} violates the stability bound {dt_max}")));
                }
                let k = (span / dt).round().max(1.0) as usize;
                if ((k as f64) * dt - span).abs() > 1e-9 * span {
                    return Err(Error::Spec("dt must divide the snapshot spacing".into()));
                }
                Ok((k, dt))
            }
            None => {
                let k = (span / dt_max).ceil().max(1.0) as usize;
                Ok((k, span / k as f64))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdeSolution {
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    /// One row per time in `times`.
    pub values: Vec<Vec<f64>>,
    /// Diffusion coefficient used at each node in the last step.
    pub diffusion_audit: Vec<f64>,
    pub dt: f64,
}

impl PdeSolution {
    /// Linear interpolation of the snapshot `k` at `x` (clamped).
    pub fn interp(&self, k: usize, x: f64) -> f64 {
        let (x0, dx) = (self.x[0], self.x[1] - self.x[0]);
        let n = self.x.len();
        let p = ((x - x0) / dx).clamp(0.0, (n - 1) as f64);
        let i = (p.floor() as usize).min(n - 2);
        let f = p - i as f64;
        let row = &self.values[k];
        row[i] * (1.0 - f) + row[i + 1] * f
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("at least the initial snapshot")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write!(w, "x")?;
        for t in &self.times {
            write!(w, ",t={t}")?;
        }
        writeln!(w)?;
        for (i, x) in self.x.iter().enumerate() {
            write!(w, "{x}")?;
            for row in &self.values {
                write!(w, ",{}", row[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn check_samples(spec: &GridSolverSpec, u0: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    let x = spec.nodes();
    if u0.len() != x.len() {
        return Err(Error::Spec(format!("expected {} initial samples, got {}", x.len(), u0.len())));
    }
    Ok(x)
}

fn max_slope(u: &[f64], dx: f64) -> f64 {
    u.windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs() / dx))
}

/// Minimizer of a convex function on `[lo, hi]` by golden-section search.
fn convex_argmin(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `u_t = ½σ²u_xx + γu_x + c*(u_x)` for a Gaussian triplet in one dimension.
pub fn solve_hjb_levy_1d(u0: &[f64], cost: &RunningCost, triplet: &LevyTriplet, spec: &GridSolverSpec) -> Result<PdeSolution> {
    if triplet.dim() != 1 || cost.dim() != 1 {
        return Err(Error::Spec("the PDE oracle is one-dimensional".into()));
    }
    if triplet.jump_rate() > 0.0 {
        return Err(Error::Spec("the PDE oracle excludes jumps".into()));
    }
    let x = check_samples(spec, u0)?;
    let dx = spec.dx;
    let gamma = triplet.gamma()[0];
    let diff = 0.5 * triplet.cov()[(0, 0)];
    let ham = |p: f64| gamma * p + cost.cstar(&[p]);
    // The scheme keeps the Lipschitz constant, so velocities are bounded by H' on [−L, L].
    let lip = max_slope(u0, dx).max(1e-12);
    let eps = 1e-6 * (1.0 + lip);
    let vel = |p: f64| (ham(p + eps) - ham(p - eps)) / (2.0 * eps);
    let beta_max = vel(lip).abs().max(vel(-lip).abs());
    let p0 = convex_argmin(ham, -lip - 1.0, lip + 1.0);
    let h_p0 = ham(p0);
    let (per_snap, dt) = spec.stepping(beta_max / dx + 2.0 * diff / (dx * dx))?;
    let n = x.len();
    let mut u = u0.to_vec();
    let mut values = vec![u.clone()];
    let mut times = vec![0.0];
    let mut next = vec![0.0; n];
    for s in 0..spec.snapshots {
        for _ in 0..per_snap {
            for i in 0..n {
                let um = u[i.saturating_sub(1)];
                let up = u[(i + 1).min(n - 1)];
                let dp = (up - u[i]) / dx;
                let dm = (u[i] - um) / dx;
                let hp = if dp > p0 { ham(dp) } else { h_p0 };
                let hm = if dm < p0 { ham(dm) } else { h_p0 };
                next[i] = u[i] + dt * (hp.max(hm) + diff * (up - 2.0 * u[i] + um) / (dx * dx));
            }
            std::mem::swap(&mut u, &mut next);
        }
        values.push(u.clone());
        times.push(spec.horizon * (s + 1) as f64 / spec.snapshots as f64);
    }
    Ok(PdeSolution { x, times, values, diffusion_audit: vec![diff; n], dt })
}

/// `u_t = A x u_x + max_a b(x,a) u_x + min_σ ½σ²Q u_xx` in one dimension.
pub fn solve_isaacs_ou_1d(u0: &[f64], model: &OUModel, spec: &GridSolverSpec) -> Result<PdeSolution> {
    if model.dim() != 1 {
        return Err(Error::Spec("the PDE oracle is one-dimensional".into()));
    }
    let x = check_samples(spec, u0)?;
    let dx = spec.dx;
    let a = model.a_mat()[(0, 0)];
    let q = model.q()[(0, 0)];
    let diffs: Vec<f64> = model.sigma().iter().map(|s| 0.5 * s[(0, 0)] * s[(0, 0)] * q).collect();
    let (d_min, d_max) = diffs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let n = x.len();
    let betas: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| model.actions().iter().map(|act| a * xi + model.drift(&[xi], act)[0]).collect())
        .collect();
    let beta_max = betas.iter().flatten().fold(0.0f64, |m, b| m.max(b.abs()));
    let (per_snap, dt) = spec.stepping(beta_max / dx + 2.0 * d_max / (dx * dx))?;
    let mut u = u0.to_vec();
    let mut values = vec![u.clone()];
    let mut times = vec![0.0];
    let mut next = vec![0.0; n];
    let mut audit = vec![0.0; n];
    for s in 0..spec.snapshots {
        for _ in 0..per_snap {
            for i in 0..n {
                let um = u[i.saturating_sub(1)];
                let up = u[(i + 1).min(n - 1)];
                let dp = (up - u[i]) / dx;
                let dm = (u[i] - um) / dx;
                let drift = betas[i]
                    .iter()
                    .map(|&b| b.max(0.0) * dp - (-b).max(0.0) * dm)
                    .fold(f64::NEG_INFINITY, f64::max);
                let d2 = (up - 2.0 * u[i] + um) / (dx * dx);
                let coef = if d2 >= 0.0 { d_min } else { d_max };
                audit[i] = coef;
                next[i] = u[i] + dt * (drift + coef * d2);
            }
            std::mem::swap(&mut u, &mut next);
        }
        values.push(u.clone());
        times.push(spec.horizon * (s + 1) as f64 / spec.snapshots as f64);
    }
    Ok(PdeSolution { x, times, values, diffusion_audit: audit, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{hopf_lax_oracle, line_grid};
    use nalgebra::DMatrix;

    fn spec(horizon: f64, dx: f64) -> GridSolverSpec {
        GridSolverSpec { x_min: -6.0, x_max: 6.0, dx, dt: None, horizon, snapshots: 1 }
    }

    fn ou(sigmas: &[f64], a: f64, drift: bool) -> OUModel {
        OUModel::new(
            DMatrix::from_element(1, 1, a),
            move |_x, act| if drift { act.to_vec() } else { vec![0.0] },
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            1.0,
            sigmas.iter().map(|s| DMatrix::from_element(1, 1, *s)).collect(),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let s = spec(0.25, 0.05);
        let u0 = vec![0.3; s.nodes().len()];
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let hjb = solve_hjb_levy_1d(&u0, &c, &LevyTriplet::brownian(1, 1.0), &s).unwrap();
        assert!(hjb.final_values().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let isaacs = solve_isaacs_ou_1d(&u0, &ou(&[0.5, 1.0], -1.0, true), &s).unwrap();
        assert!(isaacs.final_values().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn hjb_matches_hopf_cole_closed_form() {
        let s = spec(0.25, 0.01);
        let u0: Vec<f64> = s.nodes().iter().map(|x| -x * x).collect();
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let sol = solve_hjb_levy_1d(&u0, &c, &LevyTriplet::brownian(1, 1.0), &s).unwrap();
        for x in [-1.5, 0.0, 0.7, 2.0] {
            let exact = crate::oracle::hopf_cole_quadratic(1.0, 0.25, x);
            assert!((sol.interp(1, x) - exact).abs() < 1e-2 * exact.abs().max(0.1), "x={x}");
        }
    }

    #[test]
    fn zero_noise_matches_hopf_lax() {
        let s = spec(1.0, 0.005);
        let f = |x: f64| -(x * x + 1e-6).sqrt();
        let u0: Vec<f64> = s.nodes().iter().map(|&x| f(x)).collect();
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let sol = solve_hjb_levy_1d(&u0, &c, &LevyTriplet::zero(1), &s).unwrap();
        let lf = crate::lattice::LatticeFunction::new(1, 10.0, Some(1.0), move |x| f(x[0])).unwrap();
        for x in [0.0, 1.0, 2.0] {
            let oracle = hopf_lax_oracle(&lf, &c, 1.0, &[x], &line_grid(x, 4.0, 1e-3)).unwrap();
            assert!((sol.interp(1, x) - oracle).abs() < 1e-2, "x={x}: {} vs {oracle}", sol.interp(1, x));
        }
    }

    #[test]
    fn heat_equation_matches_gaussian_convolution() {
        let s = spec(0.25, 0.01);
        let u0: Vec<f64> = s.nodes().iter().map(|x| (-x * x).exp()).collect();
        let sol = solve_isaacs_ou_1d(&u0, &ou(&[1.0], 0.0, false), &s).unwrap();
        // exp(−x²) under variance t: exp(−x²/(1+2t)) / √(1+2t).
        for x in [0.0, 0.5, 1.5] {
            let exact = (-x * x / 1.5f64).exp() / 1.5f64.sqrt();
            assert!((sol.interp(1, x) - exact).abs() < 1e-2 * exact);
        }
    }

    #[test]
    fn convex_data_selects_smallest_volatility() {
        let s = spec(0.05, 0.02);
        let u0: Vec<f64> = s.nodes().iter().map(|x| 0.1 * x * x).collect();
        let sol = solve_isaacs_ou_1d(&u0, &ou(&[0.5, 1.0], 0.0, false), &s).unwrap();
        // Away from the clamped boundary the data stay convex.
        for (x, d) in sol.x.iter().zip(&sol.diffusion_audit) {
            if x.abs() <= 4.0 {
                assert_eq!(*d, 0.5 * 0.25, "x={x}");
            }
        }
    }

    #[test]
    fn schemes_are_monotone() {
        let s = spec(0.25, 0.02);
        let nodes = s.nodes();
        let u0: Vec<f64> = nodes.iter().map(|x| (-x * x).exp()).collect();
        let v0: Vec<f64> = nodes.iter().map(|x| (-x * x).exp() + 0.3 * (-(x - 1.0).powi(2)).exp()).collect();
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let tr = LevyTriplet::new(vec![0.2], DMatrix::from_element(1, 1, 0.5), 0.0, None).unwrap();
        let (a, b) = (solve_hjb_levy_1d(&u0, &c, &tr, &s).unwrap(), solve_hjb_levy_1d(&v0, &c, &tr, &s).unwrap());
        assert!(a.final_values().iter().zip(b.final_values()).all(|(p, q)| p <= q));
        let m = ou(&[0.5, 1.0], -1.0, true);
        let (a, b) = (solve_isaacs_ou_1d(&u0, &m, &s).unwrap(), solve_isaacs_ou_1d(&v0, &m, &s).unwrap());
        assert!(a.final_values().iter().zip(b.final_values()).all(|(p, q)| p <= q));
    }

    #[test]
    fn refinement_changes_output_by_first_order_amount() {
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let tr = LevyTriplet::brownian(1, 1.0);
        let f = |x: f64| (-x * x).exp();
        let solve = |dx: f64| {
            let s = spec(0.25, dx);
            let u0: Vec<f64> = s.nodes().iter().map(|&x| f(x)).collect();
            solve_hjb_levy_1d(&u0, &c, &tr, &s).unwrap()
        };
        let (a, b, cc) = (solve(0.04), solve(0.02), solve(0.01));
        let probe: Vec<f64> = (-20..=20).map(|k| 0.1 * k as f64).collect();
        let d1 = probe.iter().fold(0.0f64, |m, &x| m.max((a.interp(1, x) - b.interp(1, x)).abs()));
        let d2 = probe.iter().fold(0.0f64, |m, &x| m.max((b.interp(1, x) - cc.interp(1, x)).abs()));
        assert!(d2 <= d1, "{d2} > {d1}");
    }

    #[test]
    fn unstable_time_step_is_rejected() {
        let mut s = spec(0.25, 0.01);
        s.dt = Some(0.01);
        let u0 = vec![0.0; s.nodes().len()];
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        let r = solve_hjb_levy_1d(&u0, &c, &LevyTriplet::brownian(1, 1.0), &s);
        assert!(matches!(r, Err(Error::Spec(_))));
    }
}
