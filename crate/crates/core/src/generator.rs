//! Smooth test fields, analytic generators and extrapolated difference
//! quotients `(S(h)u − u)/h`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::dynamics::LevyTriplet;
use crate::engine::{Family, LevyControlProblem, Propagator, RobustOUProblem};
use crate::error::{argument, Result};
use crate::lattice::{check_dim, LatticeFunction, SamplePlan};
use crate::rng;

pub type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
pub type HessFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A bounded `C²` function with closed-form derivatives.
#[derive(Clone)]
pub struct SmoothTestField {
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
    hess: Arc<HessFn>,
    bound: f64,
    grad_bound: f64,
    hess_bound: f64,
}

impl std::fmt::Debug for SmoothTestField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothTestField")
            .field("dim", &self.dim)
            .field("bound", &self.bound)
            .field("grad_bound", &self.grad_bound)
            .field("hess_bound", &self.hess_bound)
            .finish()
    }
}

/// Derivative self-check of a test field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub grad_rel_error: f64,
    pub hess_rel_error: f64,
    pub hess_asymmetry: f64,
}

impl DerivativeCheck {
    pub fn passes(&self) -> bool {
        self.grad_rel_error <= 1e-4 && self.hess_rel_error <= 1e-3 && self.hess_asymmetry <= 1e-12
    }
}

impl SmoothTestField {
    #[allow(clippy::too_many_arguments)]
    pub fn new<V, G, H>(dim: usize, bound: f64, grad_bound: f64, hess_bound: f64, value: V, grad: G, hess: H) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            bound,
            grad_bound,
            hess_bound,
        }
    }

    pub fn constant(dim: usize, k: f64) -> Self {
        Self::new(dim, k.abs(), 0.0, 0.0, move |_| k, move |_| vec![0.0; dim], move |_| DMatrix::zeros(dim, dim))
    }

    /// `amp · sin(⟨freq, x⟩ + phase)`.
    pub fn trig(freq: Vec<f64>, amp: f64, phase: f64) -> Self {
        let dim = freq.len();
        let fnorm = crate::lattice::norm(&freq);
        let (f1, f2, f3) = (freq.clone(), freq.clone(), freq);
        let arg = move |f: &[f64], x: &[f64]| f.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phase;
        Self::new(
            dim,
            amp.abs(),
            amp.abs() * fnorm,
            amp.abs() * fnorm * fnorm,
            move |x| amp * arg(&f1, x).sin(),
            move |x| {
                let c = amp * arg(&f2, x).cos();
                f2.iter().map(|f| c * f).collect()
            },
            move |x| {
                let s = -amp * arg(&f3, x).sin();
                DMatrix::from_fn(dim, dim, |i, j| s * f3[i] * f3[j])
            },
        )
    }

    /// `v + ⟨g, y − c⟩ + ½(y − c)ᵀH(y − c)`, with bounds taken over the ball
    /// of the given radius around `c`.
    pub fn quadratic(center: Vec<f64>, v: f64, g: Vec<f64>, hess: DMatrix<f64>, radius: f64) -> Self {
        let dim = center.len();
        let hsym = (&hess + hess.transpose()) * 0.5;
        let hn = hsym.abs().row_sum().max();
        let gn = crate::lattice::norm(&g);
        let (c1, c2, g1, h1, h2) = (center.clone(), center, g.clone(), hsym.clone(), hsym.clone());
        Self::new(
            dim,
            v.abs() + gn * radius + 0.5 * hn * radius * radius,
            gn + hn * radius,
            hn,
            move |y| {
                let z = nalgebra::DVector::from_iterator(dim, y.iter().zip(&c1).map(|(a, b)| a - b));
                v + z.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + 0.5 * z.dot(&(&h1 * &z))
            },
            move |y| {
                let z = nalgebra::DVector::from_iterator(dim, y.iter().zip(&c2).map(|(a, b)| a - b));
                let hz = &h2 * z;
                g1.iter().zip(hz.iter()).map(|(a, b)| a + b).collect()
            },
            move |_| hsym.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn hess_bound(&self) -> f64 {
        self.hess_bound
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        (self.hess)(x)
    }

    /// The field as a lattice element, Lipschitz with its gradient bound.
    pub fn to_lattice(&self) -> LatticeFunction {
        let v = self.value.clone();
        LatticeFunction::new(self.dim, self.bound, Some(self.grad_bound), move |x| v(x))
            .expect("test field bound is finite")
    }

    /// `a·self + b` (derivatives scale accordingly).
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let (v, g, h) = (self.value.clone(), self.grad.clone(), self.hess.clone());
        Self::new(
            self.dim,
            a.abs() * self.bound + b.abs(),
            a.abs() * self.grad_bound,
            a.abs() * self.hess_bound,
            move |x| a * v(x) + b,
            move |x| g(x).iter().map(|d| a * d).collect(),
            move |x| h(x) * a,
        )
    }

    /// Compare the closed-form derivatives with central differences at `points`.
    pub fn check_derivatives(&self, points: &[Vec<f64>]) -> DerivativeCheck {
        let d = self.dim;
        let (mut ge, mut he, mut asym) = (0.0f64, 0.0f64, 0.0f64);
        let scale_g = self.grad_bound.max(1e-12);
        let scale_h = self.hess_bound.max(1e-12);
        for x in points {
            let g = self.grad(x);
            let h = self.hess(x);
            asym = asym.max((&h - h.transpose()).abs().max());
            let step = 1e-4;
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (self.value(&xp) - self.value(&xm)) / (2.0 * step);
                ge = ge.max((fd - g[i]).abs() / scale_g);
                for j in 0..d {
                    let fd2 = (self.grad(&xp)[j] - self.grad(&xm)[j]) / (2.0 * step);
                    he = he.max((fd2 - h[(j, i)]).abs() / scale_h);
                }
            }
            // Second differences of the value along each axis.
            let step2 = 1e-3;
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step2;
                xm[i] -= step2;
                let fd = (self.value(&xp) - 2.0 * self.value(x) + self.value(&xm)) / (step2 * step2);
                he = he.max((fd - h[(i, i)]).abs() / scale_h);
            }
        }
        DerivativeCheck { grad_rel_error: ge, hess_rel_error: he, hess_asymmetry: asym }
    }
}

/// `Σ_i w_i exp(−‖x − c_i‖² / (2 s_i²))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BumpMixture {
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BumpMixture {
    pub fn new(centers: Vec<Vec<f64>>, widths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != widths.len() || centers.len() != weights.len() {
            return Err(argument("bump mixture needs matching nonempty centers, widths and weights"));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(argument("bump centers must share a positive dimension"));
        }
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(argument("bump widths must be positive"));
        }
        Ok(Self { centers, widths, weights })
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn field(&self) -> SmoothTestField {
        let d = self.dim();
        let abs_w: f64 = self.weights.iter().map(|w| w.abs()).sum();
        let grad_bound: f64 =
            self.weights.iter().zip(&self.widths).map(|(w, s)| w.abs() / s * (-0.5f64).exp()).sum();
        let hess_bound: f64 = self.weights.iter().zip(&self.widths).map(|(w, s)| 2.0 * w.abs() / (s * s)).sum();
        let m = Arc::new(self.clone());
        let (m1, m2, m3) = (m.clone(), m.clone(), m);
        SmoothTestField::new(
            d,
            abs_w,
            grad_bound,
            hess_bound,
            move |x| m1.terms(x).map(|(w, e, _, _)| w * e).sum(),
            move |x| {
                let mut g = vec![0.0; d];
                for (w, e, diff, s2) in m2.terms(x) {
                    for i in 0..d {
                        g[i] -= w * e * diff[i] / s2;
                    }
                }
                g
            },
            move |x| {
                let mut h = DMatrix::zeros(d, d);
                for (w, e, diff, s2) in m3.terms(x) {
                    for i in 0..d {
                        for j in 0..d {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            h[(i, j)] += w * e * (diff[i] * diff[j] / (s2 * s2) - delta / s2);
                        }
                    }
                }
                h
            },
        )
    }

    fn terms<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = (f64, f64, Vec<f64>, f64)> + 'a {
        self.centers.iter().zip(&self.widths).zip(&self.weights).map(move |((c, s), w)| {
            let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
            let s2 = s * s;
            let r2: f64 = diff.iter().map(|v| v * v).sum();
            (*w, (-r2 / (2.0 * s2)).exp(), diff, s2)
        })
    }
}

/// Seeded bump mixture: centers in `[−1.5, 1.5]^dim`, widths in
/// `[0.3, 1.5]`, weights in `[−1, 1]`, rescaled so the sup-norm is at most
/// `bound`.
pub fn random_bump_mixture(seed: u64, dim: usize, n_bumps: usize, bound: f64) -> Result<BumpMixture> {
    if n_bumps == 0 {
        return Err(argument("n_bumps must be at least 1"));
    }
    let mut r = rng::keyed_rng(seed, 0x6275_6d70, dim as u64, n_bumps as u64);
    let centers: Vec<Vec<f64>> = (0..n_bumps).map(|_| (0..dim).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let widths: Vec<f64> = (0..n_bumps).map(|_| r.random_range(0.3..1.5)).collect();
    let mut weights: Vec<f64> = (0..n_bumps).map(|_| r.random_range(-1.0..1.0)).collect();
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    if total > bound {
        weights.iter_mut().for_each(|w| *w *= bound / total);
    }
    BumpMixture::new(centers, widths, weights)
}

pub fn random_smooth_function(seed: u64, dim: usize, n_bumps: usize, bound: f64) -> Result<SmoothTestField> {
    Ok(random_bump_mixture(seed, dim, n_bumps, bound)?.field())
}

/// Deterministic quadrature nodes for the jump law.
fn jump_quadrature(triplet: &LevyTriplet) -> Vec<(Vec<f64>, f64)> {
    triplet.jumps().map(|j| j.quadrature()).unwrap_or_default()
}

/// `⟨γ,∇u⟩ + ½tr(Σ∇²u) + λ E[u(x+J) − u(x) − ⟨∇u(x), J⟩1{‖J‖≤1}]`.
pub fn levy_generator_analytic(triplet: &LevyTriplet, u: &SmoothTestField, x: &[f64]) -> Result<f64> {
    check_dim(triplet.dim(), u.dim())?;
    check_dim(triplet.dim(), x.len())?;
    let g = u.grad(x);
    let h = u.hess(x);
    let drift: f64 = triplet.gamma().iter().zip(&g).map(|(a, b)| a * b).sum();
    let diffusion = 0.5 * (triplet.cov() * &h).trace();
    let mut jump = 0.0;
    if triplet.jump_rate() > 0.0 {
        let u0 = u.value(x);
        let law = triplet.jumps().expect("jump law present");
        let mut y = vec![0.0; x.len()];
        for (j, w) in jump_quadrature(triplet) {
            for i in 0..x.len() {
                y[i] = x[i] + j[i];
            }
            jump += w * (u.value(&y) - u0);
        }
        let comp: f64 = law.truncated_mean().iter().zip(&g).map(|(m, d)| m * d).sum();
        jump = triplet.jump_rate() * (jump - comp);
    }
    Ok(drift + diffusion + jump)
}

/// Limit of the controlled quotient: the Lévy generator plus `c*(∇u(x))`.
pub fn hjb_generator_levy(prob: &LevyControlProblem, u: &SmoothTestField, x: &[f64]) -> Result<f64> {
    Ok(levy_generator_analytic(prob.triplet(), u, x)? + prob.cost().cstar(&u.grad(x)))
}

/// `⟨x, Aᵀ∇u⟩ + max_a ⟨b(x,a), ∇u⟩ + agg_σ ½tr(σQσᵀ∇²u)` with `agg = min`
/// for `S` and `max` for `K`.
pub fn isaacs_generator_ou_family(prob: &RobustOUProblem, u: &SmoothTestField, x: &[f64], family: Family) -> Result<f64> {
    let m = &prob.model;
    check_dim(m.dim(), u.dim())?;
    check_dim(m.dim(), x.len())?;
    let g = nalgebra::DVector::from_vec(u.grad(x));
    let h = u.hess(x);
    let xv = nalgebra::DVector::from_column_slice(x);
    let linear = xv.dot(&(m.a_mat().transpose() * &g));
    let control = m
        .actions()
        .iter()
        .map(|a| m.drift(x, a).iter().zip(g.iter()).map(|(b, d)| b * d).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let traces = m.sigma().iter().map(|s| 0.5 * (s * m.q() * s.transpose() * &h).trace());
    let noise = match family {
        Family::S => traces.fold(f64::INFINITY, f64::min),
        Family::K => traces.fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(linear + control + noise)
}

pub fn isaacs_generator_ou(prob: &RobustOUProblem, u: &SmoothTestField, x: &[f64]) -> Result<f64> {
    isaacs_generator_ou_family(prob, u, x, Family::S)
}

/// Extrapolated difference quotients on a plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorEstimate {
    pub h_sequence: Vec<f64>,
    /// `(S(h)u − u)/h` on the plan, one row per `h`.
    pub raw_quotients: Vec<Vec<f64>>,
    /// Richardson limit of `q(h) = L + β₁h + β₂h² + ...` at each plan point.
    pub extrapolated: Vec<f64>,
    /// `sup_plan |q(h) − L|` per `h`.
    pub residuals: Vec<f64>,
    /// Residuals fail to decrease with `h`, so noise dominates the bias.
    pub warning: bool,
}

/// Estimate the generator from `op(h, u) = S(h)u` along a decreasing `h_seq`.
pub fn estimate_generator(
    op: &dyn Fn(f64, &LatticeFunction) -> Result<LatticeFunction>,
    u: &SmoothTestField,
    h_seq: &[f64],
    plan: &SamplePlan,
) -> Result<GeneratorEstimate> {
    if h_seq.len() < 3 {
        return Err(argument("extrapolation needs at least three step sizes"));
    }
    if h_seq.iter().any(|&h| !(h > 0.0 && h <= 1.0)) || h_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(argument("h_seq must be strictly decreasing in (0, 1]"));
    }
    let f = u.to_lattice();
    let base = f.eval_plan(plan)?;
    let mut raw = Vec::with_capacity(h_seq.len());
    for &h in h_seq {
        let sh = op(h, &f)?.eval_plan(plan)?;
        raw.push(sh.iter().zip(&base).map(|(a, b)| (a - b) / h).collect::<Vec<f64>>());
    }
    let extrapolated: Vec<f64> = (0..base.len())
        .map(|i| richardson_at_zero(h_seq, &raw.iter().map(|r| r[i]).collect::<Vec<f64>>()))
        .collect();
    let residuals: Vec<f64> = raw.iter().map(|r| crate::lattice::max_abs_diff(r, &extrapolated)).collect();
    let warning = residuals.windows(2).any(|w| w[1] > w[0]);
    Ok(GeneratorEstimate { h_sequence: h_seq.to_vec(), raw_quotients: raw, extrapolated, residuals, warning })
}

/// Repeated Richardson elimination (Neville's scheme) of the first-order
/// error expansion `q(h) = L + β₁h + β₂h² + ...`, evaluated at `h = 0`.
pub fn richardson_at_zero(h: &[f64], q: &[f64]) -> f64 {
    let mut p = q.to_vec();
    let n = h.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (h[i] * p[i + 1] - h[i + k] * p[i]) / (h[i] - h[i + k]);
        }
    }
    p[0]
}

/// `op` for a propagator: one Bellman step of size `h`.
pub fn single_step_operator(
    prop: &Propagator,
    family: Family,
) -> impl Fn(f64, &LatticeFunction) -> Result<LatticeFunction> + '_ {
    move |h, u| prop.apply_steps(family, h, u, prop.mc().stream_id, 1)
}

/// `sup|a − b| / sup|b|`, or the absolute error when `b` vanishes.
pub fn relative_sup_error(numeric: &[f64], reference: &[f64]) -> f64 {
    let scale = crate::lattice::max_abs(reference);
    let err = crate::lattice::max_abs_diff(numeric, reference);
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// One row of a generator comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorRow {
    pub x: Vec<f64>,
    pub numeric: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

pub fn comparison_rows(plan: &SamplePlan, numeric: &[f64], analytic: &[f64]) -> Vec<GeneratorRow> {
    let scale = crate::lattice::max_abs(analytic).max(1e-300);
    plan.points()
        .iter()
        .zip(numeric.iter().zip(analytic))
        .map(|(x, (n, a))| GeneratorRow { x: x.clone(), numeric: *n, analytic: *a, rel_error: (n - a).abs() / scale })
        .collect()
}

pub fn write_comparison_csv<W: std::io::Write>(rows: &[GeneratorRow], mut w: W) -> Result<()> {
    let dim = rows.first().map_or(1, |r| r.x.len());
    let xs: Vec<String> = (0..dim).map(|i| if dim == 1 { "x".to_string() } else { format!("x{i}") }).collect();
    writeln!(w, "{},numeric,analytic,rel_error", xs.join(","))?;
    for r in rows {
        let coords: Vec<String> = r.x.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{},{},{},{}", coords.join(","), r.numeric, r.analytic, r.rel_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::RunningCost;
    use crate::dynamics::{JumpLaw, OUModel};

    fn gauss() -> SmoothTestField {
        BumpMixture::new(vec![vec![0.0]], vec![0.5f64.sqrt()], vec![1.0]).unwrap().field()
    }

    #[test]
    fn bump_field_is_exp_minus_x_squared() {
        let u = gauss();
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert!((u.value(&[x]) - (-x * x).exp()).abs() < 1e-15);
            assert!((u.grad(&[x])[0] + 2.0 * x * (-x * x).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn random_fields_have_consistent_derivatives() {
        for d in [1, 2] {
            let u = random_smooth_function(7, d, 4, 1.0).unwrap();
            let pts: Vec<Vec<f64>> =
                (0..100).map(|k| rng::rotated_halton(k, d, 3).iter().map(|c| 4.0 * c - 2.0).collect()).collect();
            let chk = u.check_derivatives(&pts);
            assert!(chk.passes(), "{chk:?}");
            assert!(pts.iter().all(|p| u.value(p).abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn random_fields_are_deterministic_and_zero_weight_vanishes() {
        let a = random_bump_mixture(11, 2, 3, 1.0).unwrap();
        let b = random_bump_mixture(11, 2, 3, 1.0).unwrap();
        assert_eq!(a, b);
        let z = BumpMixture::new(vec![vec![0.3]], vec![0.5], vec![0.0]).unwrap().field();
        assert_eq!(z.value(&[0.1]), 0.0);
    }

    #[test]
    fn trig_field_derivatives() {
        let u = SmoothTestField::trig(vec![1.0, -0.5], 0.7, 0.2);
        let pts = vec![vec![0.1, 0.2], vec![-1.0, 1.5]];
        assert!(u.check_derivatives(&pts).passes());
    }

    #[test]
    fn levy_generator_trivial_cases() {
        let k = SmoothTestField::constant(1, 3.0);
        let tr = LevyTriplet::new(vec![0.3], DMatrix::from_element(1, 1, 1.0), 1.0, Some(JumpLaw::Gaussian { mean: vec![0.1], std: 0.5 }))
            .unwrap();
        assert!(levy_generator_analytic(&tr, &k, &[0.2]).unwrap().abs() < 1e-12);
        let drift = LevyTriplet::new(vec![1.0], DMatrix::zeros(1, 1), 0.0, None).unwrap();
        let u = gauss();
        assert!(levy_generator_analytic(&drift, &u, &[0.0]).unwrap().abs() < 1e-15);
        let at1 = levy_generator_analytic(&drift, &u, &[1.0]).unwrap();
        assert!((at1 + 2.0 * (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn large_constant_jumps_are_uncompensated() {
        let tr = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), 1.0, Some(JumpLaw::Constant(vec![2.0]))).unwrap();
        let u = gauss();
        for x in [-1.0, 0.0, 0.5] {
            let direct = u.value(&[x + 2.0]) - u.value(&[x]);
            assert!((levy_generator_analytic(&tr, &u, &[x]).unwrap() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn hjb_generator_brownian_quadratic() {
        let prob = LevyControlProblem::new(LevyTriplet::brownian(1, 1.0), RunningCost::quadratic(1, 1.0).unwrap(), 1.0)
            .unwrap();
        let u = gauss();
        let x = 0.5f64;
        let e = (-x * x).exp();
        let (d1, d2) = (-2.0 * x * e, (4.0 * x * x - 2.0) * e);
        let expect = 0.5 * d2 + 0.5 * d1 * d1;
        assert!((hjb_generator_levy(&prob, &u, &[x]).unwrap() - expect).abs() < 1e-14);
        // At the peak the gradient vanishes and c*(0) = 0.
        let peak = hjb_generator_levy(&prob, &u, &[0.0]).unwrap();
        assert_eq!(peak, levy_generator_analytic(prob.triplet(), &u, &[0.0]).unwrap());
    }

    fn ou(sigmas: &[f64], actions: &[f64], a: f64, q: f64) -> RobustOUProblem {
        RobustOUProblem::new(
            OUModel::new(
                DMatrix::from_element(1, 1, a),
                |_x, a| a.to_vec(),
                actions.iter().map(|v| vec![*v]).collect(),
                1.0,
                sigmas.iter().map(|s| DMatrix::from_element(1, 1, *s)).collect(),
                DMatrix::from_element(1, 1, q),
                1.0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn isaacs_generator_sign_logic() {
        let u = gauss();
        let drift_only = ou(&[0.0], &[-1.0, 1.0], 0.0, 1.0);
        for x in [-0.7, 0.4] {
            let g = isaacs_generator_ou(&drift_only, &u, &[x]).unwrap();
            assert!((g - u.grad(&[x])[0].abs()).abs() < 1e-14);
        }
        let noise = ou(&[0.5, 1.0], &[0.0], 0.0, 1.0);
        for x in [0.0, 1.5] {
            let d2 = u.hess(&[x])[(0, 0)];
            let expect = if d2 >= 0.0 { 0.5 * 0.25 * d2 } else { 0.5 * d2 };
            assert!((isaacs_generator_ou(&noise, &u, &[x]).unwrap() - expect).abs() < 1e-14);
        }
        assert_eq!(isaacs_generator_ou(&noise, &SmoothTestField::constant(1, 2.0), &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn isaacs_trace_term_scales_with_q() {
        let u = gauss();
        let p1 = ou(&[0.5, 1.0], &[0.0], 0.0, 1.0);
        let p3 = RobustOUProblem::new(p1.model.with_q_scaled(3.0).unwrap());
        for x in [0.0, 1.5] {
            let a = isaacs_generator_ou(&p1, &u, &[x]).unwrap();
            let b = isaacs_generator_ou(&p3, &u, &[x]).unwrap();
            assert!((b - 3.0 * a).abs() < 1e-14);
        }
    }

    #[test]
    fn estimate_generator_on_constants_is_zero() {
        let prob = LevyControlProblem::new(LevyTriplet::brownian(1, 1.0), RunningCost::quadratic(1, 1.0).unwrap(), 0.0)
            .unwrap();
        let mc = crate::engine::MCConfig { n_paths: 1000, ..Default::default() };
        let p = Propagator::with_default_grid(crate::engine::Instance::Levy(prob), mc).unwrap();
        let plan = SamplePlan::build(1, 2.0, 21, 0, 0).unwrap();
        let op = single_step_operator(&p, Family::S);
        let est = estimate_generator(&op, &SmoothTestField::constant(1, 0.8), &[0.2, 0.1, 0.05, 0.025], &plan).unwrap();
        assert!(est.extrapolated.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn estimate_generator_rejects_bad_sequences() {
        let plan = SamplePlan::build(1, 2.0, 5, 0, 0).unwrap();
        let op = |_h: f64, u: &LatticeFunction| Ok(u.clone());
        let u = gauss();
        assert!(estimate_generator(&op, &u, &[0.2, 0.1], &plan).is_err());
        assert!(estimate_generator(&op, &u, &[0.1, 0.2, 0.05], &plan).is_err());
    }

    #[test]
    fn quadratic_field_derivatives() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]);
        let q = SmoothTestField::quadratic(vec![0.5, -0.2], 0.3, vec![1.0, -2.0], h.clone(), 3.0);
        assert!((q.value(&[0.5, -0.2]) - 0.3).abs() < 1e-15);
        assert!((q.value(&[1.5, -0.2]) - 2.3).abs() < 1e-14);
        assert!(q.check_derivatives(&[vec![0.1, 0.4], vec![-1.0, 1.0]]).passes());
        assert_eq!(q.hess(&[9.0, 9.0]), h);
    }

    #[test]
    fn richardson_removes_polynomial_error() {
        let h = [0.2, 0.1, 0.05, 0.025];
        let q: Vec<f64> = h.iter().map(|h| 1.5 + 2.0 * h - 3.0 * h * h + 0.5 * h * h * h).collect();
        assert!((richardson_at_zero(&h, &q) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn csv_table_layout() {
        let plan = SamplePlan::new(1, vec![vec![0.0], vec![1.0]], 2.0).unwrap();
        let rows = comparison_rows(&plan, &[1.0, 2.1], &[1.0, 2.0]);
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,numeric,analytic,rel_error\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
