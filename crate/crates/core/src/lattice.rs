//! Bounded functions on `R^d` with pointwise lattice operations, and the
//! sampled seminorms used to compare them.
//!
//! A [`LatticeFunction`] is an evaluator, not a grid. Order comparisons and
//! seminorms are always taken over an explicit [`SamplePlan`], which is a
//! deterministic finite subset of a closed Euclidean ball.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{argument, Result};
use crate::rng;

pub type Evaluator = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Relative slack used when asserting the certified sup-norm bound.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone)]
pub struct LatticeFunction {
    dim: usize,
    eval: Arc<Evaluator>,
    bound: f64,
    lipschitz: Option<f64>,
}

impl fmt::Debug for LatticeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeFunction")
            .field("dim", &self.dim)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl LatticeFunction {
    pub fn new<F>(dim: usize, bound: f64, lipschitz: Option<f64>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(argument("dimension must be positive"));
        }
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(argument(format!("bound must be finite and nonnegative, got {bound}")));
        }
        if let Some(l) = lipschitz {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(argument(format!("Lipschitz constant must be finite and nonnegative, got {l}")));
            }
        }
        Ok(Self { dim, eval: Arc::new(f), bound, lipschitz })
    }

    pub(crate) fn from_parts(dim: usize, bound: f64, lipschitz: Option<f64>, eval: Arc<Evaluator>) -> Self {
        Self { dim, eval, bound, lipschitz }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::from_parts(dim, value.abs(), Some(0.0), Arc::new(move |_| value))
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(dim, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// Evaluate at `x`, asserting the certified bound.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim, "point dimension mismatch");
        let v = (self.eval)(x);
        assert!(
            v.abs() <= self.bound * (1.0 + BOUND_SLACK) + BOUND_SLACK,
            "value {v} at {x:?} exceeds certified bound {}",
            self.bound
        );
        v
    }

    /// Values at every plan point, in plan order.
    pub fn eval_plan(&self, plan: &SamplePlan) -> Result<Vec<f64>> {
        check_dim(self.dim, plan.dim)?;
        Ok(plan.points.par_iter().map(|p| self.eval(p)).collect())
    }

    /// Loosen the certified bound (never tightens it).
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = self.bound.max(bound);
        self
    }

    pub fn without_lipschitz(mut self) -> Self {
        self.lipschitz = None;
        self
    }

    pub fn neg(&self) -> Self {
        let f = self.eval.clone();
        Self::from_parts(self.dim, self.bound, self.lipschitz, Arc::new(move |x| -f(x)))
    }

    pub fn scale(&self, c: f64) -> Self {
        let f = self.eval.clone();
        Self::from_parts(
            self.dim,
            c.abs() * self.bound,
            self.lipschitz.map(|l| c.abs() * l),
            Arc::new(move |x| c * f(x)),
        )
    }

    pub fn shift(&self, c: f64) -> Self {
        let f = self.eval.clone();
        Self::from_parts(self.dim, self.bound + c.abs(), self.lipschitz, Arc::new(move |x| f(x) + c))
    }

    /// Spot-check the Lipschitz metadata on pairs of plan points.
    pub fn check_lipschitz(&self, plan: &SamplePlan, n_pairs: usize, seed: u64) -> Result<()> {
        check_dim(self.dim, plan.dim)?;
        let Some(l) = self.lipschitz else { return Ok(()) };
        let n = plan.points.len() as u64;
        for k in 0..n_pairs as u64 {
            let i = (rng::mix(&[seed, k, 0]) % n) as usize;
            let j = (rng::mix(&[seed, k, 1]) % n) as usize;
            let (x, y) = (&plan.points[i], &plan.points[j]);
            let dist = euclid(x, y);
            let diff = (self.eval(x) - self.eval(y)).abs();
            if diff > l * dist * (1.0 + 1e-9) + 1e-12 {
                return Err(argument(format!(
                    "Lipschitz metadata {l} violated between {x:?} and {y:?}: |du| = {diff}, |dx| = {dist}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(argument(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub(crate) fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn combine_lip(a: Option<f64>, b: Option<f64>, f: impl Fn(f64, f64) -> f64) -> Option<f64> {
    Some(f(a?, b?))
}

pub fn lattice_join(u: &LatticeFunction, v: &LatticeFunction) -> Result<LatticeFunction> {
    check_dim(u.dim, v.dim)?;
    let (f, g) = (u.eval.clone(), v.eval.clone());
    Ok(LatticeFunction::from_parts(
        u.dim,
        u.bound.max(v.bound),
        combine_lip(u.lipschitz, v.lipschitz, f64::max),
        Arc::new(move |x| f(x).max(g(x))),
    ))
}

pub fn lattice_meet(u: &LatticeFunction, v: &LatticeFunction) -> Result<LatticeFunction> {
    check_dim(u.dim, v.dim)?;
    let (f, g) = (u.eval.clone(), v.eval.clone());
    Ok(LatticeFunction::from_parts(
        u.dim,
        u.bound.max(v.bound),
        combine_lip(u.lipschitz, v.lipschitz, f64::max),
        Arc::new(move |x| f(x).min(g(x))),
    ))
}

/// `|u| = u ∨ (−u)`.
pub fn lattice_abs(u: &LatticeFunction) -> LatticeFunction {
    let f = u.eval.clone();
    LatticeFunction::from_parts(u.dim, u.bound, u.lipschitz, Arc::new(move |x| f(x).abs()))
}

/// `λu + (1 − λ)v` for `λ ∈ [0, 1]`.
pub fn affine_combine(lambda: f64, u: &LatticeFunction, v: &LatticeFunction) -> Result<LatticeFunction> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(argument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    check_dim(u.dim, v.dim)?;
    let (f, g) = (u.eval.clone(), v.eval.clone());
    let mu = 1.0 - lambda;
    Ok(LatticeFunction::from_parts(
        u.dim,
        lambda * u.bound + mu * v.bound,
        combine_lip(u.lipschitz, v.lipschitz, |a, b| lambda * a + mu * b),
        Arc::new(move |x| lambda * f(x) + mu * g(x)),
    ))
}

/// `Σ c_i u_i` with conservatively propagated metadata.
pub fn linear_combination(terms: &[(f64, &LatticeFunction)]) -> Result<LatticeFunction> {
    let Some((_, first)) = terms.first() else {
        return Err(argument("empty linear combination"));
    };
    let dim = first.dim;
    for (_, u) in terms {
        check_dim(dim, u.dim)?;
    }
    let bound = terms.iter().map(|(c, u)| c.abs() * u.bound).sum();
    let lipschitz = terms
        .iter()
        .try_fold(0.0, |acc, (c, u)| u.lipschitz.map(|l| acc + c.abs() * l));
    let parts: Vec<(f64, Arc<Evaluator>)> = terms.iter().map(|(c, u)| (*c, u.eval.clone())).collect();
    Ok(LatticeFunction::from_parts(
        dim,
        bound,
        lipschitz,
        Arc::new(move |x| parts.iter().map(|(c, f)| c * f(x)).sum()),
    ))
}

/// `u − v`.
pub fn difference(u: &LatticeFunction, v: &LatticeFunction) -> Result<LatticeFunction> {
    linear_combination(&[(1.0, u), (-1.0, v)])
}

/// `max_{x ∈ plan} |u(x)|`.
pub fn sup_seminorm(u: &LatticeFunction, plan: &SamplePlan) -> Result<f64> {
    Ok(u.eval_plan(plan)?.into_iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// `max_{x ∈ plan} |u(x) − v(x)|`.
pub fn sup_distance(u: &LatticeFunction, v: &LatticeFunction, plan: &SamplePlan) -> Result<f64> {
    check_dim(u.dim, v.dim)?;
    let a = u.eval_plan(plan)?;
    let b = v.eval_plan(plan)?;
    Ok(max_abs_diff(&a, &b))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Finite, duplicate-free subset of the closed ball of radius `radius`.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    dim: usize,
    points: Vec<Vec<f64>>,
    radius: f64,
}

impl SamplePlan {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(argument("plan dimension must be positive"));
        }
        if !(radius > 0.0) {
            return Err(argument("plan radius must be positive"));
        }
        if points.is_empty() {
            return Err(argument("plan must contain at least one point"));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            check_dim(dim, p.len())?;
            if norm(p) > radius * (1.0 + 1e-12) {
                return Err(argument(format!("point {p:?} lies outside the ball of radius {radius}")));
            }
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            if !seen.insert(key) {
                return Err(argument(format!("duplicate plan point {p:?}")));
            }
        }
        Ok(Self { dim, points, radius })
    }

    /// Regular grid with `grid_per_dim` nodes per axis on `[−R, R]^d`
    /// restricted to the ball, followed by `fill` quasi-random points.
    pub fn build(dim: usize, radius: f64, grid_per_dim: usize, fill: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim > 6 {
            return Err(argument(format!("unsupported plan dimension {dim}")));
        }
        let mut points = Vec::new();
        let mut seen = HashSet::new();
        let mut push = |p: Vec<f64>, points: &mut Vec<Vec<f64>>| {
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            if seen.insert(key) {
                points.push(p);
            }
        };
        if grid_per_dim > 0 {
            let step = if grid_per_dim > 1 { 2.0 * radius / (grid_per_dim - 1) as f64 } else { 0.0 };
            let total = grid_per_dim.pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let p: Vec<f64> = (0..dim)
                    .map(|_| {
                        let i = rem % grid_per_dim;
                        rem /= grid_per_dim;
                        if grid_per_dim > 1 { -radius + step * i as f64 } else { 0.0 }
                    })
                    .collect();
                if norm(&p) <= radius * (1.0 + 1e-12) {
                    push(p, &mut points);
                }
            }
        }
        let mut accepted = 0;
        let mut index = 0u64;
        while accepted < fill {
            let u = rng::rotated_halton(index, dim, seed);
            index += 1;
            let p: Vec<f64> = u.iter().map(|c| radius * (2.0 * c - 1.0)).collect();
            if norm(&p) <= radius {
                let before = points.len();
                push(p, &mut points);
                if points.len() > before {
                    accepted += 1;
                }
            }
        }
        Self::new(dim, points, radius)
    }

    /// Radius 2 with a 41^d grid and 256 quasi-random points for `d ≤ 2`;
    /// radius 1.5 with a 21^3 grid for `d = 3`.
    pub fn default_for(dim: usize, seed: u64) -> Result<Self> {
        match dim {
            1 | 2 => Self::build(dim, 2.0, 41, 256, seed),
            3 => Self::build(dim, 1.5, 21, 0, seed),
            _ => Err(argument(format!("no default plan for dimension {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains_ball_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim && norm(x) <= self.radius * (1.0 + 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanTail {
    pub radius: f64,
    /// `sup_plan |seq[n] − limit|` for each `n`.
    pub errors: Vec<f64>,
    /// `max_{m ≥ n} errors[m]`.
    pub tail: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedConvergence {
    pub sup_bound: f64,
    pub per_plan: Vec<PlanTail>,
    pub convergent: bool,
}

/// Sequential test for convergence in the mixed topology: uniform
/// boundedness plus uniform convergence on each plan ball.
pub fn mixed_convergence_probe(
    seq: &[LatticeFunction],
    limit: &LatticeFunction,
    plans: &[SamplePlan],
    tol: f64,
) -> Result<MixedConvergence> {
    if seq.is_empty() {
        return Err(argument("empty sequence"));
    }
    if plans.is_empty() {
        return Err(argument("no plans supplied"));
    }
    for f in seq {
        check_dim(f.dim, limit.dim)?;
    }
    if plans.windows(2).any(|w| w[1].radius <= w[0].radius) {
        return Err(argument("plans must have strictly increasing radii"));
    }
    let sup_bound = seq.iter().fold(0.0f64, |m, f| m.max(f.bound));
    let mut per_plan = Vec::with_capacity(plans.len());
    for plan in plans {
        let lim = limit.eval_plan(plan)?;
        let errors = seq
            .iter()
            .map(|f| Ok(max_abs_diff(&f.eval_plan(plan)?, &lim)))
            .collect::<Result<Vec<_>>>()?;
        let mut tail = errors.clone();
        for i in (0..tail.len().saturating_sub(1)).rev() {
            tail[i] = tail[i].max(tail[i + 1]);
        }
        per_plan.push(PlanTail { radius: plan.radius, errors, tail });
    }
    let convergent = sup_bound.is_finite()
        && per_plan.iter().all(|p| *p.tail.last().expect("nonempty") <= tol);
    Ok(MixedConvergence { sup_bound, per_plan, convergent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f1(bound: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> LatticeFunction {
        LatticeFunction::new(1, bound, None, move |x| f(x[0])).unwrap()
    }

    fn plan1() -> SamplePlan {
        SamplePlan::default_for(1, 7).unwrap()
    }

    #[test]
    fn join_of_opposite_constants() {
        let u = LatticeFunction::constant(1, -3.0);
        let v = LatticeFunction::constant(1, 3.0);
        let w = lattice_join(&u, &v).unwrap();
        for p in plan1().points() {
            assert_eq!(w.eval(p), 3.0);
        }
        assert_eq!(w.bound(), 3.0);
    }

    #[test]
    fn join_of_identity_and_negation_is_abs() {
        let u = f1(2.0, |x| x);
        let v = f1(2.0, |x| -x);
        let w = lattice_join(&u, &v).unwrap();
        for p in plan1().points() {
            assert_eq!(w.eval(p), p[0].abs());
        }
    }

    #[test]
    fn join_matches_pointwise_max_on_random_bumps() {
        let u = f1(1.0, |x| (-(x - 0.3) * (x - 0.3)).exp());
        let v = f1(0.8, |x| 0.8 * (-(x + 0.5) * (x + 0.5) / 0.3).exp());
        let w = lattice_join(&u, &v).unwrap();
        let plan = SamplePlan::build(1, 2.0, 0, 1000, 3).unwrap();
        for p in plan.points() {
            assert_eq!(w.eval(p), u.eval(p).max(v.eval(p)));
        }
        assert_eq!(w.bound(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let u = LatticeFunction::zero(1);
        let v = LatticeFunction::zero(2);
        assert!(matches!(lattice_join(&u, &v), Err(crate::Error::Argument(_))));
        assert!(lattice_meet(&u, &v).is_err());
        assert!(affine_combine(0.5, &u, &v).is_err());
        assert!(sup_seminorm(&v, &plan1()).is_err());
    }

    #[test]
    fn affine_endpoints_and_range() {
        let u = f1(1.0, |x| x.sin());
        let v = f1(1.0, |x| x.cos());
        let plan = plan1();
        let at0 = affine_combine(0.0, &u, &v).unwrap();
        let at1 = affine_combine(1.0, &u, &v).unwrap();
        for p in plan.points() {
            assert_eq!(at0.eval(p), v.eval(p));
            assert_eq!(at1.eval(p), u.eval(p));
        }
        assert!(affine_combine(-0.1, &u, &v).is_err());
        assert!(affine_combine(1.5, &u, &v).is_err());
    }

    #[test]
    fn abs_of_sine() {
        let u = f1(1.0, |x| x.sin());
        let a = lattice_abs(&u);
        for p in plan1().points() {
            assert_eq!(a.eval(p), p[0].sin().abs());
        }
    }

    #[test]
    fn seminorm_elementary_values() {
        let plan = plan1();
        assert_eq!(sup_seminorm(&LatticeFunction::zero(1), &plan).unwrap(), 0.0);
        assert_eq!(sup_seminorm(&LatticeFunction::constant(1, -2.5), &plan).unwrap(), 2.5);
    }

    #[test]
    fn seminorm_of_gaussian_on_fine_grid() {
        let plan = SamplePlan::build(1, 2.0, 401, 0, 0).unwrap();
        let u = f1(1.0, |x| (-x * x).exp());
        let s = sup_seminorm(&u, &plan).unwrap();
        assert!((s - 1.0).abs() < 1e-4);
    }

    #[test]
    #[should_panic(expected = "exceeds certified bound")]
    fn bound_is_asserted_on_evaluation() {
        let u = f1(0.5, |x| x);
        u.eval(&[1.0]);
    }

    #[test]
    fn lipschitz_spot_check() {
        let plan = plan1();
        let good = LatticeFunction::new(1, 1.0, Some(1.0), |x| x[0].sin()).unwrap();
        good.check_lipschitz(&plan, 200, 1).unwrap();
        let bad = LatticeFunction::new(1, 1.0, Some(0.1), |x| x[0].sin()).unwrap();
        assert!(bad.check_lipschitz(&plan, 200, 1).is_err());
    }

    #[test]
    fn default_plans_have_expected_shape() {
        let p1 = SamplePlan::default_for(1, 0).unwrap();
        assert_eq!(p1.len(), 41 + 256);
        let p2 = SamplePlan::default_for(2, 0).unwrap();
        assert!(p2.len() > 256 && p2.points().iter().all(|p| norm(p) <= 2.0 + 1e-12));
        let p3 = SamplePlan::default_for(3, 0).unwrap();
        assert!((p3.radius() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn plan_rejects_duplicates_and_outside_points() {
        assert!(SamplePlan::new(1, vec![vec![0.0], vec![0.0]], 1.0).is_err());
        assert!(SamplePlan::new(1, vec![vec![2.0]], 1.0).is_err());
        assert!(SamplePlan::new(1, vec![], 1.0).is_err());
    }

    #[test]
    fn plan_is_deterministic_given_seed() {
        let a = SamplePlan::default_for(2, 11).unwrap();
        let b = SamplePlan::default_for(2, 11).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn mixed_probe_constant_sequence() {
        let lim = f1(1.0, |x| x.cos());
        let seq = vec![lim.clone(); 5];
        let plans = [SamplePlan::build(1, 1.0, 21, 0, 0).unwrap(), plan1()];
        let r = mixed_convergence_probe(&seq, &lim, &plans, 1e-12).unwrap();
        assert!(r.convergent);
        assert!(r.per_plan.iter().all(|p| p.tail.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn mixed_probe_explicit_rate() {
        let lim = f1(1.0, |x| x.cos());
        let seq: Vec<_> = (1..=200).map(|n| lim.shift(1.0 / n as f64)).collect();
        let r = mixed_convergence_probe(&seq, &lim, &[plan1()], 1e-2).unwrap();
        assert!(r.convergent);
        for (n, e) in r.per_plan[0].tail.iter().enumerate() {
            assert!((e - 1.0 / (n + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_probe_oscillating_decay() {
        let lim = LatticeFunction::zero(1);
        let seq: Vec<_> = (1..=500)
            .map(|n| {
                let k = n as f64;
                f1(1.0 / k, move |x| (k * x).sin() / k)
            })
            .collect();
        let r = mixed_convergence_probe(&seq, &lim, &[plan1()], 1e-2).unwrap();
        assert!(r.convergent);
        assert!(r.per_plan[0].errors.iter().enumerate().all(|(n, &e)| e <= 1.0 / (n + 1) as f64));
    }

    #[test]
    fn mixed_probe_flags_nonconvergence_and_empty() {
        let lim = LatticeFunction::zero(1);
        let seq = vec![LatticeFunction::constant(1, 1.0); 3];
        assert!(!mixed_convergence_probe(&seq, &lim, &[plan1()], 1e-2).unwrap().convergent);
        assert!(mixed_convergence_probe(&[], &lim, &[plan1()], 1e-2).is_err());
    }
}
