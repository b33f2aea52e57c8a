//! Time-grid dynamic programming for the two controlled families.
//!
//! Intermediate value functions live on a [`StateGrid`]. One Bellman step of
//! size `h` first averages the current values against a sampled kernel
//! (`G = mean_j V(· + ξ_j)`) and then optimizes over the finite control set:
//!
//! * Lévy drift control: `V'(x) = max_a G(x + a h) − h c(a)`, with `ξ` the
//!   increments of `L` over `h`.
//! * Robust OU: `V'(x) = agg_σ max_a G_σ(e^{hA}(x + h b(x, a)))` with
//!   `ξ = e^{hA} σ ΔB` and `agg = min` for the value family `S`, `max` for the
//!   upper family `K`.
//!
//! Kernels depend only on `(h, step, stream)`, so every evaluation with the
//! same time grid and stream shares its random numbers. The last step is
//! evaluated lazily at arbitrary points, and `t = 0` returns the input.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::RunningCost;
use crate::dynamics::{standard_normals, LevyTriplet, OUModel};
use crate::error::{argument, config, Result};
use crate::grid::{Kernel, StateGrid};
use crate::lattice::{check_dim, norm, Evaluator, LatticeFunction, SamplePlan};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MCConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub crn: bool,
    /// Number of Bellman steps per evaluation.
    pub steps: usize,
    pub stream_id: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, seed: 0, crn: true, steps: 64, stream_id: 0 }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(config(format!("n_paths must be at least 100, got {}", self.n_paths)));
        }
        if self.steps == 0 {
            return Err(config("steps must be at least 1"));
        }
        Ok(())
    }
}

/// Extent and spacing of the internal state grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub dx: f64,
}

impl GridConfig {
    pub fn default_for(dim: usize) -> Self {
        match dim {
            1 => Self { half_width: 6.0, dx: 0.0025 },
            2 => Self { half_width: 6.0, dx: 0.1 },
            _ => Self { half_width: 4.5, dx: 0.3 },
        }
    }
}

/// Symmetric grid of `per_dim` points per axis on `[−radius, radius]^dim`
/// intersected with the ball of that radius.
pub fn action_grid(dim: usize, radius: f64, per_dim: usize) -> Vec<Vec<f64>> {
    let per_dim = if per_dim % 2 == 0 { per_dim + 1 } else { per_dim.max(1) };
    let half = (per_dim / 2) as i64;
    let step = if half == 0 { 0.0 } else { radius / half as f64 };
    let total = per_dim.pow(dim as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let a: Vec<f64> = (0..dim)
            .map(|_| {
                let i = (rem % per_dim) as i64 - half;
                rem /= per_dim;
                i as f64 * step
            })
            .collect();
        if norm(&a) <= radius * (1.0 + 1e-12) {
            out.push(a);
        }
    }
    out
}

pub fn default_action_points(dim: usize) -> usize {
    if dim == 1 {
        33
    } else {
        9
    }
}

#[derive(Clone, Debug)]
pub struct LevyControlProblem {
    triplet: LevyTriplet,
    cost: RunningCost,
    action_grid: Vec<Vec<f64>>,
    control_bound: f64,
}

impl LevyControlProblem {
    /// Action grid from the control bound for terminal values with Lipschitz constant `lip_u`.
    pub fn new(triplet: LevyTriplet, cost: RunningCost, lip_u: f64) -> Result<Self> {
        let points = default_action_points(triplet.dim());
        Self::with_points(triplet, cost, lip_u, points)
    }

    pub fn with_points(triplet: LevyTriplet, cost: RunningCost, lip_u: f64, per_dim: usize) -> Result<Self> {
        check_dim(triplet.dim(), cost.dim())?;
        let m1 = cost.t_optimal_control_bound(lip_u)?;
        let grid = action_grid(triplet.dim(), m1, per_dim);
        Self::with_actions(triplet, cost, grid, lip_u)
    }

    pub fn with_actions(triplet: LevyTriplet, cost: RunningCost, actions: Vec<Vec<f64>>, lip_u: f64) -> Result<Self> {
        check_dim(triplet.dim(), cost.dim())?;
        if actions.is_empty() {
            return Err(config("action grid is empty"));
        }
        let m1 = cost.t_optimal_control_bound(lip_u)?;
        for a in &actions {
            check_dim(triplet.dim(), a.len())?;
            if norm(a) > m1 * (1.0 + 1e-12) {
                return Err(config(format!("action {a:?} lies outside the control bound {m1}")));
            }
        }
        if !actions.iter().any(|a| a.iter().all(|&v| v == 0.0)) {
            return Err(config("action grid must contain 0"));
        }
        Ok(Self { triplet, cost, action_grid: actions, control_bound: m1 })
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn cost(&self) -> &RunningCost {
        &self.cost
    }

    pub fn action_grid(&self) -> &[Vec<f64>] {
        &self.action_grid
    }

    pub fn control_bound(&self) -> f64 {
        self.control_bound
    }
}

#[derive(Clone, Debug)]
pub struct RobustOUProblem {
    pub model: OUModel,
}

impl RobustOUProblem {
    pub fn new(model: OUModel) -> Self {
        Self { model }
    }
}

#[derive(Clone, Debug)]
pub enum Instance {
    Levy(LevyControlProblem),
    Ou(RobustOUProblem),
}

impl Instance {
    pub fn dim(&self) -> usize {
        match self {
            Instance::Levy(p) => p.triplet.dim(),
            Instance::Ou(p) => p.model.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Instance::Levy(_) => "levy",
            Instance::Ou(_) => "ou",
        }
    }
}

/// Which operator family to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// The semigroup `S`.
    S,
    /// The upper family `K` (equal to `S` for the Lévy example).
    K,
}

/// Operator evaluation of one instance on a fixed state grid, with kernels
/// cached per `(h, step, stream)`.
pub struct Propagator {
    instance: Arc<Instance>,
    grid: StateGrid,
    nodes: Arc<Vec<f64>>,
    mc: MCConfig,
    cache: Mutex<HashMap<(u64, u64, u64), Arc<Vec<Kernel>>>>,
}

/// Everything needed to take one Bellman step from kernel-averaged values.
#[derive(Clone)]
struct StepRule {
    instance: Arc<Instance>,
    grid: StateGrid,
    family: Family,
    h: f64,
    /// `e^{hA}` for the OU example.
    prop: Option<DMatrix<f64>>,
    /// `h c(a)` per action for the Lévy example.
    costs: Vec<f64>,
}

impl StepRule {
    fn eval(&self, gs: &[Vec<f64>], x: &[f64]) -> f64 {
        let d = x.len();
        match self.instance.as_ref() {
            Instance::Levy(p) => {
                let g = &gs[0];
                let mut y = vec![0.0; d];
                let mut best = f64::NEG_INFINITY;
                for (a, c) in p.action_grid.iter().zip(&self.costs) {
                    for i in 0..d {
                        y[i] = x[i] + a[i] * self.h;
                    }
                    best = best.max(self.grid.interp(g, &y) - c);
                }
                best
            }
            Instance::Ou(p) => {
                let e = self.prop.as_ref().expect("propagator matrix");
                let targets: Vec<Vec<f64>> = p
                    .model
                    .actions()
                    .iter()
                    .map(|a| {
                        let b = p.model.drift(x, a);
                        let inner = DVector::from_iterator(d, (0..d).map(|i| x[i] + self.h * b[i]));
                        (e * inner).as_slice().to_vec()
                    })
                    .collect();
                let mut agg = match self.family {
                    Family::S => f64::INFINITY,
                    Family::K => f64::NEG_INFINITY,
                };
                for g in gs {
                    let inner = targets.iter().map(|y| self.grid.interp(g, y)).fold(f64::NEG_INFINITY, f64::max);
                    agg = match self.family {
                        Family::S => agg.min(inner),
                        Family::K => agg.max(inner),
                    };
                }
                agg
            }
        }
    }
}

impl Propagator {
    pub fn new(instance: Instance, mc: MCConfig, grid: &GridConfig) -> Result<Self> {
        mc.validate()?;
        let grid = StateGrid::new(instance.dim(), grid.half_width, grid.dx)?;
        let nodes = Arc::new(grid.nodes());
        Ok(Self { instance: Arc::new(instance), grid, nodes, mc, cache: Mutex::new(HashMap::new()) })
    }

    pub fn with_default_grid(instance: Instance, mc: MCConfig) -> Result<Self> {
        let g = GridConfig::default_for(instance.dim());
        Self::new(instance, mc, &g)
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn mc(&self) -> &MCConfig {
        &self.mc
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Same instance and grid with a different Monte Carlo configuration.
    pub fn with_mc(&self, mc: MCConfig) -> Result<Self> {
        mc.validate()?;
        Ok(Self {
            instance: self.instance.clone(),
            grid: self.grid.clone(),
            nodes: self.nodes.clone(),
            mc,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("kernel cache").clear();
    }

    fn rule(&self, family: Family, h: f64) -> StepRule {
        let (prop, costs) = match self.instance.as_ref() {
            Instance::Levy(p) => (None, p.action_grid.iter().map(|a| h * p.cost.eval(a)).collect()),
            Instance::Ou(p) => (Some(p.model.transition_matrix(h)), Vec::new()),
        };
        StepRule { instance: self.instance.clone(), grid: self.grid.clone(), family, h, prop, costs }
    }

    fn build_kernels(&self, h: f64, step: u64, stream: u64) -> Vec<Kernel> {
        let n = self.mc.n_paths;
        let seed = self.mc.seed;
        let d = self.dim();
        match self.instance.as_ref() {
            Instance::Levy(p) => {
                let samples = p.triplet.sample_increments(h, n, seed, stream, step);
                vec![Kernel::from_samples(&self.grid, &samples)]
            }
            Instance::Ou(p) => {
                let z = standard_normals(d, n, seed, stream, step);
                let e = p.model.transition_matrix(h);
                p.model
                    .sigma()
                    .iter()
                    .map(|s| {
                        let m = &e * s * p.model.q_factor() * h.sqrt();
                        let mut xi = vec![0.0; n * d];
                        for (out, zj) in xi.chunks_mut(d).zip(z.chunks(d)) {
                            for i in 0..d {
                                out[i] = (0..d).map(|k| m[(i, k)] * zj[k]).sum();
                            }
                        }
                        Kernel::from_samples(&self.grid, &xi)
                    })
                    .collect()
            }
        }
    }

    fn kernels(&self, h: f64, step: u64, stream: u64, values: &[f64]) -> Arc<Vec<Kernel>> {
        if !self.mc.crn {
            let keyed = rng::mix(&[stream, rng::hash_f64s(values)]);
            return Arc::new(self.build_kernels(h, step, keyed));
        }
        let key = (h.to_bits(), step, stream);
        if let Some(k) = self.cache.lock().expect("kernel cache").get(&key) {
            return k.clone();
        }
        let built = Arc::new(self.build_kernels(h, step, stream));
        self.cache.lock().expect("kernel cache").insert(key, built.clone());
        built
    }

    fn averaged(&self, h: f64, step: u64, stream: u64, values: &[f64]) -> Vec<Vec<f64>> {
        self.kernels(h, step, stream, values).iter().map(|k| k.apply(&self.grid, values)).collect()
    }

    fn step_nodes(&self, rule: &StepRule, step: u64, stream: u64, values: &[f64]) -> Vec<f64> {
        let gs = self.averaged(rule.h, step, stream, values);
        let d = self.dim();
        self.nodes.par_chunks(d).map(|x| rule.eval(&gs, x)).collect()
    }

    fn initial_values(&self, u: &LatticeFunction) -> Vec<f64> {
        let d = self.dim();
        self.nodes.par_chunks(d).map(|x| u.eval(x)).collect()
    }

    fn output_lipschitz(&self, u: &LatticeFunction) -> Option<f64> {
        match self.instance.as_ref() {
            Instance::Levy(_) => u.lipschitz().map(|l| l * (self.dim() as f64).sqrt()),
            Instance::Ou(_) => None,
        }
    }

    /// `family(t) u` using the configured stream.
    pub fn apply(&self, family: Family, t: f64, u: &LatticeFunction) -> Result<LatticeFunction> {
        self.apply_in_stream(family, t, u, self.mc.stream_id)
    }

    /// `family(t) u` with random numbers drawn from `stream`.
    pub fn apply_in_stream(&self, family: Family, t: f64, u: &LatticeFunction, stream: u64) -> Result<LatticeFunction> {
        self.apply_steps(family, t, u, stream, self.mc.steps)
    }

    /// `family(t) u` with an explicit number of Bellman steps.
    pub fn apply_steps(
        &self,
        family: Family,
        t: f64,
        u: &LatticeFunction,
        stream: u64,
        steps: usize,
    ) -> Result<LatticeFunction> {
        check_dim(self.dim(), u.dim())?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(argument(format!("t must be finite and nonnegative, got {t}")));
        }
        if steps == 0 {
            return Err(config("steps must be at least 1"));
        }
        if t == 0.0 {
            return Ok(u.clone());
        }
        let h = t / steps as f64;
        let rule = self.rule(family, h);
        let mut v = self.initial_values(u);
        for k in 0..steps - 1 {
            v = self.step_nodes(&rule, k as u64, stream, &v);
        }
        let gs = Arc::new(self.averaged(h, (steps - 1) as u64, stream, &v));
        let eval: Arc<Evaluator> = Arc::new(move |x: &[f64]| rule.eval(&gs, x));
        Ok(LatticeFunction::from_parts(self.dim(), u.bound(), self.output_lipschitz(u), eval))
    }

    /// Node values of `family(k h) u` for `k = 0..=steps` with `h = t / steps`.
    pub fn trajectory(&self, family: Family, t: f64, u: &LatticeFunction) -> Result<Trajectory> {
        check_dim(self.dim(), u.dim())?;
        if !(t > 0.0) {
            return Err(argument("trajectory horizon must be positive"));
        }
        let m = self.mc.steps;
        let h = t / m as f64;
        let rule = self.rule(family, h);
        let mut values = vec![Arc::new(self.initial_values(u))];
        for k in 0..m {
            let next = self.step_nodes(&rule, k as u64, self.mc.stream_id, values.last().expect("nonempty"));
            values.push(Arc::new(next));
        }
        let times = (0..=m).map(|k| k as f64 * h).collect();
        Ok(Trajectory { grid: self.grid.clone(), times, values, bound: u.bound() })
    }
}

/// Value functions on the state grid along a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: StateGrid,
    times: Vec<f64>,
    values: Vec<Arc<Vec<f64>>>,
    bound: f64,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn eval(&self, k: usize, x: &[f64]) -> f64 {
        self.grid.interp(&self.values[k], x)
    }

    /// Interpolant of the value at time index `k`.
    pub fn at(&self, k: usize) -> LatticeFunction {
        let (grid, vals) = (self.grid.clone(), self.values[k].clone());
        let eval: Arc<Evaluator> = Arc::new(move |x: &[f64]| grid.interp(&vals, x));
        LatticeFunction::from_parts(self.grid.dim(), self.bound, None, eval)
    }

    /// Time index closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let h = self.times[1] - self.times[0];
        ((t / h).round().max(0.0) as usize).min(self.times.len() - 1)
    }
}

pub fn bellman_step_levy(u: &LatticeFunction, h: f64, prob: &LevyControlProblem, mc: &MCConfig) -> Result<LatticeFunction> {
    if !(h > 0.0) {
        return Err(argument("step size must be positive"));
    }
    let p = Propagator::with_default_grid(Instance::Levy(prob.clone()), MCConfig { steps: 1, ..mc.clone() })?;
    p.apply(Family::S, h, u)
}

pub fn s_levy(t: f64, u: &LatticeFunction, prob: &LevyControlProblem, mc: &MCConfig) -> Result<LatticeFunction> {
    Propagator::with_default_grid(Instance::Levy(prob.clone()), mc.clone())?.apply(Family::S, t, u)
}

pub fn bellman_step_ou(
    u: &LatticeFunction,
    h: f64,
    prob: &RobustOUProblem,
    mc: &MCConfig,
    family: Family,
) -> Result<LatticeFunction> {
    if !(h > 0.0) {
        return Err(argument("step size must be positive"));
    }
    let p = Propagator::with_default_grid(Instance::Ou(prob.clone()), MCConfig { steps: 1, ..mc.clone() })?;
    p.apply(family, h, u)
}

pub fn s_ou(t: f64, u: &LatticeFunction, prob: &RobustOUProblem, mc: &MCConfig) -> Result<LatticeFunction> {
    Propagator::with_default_grid(Instance::Ou(prob.clone()), mc.clone())?.apply(Family::S, t, u)
}

pub fn k_ou(t: f64, u: &LatticeFunction, prob: &RobustOUProblem, mc: &MCConfig) -> Result<LatticeFunction> {
    Propagator::with_default_grid(Instance::Ou(prob.clone()), mc.clone())?.apply(Family::K, t, u)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RightContinuityDiagnostic {
    pub family: Family,
    pub t_seq: Vec<f64>,
    /// `sup_plan |family(t_n) u_n − u_limit|`.
    pub errors: Vec<f64>,
    /// Whether the errors never increase by more than the noise floor.
    pub monotone: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Errors `sup_plan |family(t_n) u_n − u_limit|` along `t_n ↓ 0`.
pub fn right_continuity_probe(
    prop: &Propagator,
    family: Family,
    t_seq: &[f64],
    u_seq: &[LatticeFunction],
    u_limit: &LatticeFunction,
    plan: &SamplePlan,
    tolerance: f64,
    floor: f64,
) -> Result<RightContinuityDiagnostic> {
    if t_seq.len() != u_seq.len() {
        return Err(argument(format!("{} times but {} functions", t_seq.len(), u_seq.len())));
    }
    if t_seq.is_empty() {
        return Err(argument("empty time sequence"));
    }
    if t_seq.iter().any(|&t| !(t > 0.0)) || t_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(argument("t_seq must be positive and strictly decreasing"));
    }
    let limit = u_limit.eval_plan(plan)?;
    let mut errors = Vec::with_capacity(t_seq.len());
    for (t, u) in t_seq.iter().zip(u_seq) {
        let out = prop.apply(family, *t, u)?.eval_plan(plan)?;
        errors.push(crate::lattice::max_abs_diff(&out, &limit));
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] + floor);
    let last = *errors.last().expect("nonempty");
    Ok(RightContinuityDiagnostic {
        family,
        t_seq: t_seq.to_vec(),
        errors,
        monotone,
        tolerance,
        pass: monotone && last <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::JumpLaw;
    use crate::error::Error;

    fn quad_problem(triplet: LevyTriplet, lip: f64) -> LevyControlProblem {
        LevyControlProblem::new(triplet, RunningCost::quadratic(1, 1.0).unwrap(), lip).unwrap()
    }

    fn small_mc() -> MCConfig {
        MCConfig { n_paths: 4000, steps: 8, ..MCConfig::default() }
    }

    fn plan1() -> SamplePlan {
        SamplePlan::build(1, 2.0, 41, 0, 0).unwrap()
    }

    fn bump(c: f64) -> LatticeFunction {
        LatticeFunction::new(1, 1.0, Some(1.0), move |x| (-(x[0] - c).powi(2)).exp()).unwrap()
    }

    #[test]
    fn action_grid_contains_zero_and_respects_ball() {
        let g = action_grid(1, 1.5, 33);
        assert_eq!(g.len(), 33);
        assert!(g.iter().any(|a| a[0] == 0.0));
        let g2 = action_grid(2, 1.0, 9);
        assert!(g2.iter().all(|a| norm(a) <= 1.0 + 1e-12));
        assert!(g2.iter().any(|a| a == &vec![0.0, 0.0]));
    }

    #[test]
    fn empty_or_zero_free_action_grids_are_rejected() {
        let tr = LevyTriplet::zero(1);
        let c = RunningCost::quadratic(1, 1.0).unwrap();
        assert!(matches!(LevyControlProblem::with_actions(tr.clone(), c.clone(), vec![], 0.0), Err(Error::Configuration(_))));
        assert!(matches!(LevyControlProblem::with_actions(tr, c, vec![vec![0.5]], 0.0), Err(Error::Configuration(_))));
    }

    #[test]
    fn constants_are_fixed_points() {
        let tr = LevyTriplet::new(
            vec![0.2],
            DMatrix::from_element(1, 1, 0.5),
            1.0,
            Some(JumpLaw::Gaussian { mean: vec![0.3], std: 0.4 }),
        )
        .unwrap();
        let prob = quad_problem(tr, 0.0);
        let k = LatticeFunction::constant(1, 1.7);
        let out = s_levy(0.5, &k, &prob, &small_mc()).unwrap();
        for x in [-1.9, 0.0, 1.3] {
            assert!((out.eval(&[x]) - 1.7).abs() < 1e-12);
        }
        let one_step = bellman_step_levy(&k, 0.3, &prob, &small_mc()).unwrap();
        assert!((one_step.eval(&[0.4]) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let prob = quad_problem(LevyTriplet::brownian(1, 1.0), 1.0);
        let u = bump(0.2);
        let out = s_levy(0.0, &u, &prob, &small_mc()).unwrap();
        assert_eq!(out.eval(&[0.37]), u.eval(&[0.37]));
    }

    #[test]
    fn zero_noise_single_step_at_kink() {
        let prob = quad_problem(LevyTriplet::zero(1), 1.0);
        let u = LatticeFunction::new(1, 8.0, Some(1.0), |x| -x[0].abs().min(8.0)).unwrap();
        let out = bellman_step_levy(&u, 1.0, &prob, &small_mc()).unwrap();
        assert!(out.eval(&[0.0]).abs() < 1e-12);
    }

    #[test]
    fn tiny_step_is_close_to_identity() {
        let prob = quad_problem(LevyTriplet::brownian(1, 1.0), 1.0);
        let u = bump(0.0);
        let out = bellman_step_levy(&u, 1e-6, &prob, &small_mc()).unwrap();
        let plan = plan1();
        let diff = crate::lattice::sup_distance(&out, &u, &plan).unwrap();
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn levy_monotone_under_crn() {
        let prob = quad_problem(LevyTriplet::brownian(1, 0.8), 1.0);
        let p = Propagator::with_default_grid(Instance::Levy(prob), small_mc()).unwrap();
        let u = bump(0.0);
        let v = LatticeFunction::new(1, 1.5, Some(2.0), |x| (-x[0] * x[0]).exp() + 0.5 * (-(x[0] - 1.0).powi(2)).exp())
            .unwrap();
        let su = p.apply(Family::S, 0.5, &u).unwrap().eval_plan(&plan1()).unwrap();
        let sv = p.apply(Family::S, 0.5, &v).unwrap().eval_plan(&plan1()).unwrap();
        assert!(su.iter().zip(&sv).all(|(a, b)| a <= &(b + 1e-12)));
    }

    fn ou_problem(sigma: Vec<f64>, actions: Vec<f64>, a: f64) -> RobustOUProblem {
        let model = OUModel::new(
            DMatrix::from_element(1, 1, a),
            |_x, a| a.to_vec(),
            actions.into_iter().map(|v| vec![v]).collect(),
            1.0,
            sigma.into_iter().map(|s| DMatrix::from_element(1, 1, s)).collect(),
            DMatrix::from_element(1, 1, 1.0),
            2.0,
        )
        .unwrap();
        RobustOUProblem::new(model)
    }

    #[test]
    fn ou_singleton_sigma_modes_coincide() {
        let prob = ou_problem(vec![0.7], vec![-1.0, 1.0], -1.0);
        let u = bump(0.3);
        let s = s_ou(0.5, &u, &prob, &small_mc()).unwrap();
        let k = k_ou(0.5, &u, &prob, &small_mc()).unwrap();
        for x in [-1.0, 0.0, 0.8] {
            assert_eq!(s.eval(&[x]), k.eval(&[x]));
        }
    }

    #[test]
    fn ou_value_below_upper() {
        let prob = ou_problem(vec![0.5, 1.0], vec![-1.0, 1.0], 0.0);
        let u = bump(0.0);
        let p = Propagator::with_default_grid(Instance::Ou(prob), small_mc()).unwrap();
        let s = p.apply(Family::S, 0.5, &u).unwrap().eval_plan(&plan1()).unwrap();
        let k = p.apply(Family::K, 0.5, &u).unwrap().eval_plan(&plan1()).unwrap();
        assert!(s.iter().zip(&k).all(|(a, b)| a <= b));
        assert!(s.iter().zip(&k).any(|(a, b)| a < b));
    }

    #[test]
    fn ou_linear_case_matches_gaussian_moments() {
        // A = −1, σ = 1, Q = 1, no control: X_t ~ N(x e^{−t}, (1 − e^{−2t})/2),
        // so E exp(−X_t²) has a closed form.
        let prob = ou_problem(vec![1.0], vec![0.0], -1.0);
        let mc = MCConfig { n_paths: 100_000, steps: 32, ..MCConfig::default() };
        let t = 0.5;
        let out = s_ou(t, &bump(0.0), &prob, &mc).unwrap();
        let m_s = 1.0f64 - (-2.0 * t).exp();
        for x in [0.0, 0.7, -1.2] {
            let mean = x * (-t).exp();
            let var = 0.5 * m_s;
            let exact = (-(mean * mean) / (1.0 + 2.0 * var)).exp() / (1.0 + 2.0 * var).sqrt();
            let got = out.eval(&[x]);
            assert!((got - exact).abs() < 1e-2, "x={x}: {got} vs {exact}");
        }
    }

    #[test]
    fn right_continuity_probe_argument_errors() {
        let prob = quad_problem(LevyTriplet::brownian(1, 1.0), 1.0);
        let p = Propagator::with_default_grid(Instance::Levy(prob), small_mc()).unwrap();
        let u = bump(0.0);
        let plan = plan1();
        let r = right_continuity_probe(&p, Family::S, &[0.5, 0.25], &[u.clone()], &u, &plan, 1e-2, 1e-3);
        assert!(matches!(r, Err(Error::Argument(_))));
        let r = right_continuity_probe(&p, Family::S, &[0.25, 0.5], &[u.clone(), u.clone()], &u, &plan, 1e-2, 1e-3);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn right_continuity_constant_sequence() {
        let prob = quad_problem(LevyTriplet::brownian(1, 1.0), 1.0);
        let p = Propagator::with_default_grid(Instance::Levy(prob), small_mc()).unwrap();
        let u = bump(0.0);
        let ts: Vec<f64> = (1..=6).map(|n| 0.5f64.powi(n)).collect();
        let us = vec![u.clone(); ts.len()];
        let diag = right_continuity_probe(&p, Family::S, &ts, &us, &u, &plan1(), 5e-2, 1e-3).unwrap();
        assert!(diag.pass, "{:?}", diag.errors);
    }
}
