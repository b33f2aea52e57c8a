//! Viscosity checks with Dirac test functionals.
//!
//! A candidate solution `u(t) = S(t)u₀` is stored on a uniform time grid.
//! Test functions are local space-time quadratic envelopes of `u` at a point
//! `(t, x)`, pushed above or below `u` by a curvature penalty
//! `±κ((s − t)² + ‖y − x‖²)` until domination holds on a finite cloud. The
//! sub- and supersolution inequalities are then compared against the analytic
//! generator of the envelope.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Family, Instance, MCConfig, Propagator, Trajectory};
use crate::error::{argument, config, Error, Result};
use crate::generator::{hjb_generator_levy, isaacs_generator_ou_family, SmoothTestField};
use crate::lattice::{check_dim, norm, LatticeFunction, SamplePlan};
use crate::rng;

/// Evaluation at a point, `μu = u(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiracFunctional {
    pub x: Vec<f64>,
}

impl DiracFunctional {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(argument("Dirac barycenter must be finite and nonempty"));
        }
        Ok(Self { x })
    }
}

type PathEval = dyn Fn(usize, &[f64]) -> f64 + Send + Sync;

/// `u(s, y)` on the uniform time grid `s_k = k Δt`.
#[derive(Clone)]
pub struct ValuePath {
    dim: usize,
    times: Vec<f64>,
    eval: Arc<PathEval>,
}

impl std::fmt::Debug for ValuePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValuePath").field("dim", &self.dim).field("steps", &(self.times.len() - 1)).finish()
    }
}

impl ValuePath {
    /// Closed-form path sampled at `k · horizon / steps`.
    pub fn from_fn<F>(dim: usize, horizon: f64, steps: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(horizon > 0.0) || steps < 2 {
            return Err(argument("path needs a positive horizon and at least two steps"));
        }
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * horizon / steps as f64).collect();
        let ts = times.clone();
        Ok(Self { dim, times, eval: Arc::new(move |k, x| f(ts[k], x)) })
    }

    pub fn from_trajectory(tr: Trajectory, dim: usize) -> Self {
        let times = tr.times().to_vec();
        Self { dim, times, eval: Arc::new(move |k, x| tr.eval(k, x)) }
    }

    /// `2 u_fine − u_coarse` on the coarse time grid, removing the first-order
    /// time-stepping bias. `fine` must use twice as many steps.
    pub fn richardson(coarse: Trajectory, fine: Trajectory, dim: usize) -> Result<Self> {
        if fine.len() != 2 * coarse.len() - 1 {
            return Err(argument("fine trajectory must halve the coarse step"));
        }
        let times = coarse.times().to_vec();
        Ok(Self { dim, times, eval: Arc::new(move |k, x| 2.0 * fine.eval(2 * k, x) - coarse.eval(k, x)) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn value(&self, k: usize, x: &[f64]) -> f64 {
        (self.eval)(k, x)
    }
}

type PhiFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type FieldFn = dyn Fn(f64) -> SmoothTestField + Send + Sync;

/// A differentiable path `s ↦ φ(s)` of smooth test fields.
#[derive(Clone)]
pub struct TestFunctionPath {
    dim: usize,
    phi: Arc<PhiFn>,
    dphi_dt: Arc<PhiFn>,
    space_field: Arc<FieldFn>,
}

impl std::fmt::Debug for TestFunctionPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunctionPath").field("dim", &self.dim).finish()
    }
}

/// Side from which a test function touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Above => 1.0,
            Direction::Below => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Above => "above",
            Direction::Below => "below",
        }
    }
}

impl TestFunctionPath {
    pub fn new<P, D, S>(dim: usize, phi: P, dphi_dt: D, space_field: S) -> Self
    where
        P: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> SmoothTestField + Send + Sync + 'static,
    {
        Self { dim, phi: Arc::new(phi), dphi_dt: Arc::new(dphi_dt), space_field: Arc::new(space_field) }
    }

    /// `u + p_t(s − t) + ⟨p, y − x⟩ + ½(y − x)ᵀH(y − x) ± κ((s − t)² + ‖y − x‖²)`.
    #[allow(clippy::too_many_arguments)]
    pub fn envelope(
        t: f64,
        x: Vec<f64>,
        u: f64,
        p_t: f64,
        grad: Vec<f64>,
        hess: DMatrix<f64>,
        kappa: f64,
        direction: Direction,
        radius: f64,
    ) -> Self {
        let dim = x.len();
        let k = direction.sign() * kappa;
        let h = (&hess + hess.transpose()) * 0.5 + DMatrix::identity(dim, dim) * (2.0 * k);
        let (x1, g1, h1) = (x.clone(), grad.clone(), h.clone());
        let phi = move |s: f64, y: &[f64]| {
            let z = nalgebra::DVector::from_iterator(dim, y.iter().zip(&x1).map(|(a, b)| a - b));
            let lin: f64 = z.iter().zip(&g1).map(|(a, b)| a * b).sum();
            u + p_t * (s - t) + k * (s - t) * (s - t) + lin + 0.5 * z.dot(&(&h1 * &z))
        };
        let dphi = move |s: f64, _: &[f64]| p_t + 2.0 * k * (s - t);
        let field = move |s: f64| {
            SmoothTestField::quadratic(x.clone(), u + p_t * (s - t) + k * (s - t) * (s - t), grad.clone(), h.clone(), radius)
        };
        Self::new(dim, phi, dphi, field)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, s: f64, y: &[f64]) -> f64 {
        (self.phi)(s, y)
    }

    pub fn dphi_dt(&self, s: f64, y: &[f64]) -> f64 {
        (self.dphi_dt)(s, y)
    }

    pub fn space_field(&self, s: f64) -> SmoothTestField {
        (self.space_field)(s)
    }

    /// Largest relative gap between `dphi_dt` and central time differences.
    pub fn time_derivative_error(&self, samples: &[(f64, Vec<f64>)]) -> f64 {
        let step = 1e-5;
        samples
            .iter()
            .map(|(s, y)| {
                let fd = (self.phi(s + step, y) - self.phi(s - step, y)) / (2.0 * step);
                let an = self.dphi_dt(*s, y);
                (fd - an).abs() / an.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Finite proxy for "all times and states": path time indices and spatial points.
#[derive(Clone, Debug)]
pub struct SpaceTimeCloud {
    pub time_indices: Vec<usize>,
    pub plan: SamplePlan,
}

impl SpaceTimeCloud {
    /// Indices of `[t − window, t + window] ∩ (0, T]` on the path grid.
    pub fn around(path: &ValuePath, k: usize, window: f64, plan: SamplePlan) -> Result<Self> {
        check_dim(path.dim(), plan.dim())?;
        let t = path.times()[k];
        let time_indices: Vec<usize> = (1..path.times().len())
            .filter(|&j| (path.times()[j] - t).abs() <= window + 1e-12)
            .collect();
        Ok(Self { time_indices, plan })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TouchingCertificate {
    pub t: f64,
    pub mu: DiracFunctional,
    pub direction: Direction,
    pub touch_gap: f64,
    /// Worst of `±(φ − u)` over the cloud; negative values are violations.
    pub domination_margin: f64,
}

/// Certify that `phi` touches `u` at `(t_k, mu.x)` from the given side.
pub fn certify_touching(
    u: &ValuePath,
    phi: &TestFunctionPath,
    k: usize,
    mu: &DiracFunctional,
    direction: Direction,
    cloud: &SpaceTimeCloud,
    touch_tolerance: f64,
) -> Result<TouchingCertificate> {
    check_dim(u.dim(), mu.x.len())?;
    check_dim(phi.dim(), mu.x.len())?;
    if k == 0 || k >= u.times().len() {
        return Err(argument("touching time must be a positive grid time"));
    }
    if !cloud.plan.contains_ball_point(&mu.x) {
        return Err(argument(format!("touching point {:?} lies outside the plan ball", mu.x)));
    }
    let t = u.times()[k];
    let gap = (phi.phi(t, &mu.x) - u.value(k, &mu.x)).abs();
    if gap > touch_tolerance {
        return Err(Error::Certification { s: t, y: mu.x.clone(), margin: -gap });
    }
    let sign = direction.sign();
    let mut worst = (f64::INFINITY, t, mu.x.clone());
    for &j in &cloud.time_indices {
        let s = u.times()[j];
        for y in cloud.plan.points() {
            let m = sign * (phi.phi(s, y) - u.value(j, y));
            if m < worst.0 {
                worst = (m, s, y.clone());
            }
        }
    }
    if worst.0 < -touch_tolerance {
        return Err(Error::Certification { s: worst.1, y: worst.2, margin: worst.0 });
    }
    Ok(TouchingCertificate { t, mu: mu.clone(), direction, touch_gap: gap, domination_margin: worst.0 })
}

/// Generator applied to a test field at a point.
pub type GeneratorFn<'a> = dyn Fn(&SmoothTestField, &[f64]) -> Result<f64> + Sync + 'a;

/// Outcome of one viscosity inequality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub direction: Direction,
    /// `φ′(t)(x)`.
    pub lhs: f64,
    /// `Lφ(t)(x)`.
    pub rhs: f64,
    /// Signed slack of the inequality plus `tol`; negative means violated.
    pub margin: f64,
    /// Curvature penalty of a catalog envelope, 0 for supplied test functions.
    pub kappa: f64,
    pub passed: bool,
}

fn record(cert: &TouchingCertificate, lhs: f64, rhs: f64, tol: f64, kappa: f64, negate: bool) -> CheckRecord {
    let slack = match cert.direction {
        Direction::Above => rhs - lhs,
        Direction::Below => lhs - rhs,
    };
    let margin = if negate { -slack - tol } else { slack + tol };
    CheckRecord { t: cert.t, x: cert.mu.x.clone(), direction: cert.direction, lhs, rhs, margin, kappa, passed: margin >= 0.0 }
}

/// `φ′(t)(x) ≤ Lφ(t)(x) + tol` for a test function touching from above.
pub fn check_subsolution(phi: &TestFunctionPath, cert: &TouchingCertificate, generator: &GeneratorFn, tol: f64) -> Result<CheckRecord> {
    if cert.direction != Direction::Above {
        return Err(argument("subsolution check needs a certificate from above"));
    }
    let lhs = phi.dphi_dt(cert.t, &cert.mu.x);
    let rhs = generator(&phi.space_field(cert.t), &cert.mu.x)?;
    Ok(record(cert, lhs, rhs, tol, 0.0, false))
}

/// `φ′(t)(x) ≥ Lφ(t)(x) − tol` for a test function touching from below.
pub fn check_supersolution(phi: &TestFunctionPath, cert: &TouchingCertificate, generator: &GeneratorFn, tol: f64) -> Result<CheckRecord> {
    if cert.direction != Direction::Below {
        return Err(argument("supersolution check needs a certificate from below"));
    }
    let lhs = phi.dphi_dt(cert.t, &cert.mu.x);
    let rhs = generator(&phi.space_field(cert.t), &cert.mu.x)?;
    Ok(record(cert, lhs, rhs, tol, 0.0, false))
}

/// Injected harness faults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// Adds a constant to `φ′`.
    TimeDerivativeShift(f64),
    /// Adds a constant to `Lφ`.
    GeneratorShift(f64),
    /// Negates both inequalities.
    RoleSwap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViscosityConfig {
    pub catalog_size: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Time steps of the coarse trajectory; the fine one uses twice as many.
    pub steps: usize,
    pub n_paths: usize,
    pub tol: f64,
    pub touch_tolerance: f64,
    /// Smallest curvature penalty.
    pub epsilon: f64,
    /// Candidates needing a larger penalty are rejected.
    pub kappa_max: f64,
    /// Finite-difference step for the local expansion.
    pub fd_step: f64,
    pub window: f64,
    /// Earliest touching time.
    pub t_min: f64,
    /// Touching points are drawn from this ball.
    pub touch_radius: f64,
    pub fault: Fault,
}

impl Default for ViscosityConfig {
    fn default() -> Self {
        Self {
            catalog_size: 20,
            seed: 0,
            horizon: 1.0,
            steps: 64,
            n_paths: 100_000,
            tol: 1e-2,
            touch_tolerance: 1e-3,
            epsilon: 1e-2,
            kappa_max: 4.0,
            fd_step: 0.05,
            window: 0.5,
            t_min: 0.25,
            touch_radius: 1.0,
            fault: Fault::None,
        }
    }
}

impl ViscosityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size == 0 {
            return Err(config("catalog_size must be positive"));
        }
        if !(self.horizon > 0.0) || self.steps < 4 {
            return Err(config("viscosity run needs a positive horizon and at least 4 steps"));
        }
        if !(self.tol >= 0.0 && self.touch_tolerance >= 0.0) {
            return Err(config("tolerances must be nonnegative"));
        }
        if !(self.epsilon > 0.0 && self.kappa_max >= self.epsilon) {
            return Err(config("need 0 < epsilon ≤ kappa_max"));
        }
        if !(self.fd_step > 0.0 && self.window > 0.0 && self.touch_radius > 0.0) {
            return Err(config("fd_step, window and touch_radius must be positive"));
        }
        if !(self.t_min > 0.0 && self.t_min < self.horizon) {
            return Err(config("t_min must lie in (0, horizon)"));
        }
        MCConfig { n_paths: self.n_paths, ..MCConfig::default() }.validate()
    }
}

/// Aggregate of a viscosity run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViscosityReport {
    pub instance: String,
    pub family: Family,
    pub config: ViscosityConfig,
    pub records: Vec<CheckRecord>,
    pub rejected: usize,
    pub sub_violations: usize,
    pub super_violations: usize,
    pub worst_sub_margin: f64,
    pub worst_super_margin: f64,
    pub test_family: String,
}

pub const TEST_FAMILY_NOTE: &str =
    "test functions: local quadratic space-time envelopes; smooth fields: Gaussian bump mixtures and trigonometric fields";

impl ViscosityReport {
    pub fn violations(&self) -> usize {
        self.sub_violations + self.super_violations
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instance {} family {:?} fault {:?}", self.instance, self.family, self.config.fault);
        let _ = writeln!(s, "# {}", self.test_family);
        for r in &self.records {
            let xs: Vec<String> = r.x.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                s,
                "t={:.6} x=[{}] direction={} lhs={:.6e} rhs={:.6e} margin={:.6e} verdict={}",
                r.t,
                xs.join(","),
                r.direction.name(),
                r.lhs,
                r.rhs,
                r.margin,
                if r.passed { "pass" } else { "fail" }
            );
        }
        let _ = writeln!(
            s,
            "checks {} rejected {} sub_violations {} super_violations {} worst_sub {:.6e} worst_super {:.6e}",
            self.records.len(),
            self.rejected,
            self.sub_violations,
            self.super_violations,
            self.worst_sub_margin,
            self.worst_super_margin
        );
        s
    }
}

/// Analytic generator of an instance, as used by the viscosity checks.
pub fn instance_generator(instance: &Instance, family: Family) -> Box<GeneratorFn<'_>> {
    match instance {
        Instance::Levy(p) => Box::new(move |f: &SmoothTestField, x: &[f64]| hjb_generator_levy(p, f, x)),
        Instance::Ou(p) => Box::new(move |f: &SmoothTestField, x: &[f64]| isaacs_generator_ou_family(p, f, x, family)),
    }
}

/// `u(t) = family(t)u₀` on a time grid, with the time-stepping bias removed
/// by combining `steps` and `2·steps` trajectories.
pub fn solution_path(
    prop: &Propagator,
    family: Family,
    u0: &LatticeFunction,
    horizon: f64,
    steps: usize,
) -> Result<ValuePath> {
    let coarse = prop.with_mc(MCConfig { steps, ..prop.mc().clone() })?.trajectory(family, horizon, u0)?;
    let fine = prop.with_mc(MCConfig { steps: 2 * steps, ..prop.mc().clone() })?.trajectory(family, horizon, u0)?;
    ValuePath::richardson(coarse, fine, prop.dim())
}

/// Time derivative, gradient and Hessian of the path by central differences.
fn local_expansion(u: &ValuePath, k: usize, kt: usize, x: &[f64], delta: f64) -> (f64, f64, Vec<f64>, DMatrix<f64>) {
    let d = x.len();
    let u0 = u.value(k, x);
    let p_t = (u.value(k + kt, x) - u.value(k - kt, x)) / (2.0 * kt as f64 * u.dt());
    let shifted = |i: usize, a: f64, j: usize, b: f64| {
        let mut y = x.to_vec();
        y[i] += a;
        y[j] += b;
        u.value(k, &y)
    };
    let mut g = vec![0.0; d];
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let (up, um) = (shifted(i, delta, i, 0.0), shifted(i, -delta, i, 0.0));
        g[i] = (up - um) / (2.0 * delta);
        h[(i, i)] = (up - 2.0 * u0 + um) / (delta * delta);
        for j in 0..i {
            let v = (shifted(i, delta, j, delta) - shifted(i, delta, j, -delta) - shifted(i, -delta, j, delta)
                + shifted(i, -delta, j, -delta))
                / (4.0 * delta * delta);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (u0, p_t, g, h)
}

/// Smallest penalty on the ladder `ε·2^j ≤ κ_max` whose envelope certifies.
#[allow(clippy::too_many_arguments)]
fn certified_envelope(
    u: &ValuePath,
    k: usize,
    mu: &DiracFunctional,
    expansion: &(f64, f64, Vec<f64>, DMatrix<f64>),
    direction: Direction,
    cloud: &SpaceTimeCloud,
    cfg: &ViscosityConfig,
    radius: f64,
) -> Result<Option<(TestFunctionPath, TouchingCertificate, f64)>> {
    let t = u.times()[k];
    let mut kappa = cfg.epsilon;
    while kappa <= cfg.kappa_max * (1.0 + 1e-12) {
        let (v, p_t, g, h) = expansion;
        let phi = TestFunctionPath::envelope(t, mu.x.clone(), *v, *p_t, g.clone(), h.clone(), kappa, direction, radius);
        match certify_touching(u, &phi, k, mu, direction, cloud, cfg.touch_tolerance) {
            Ok(cert) => return Ok(Some((phi, cert, kappa))),
            Err(Error::Certification { .. }) => kappa *= 2.0,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Check both viscosity inequalities for `u(t) = family(t)u₀` on a seeded
/// catalog of touching test functions.
pub fn verify_theorem(
    prop: &Propagator,
    family: Family,
    u0: &LatticeFunction,
    cfg: &ViscosityConfig,
    plan: &SamplePlan,
) -> Result<ViscosityReport> {
    cfg.validate()?;
    let path = solution_path(prop, family, u0, cfg.horizon, cfg.steps)?;
    verify_on_path(&path, prop.instance(), family, cfg, plan)
}

/// [`verify_theorem`] on a precomputed path.
pub fn verify_on_path(
    path: &ValuePath,
    instance: &Instance,
    family: Family,
    cfg: &ViscosityConfig,
    plan: &SamplePlan,
) -> Result<ViscosityReport> {
    cfg.validate()?;
    check_dim(path.dim(), instance.dim())?;
    check_dim(path.dim(), plan.dim())?;
    let dim = path.dim();
    let n_t = path.times().len() - 1;
    let kt = ((cfg.fd_step / path.dt()).round() as usize).max(1);
    let k_lo = ((cfg.t_min / path.dt()).ceil() as usize).max(kt);
    if k_lo + kt > n_t {
        return Err(config("time grid too coarse for the touching window"));
    }
    let generator = instance_generator(instance, family);
    let shift_lhs = if let Fault::TimeDerivativeShift(c) = cfg.fault { c } else { 0.0 };
    let shift_rhs = if let Fault::GeneratorShift(c) = cfg.fault { c } else { 0.0 };
    let negate = cfg.fault == Fault::RoleSwap;
    let touch_radius = cfg.touch_radius.min(plan.radius());
    let field_radius = plan.radius() + 10.0;

    let mut r = rng::keyed_rng(cfg.seed, 0x7669_7363, 0, 0);
    let mut records = Vec::with_capacity(2 * cfg.catalog_size);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let budget = 10 * cfg.catalog_size;
    while accepted < cfg.catalog_size {
        if accepted + rejected >= budget {
            return Err(Error::Instance(format!(
                "catalog generation accepted {accepted} of {} test functions after {budget} candidates",
                cfg.catalog_size
            )));
        }
        let k = r.random_range(k_lo..=n_t - kt);
        let x = loop {
            let y: Vec<f64> = (0..dim).map(|_| r.random_range(-touch_radius..touch_radius)).collect();
            if norm(&y) <= touch_radius {
                break y;
            }
        };
        let mu = DiracFunctional::new(x)?;
        let cloud = SpaceTimeCloud::around(path, k, cfg.window, plan.clone())?;
        let exp = local_expansion(path, k, kt, &mu.x, cfg.fd_step);
        let above = certified_envelope(path, k, &mu, &exp, Direction::Above, &cloud, cfg, field_radius)?;
        let below = certified_envelope(path, k, &mu, &exp, Direction::Below, &cloud, cfg, field_radius)?;
        let (Some(above), Some(below)) = (above, below) else {
            rejected += 1;
            continue;
        };
        accepted += 1;
        for (phi, cert, kappa) in [above, below] {
            let lhs = phi.dphi_dt(cert.t, &cert.mu.x) + shift_lhs;
            let rhs = generator(&phi.space_field(cert.t), &cert.mu.x)? + shift_rhs;
            records.push(record(&cert, lhs, rhs, cfg.tol, kappa, negate));
        }
    }
    let worst = |dir: Direction| {
        records.iter().filter(|c| c.direction == dir).map(|c| c.margin).fold(f64::INFINITY, f64::min)
    };
    let count = |dir: Direction| records.iter().filter(|c| c.direction == dir && !c.passed).count();
    Ok(ViscosityReport {
        instance: instance.name().to_string(),
        family,
        config: cfg.clone(),
        sub_violations: count(Direction::Above),
        super_violations: count(Direction::Below),
        worst_sub_margin: worst(Direction::Above),
        worst_super_margin: worst(Direction::Below),
        records,
        rejected,
        test_family: TEST_FAMILY_NOTE.to_string(),
    })
}
