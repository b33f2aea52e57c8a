//! Seeded property campaigns over random smooth function pairs.
//!
//! Order checks evaluate every operator on one shared stream, so each
//! inequality holds sample by sample and is tested with floating-point slack.
//! Statistical checks compare against configured tolerances.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, InstanceId};
use crate::engine::{Family, Instance, LevyControlProblem, MCConfig, Propagator};
use crate::error::Result;
use crate::generator::{
    estimate_generator, hjb_generator_levy, isaacs_generator_ou, levy_generator_analytic, random_smooth_function,
    relative_sup_error, single_step_operator, SmoothTestField,
};
use crate::lattice::{lattice_join, linear_combination, max_abs, LatticeFunction, SamplePlan};
use crate::rng;
use crate::viscosity::TEST_FAMILY_NOTE;

/// Campaign checks. Dispatch in [`run_check`] is an exhaustive match, so a
/// variant without an implementation does not compile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    /// `u ≤ v ⇒ S(t)u ≤ S(t)v`.
    Monotone,
    /// `S(t)0 ≥ 0`.
    Positivity,
    /// `S(t)(λu + (1−λ)v) ≤ λS(t)u + (1−λ)K(t)v`.
    KConvex,
    /// `S(t)u ≤ K(t)u`.
    UpperBound,
    /// `2S(t)0 − S(t)u ≤ K(t)(−u)`.
    Reflection,
    /// `p(S(t)u − v) ≤ p(K(t)u − v) + p(K(t)(−u) + v)` for the sup seminorm.
    SeminormBound,
    /// `(S(t)u − S(t)v)/h ≤ K(t)(v + (u − v)/h) − S(t)v`.
    DifferenceQuotient,
    /// `S(t + s)u = S(t)S(s)u`.
    SemigroupLaw,
    /// `F(t_n)u_n → u` for `t_n ↓ 0`, `u_n → u`.
    RightContinuity,
    /// Extrapolated `(S(h)u − u)/h` against the analytic generator.
    GeneratorMatch,
}

impl CheckId {
    pub const ALL: [CheckId; 10] = [
        CheckId::Monotone,
        CheckId::Positivity,
        CheckId::KConvex,
        CheckId::UpperBound,
        CheckId::Reflection,
        CheckId::SeminormBound,
        CheckId::DifferenceQuotient,
        CheckId::SemigroupLaw,
        CheckId::RightContinuity,
        CheckId::GeneratorMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckId::Monotone => "monotone",
            CheckId::Positivity => "positivity",
            CheckId::KConvex => "k_convex",
            CheckId::UpperBound => "upper_bound",
            CheckId::Reflection => "reflection",
            CheckId::SeminormBound => "seminorm_bound",
            CheckId::DifferenceQuotient => "difference_quotient",
            CheckId::SemigroupLaw => "semigroup_law",
            CheckId::RightContinuity => "right_continuity",
            CheckId::GeneratorMatch => "generator_match",
        }
    }

    /// Holds sample by sample under common random numbers.
    pub fn is_exact(self) -> bool {
        !matches!(self, CheckId::SemigroupLaw | CheckId::RightContinuity | CheckId::GeneratorMatch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: CheckId,
    pub trials: usize,
    pub worst_violation: f64,
    pub tolerance: f64,
    /// Noise level of the statistical checks.
    pub mc_floor: Option<f64>,
    pub passed: bool,
    pub details: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fingerprint {
    pub instance: InstanceId,
    pub dim: usize,
    pub seed: u64,
    pub steps: usize,
    pub n_paths: usize,
    pub exact_steps: usize,
    pub exact_n_paths: usize,
    pub grid_dx: f64,
    pub exact_grid_dx: f64,
    pub plan_points: usize,
    pub plan_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Resolved configuration as TOML.
    pub config: String,
    pub fingerprint: Fingerprint,
    pub checks: Vec<CheckResult>,
    pub caveats: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: CheckId) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let f = &self.fingerprint;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "instance {:?} dim {} seed {} steps {} n_paths {} exact_steps {} exact_n_paths {} plan {} points radius {}",
            f.instance, f.dim, f.seed, f.steps, f.n_paths, f.exact_steps, f.exact_n_paths, f.plan_points, f.plan_radius
        );
        for c in &self.checks {
            let floor = c.mc_floor.map_or("-".to_string(), |v| format!("{v:.3e}"));
            let _ = writeln!(
                s,
                "{:<20} trials {:>3} worst {:>10.3e} tol {:>9.2e} floor {:>9} {}",
                c.id.name(),
                c.trials,
                c.worst_violation,
                c.tolerance,
                floor,
                if c.passed { "PASS" } else { "FAIL" }
            );
            for d in &c.details {
                let _ = writeln!(s, "    {d}");
            }
            if let Some(e) = &c.error {
                let _ = writeln!(s, "    error: {e}");
            }
        }
        for c in &self.caveats {
            let _ = writeln!(s, "note: {c}");
        }
        let _ = writeln!(s, "--- config ---\n{}", self.config.trim_end());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,trials,worst_violation,tolerance,mc_floor,verdict\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.id.name(),
                c.trials,
                c.worst_violation,
                c.tolerance,
                c.mc_floor.map_or(String::new(), |v| v.to_string()),
                if c.passed { "pass" } else { "fail" }
            );
        }
        s
    }
}

/// Random bump mixture with 2 to 5 bumps.
pub fn trial_field(seed: u64, dim: usize) -> Result<SmoothTestField> {
    let mut r = rng::keyed_rng(seed, 0x6669_656c, 0, 0);
    let n = r.random_range(2..=5usize);
    random_smooth_function(rng::mix(&[seed, n as u64]), dim, n, 1.0)
}

fn trial_seed(seed: u64, id: CheckId, trial: usize, k: u64) -> u64 {
    rng::mix(&[seed, id as u64, trial as u64, k])
}

struct Ctx<'a> {
    cfg: &'a Config,
    instance: Instance,
    plan: SamplePlan,
}

/// Worst of `lhs − rhs` over the plan.
fn excess(lhs: &[f64], rhs: &[f64]) -> f64 {
    lhs.iter().zip(rhs).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}

fn exact_check(ctx: &Ctx, id: CheckId) -> Result<(usize, f64, Vec<String>)> {
    let cfg = ctx.cfg;
    let prop = Propagator::new(ctx.instance.clone(), cfg.exact_mc_config(), &cfg.exact_grid_config())?;
    let plan = &ctx.plan;
    let d = cfg.run.dim;
    let trials = if id == CheckId::Positivity { 1 } else { cfg.trials(id) };
    let s = |t: f64, u: &LatticeFunction| prop.apply(Family::S, t, u)?.eval_plan(plan);
    let k = |t: f64, u: &LatticeFunction| prop.apply(Family::K, t, u)?.eval_plan(plan);
    let per_trial: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let u = trial_field(trial_seed(cfg.run.seed, id, i, 0), d)?.to_lattice();
            let v = trial_field(trial_seed(cfg.run.seed, id, i, 1), d)?.to_lattice();
            let zero = LatticeFunction::zero(d);
            let mut worst = f64::NEG_INFINITY;
            for &t in &cfg.run.t_values {
                let w = match id {
                    CheckId::Monotone => {
                        let upper = lattice_join(&u, &v)?;
                        excess(&s(t, &u)?, &s(t, &upper)?)
                    }
                    CheckId::Positivity => -s(t, &zero)?.into_iter().fold(f64::INFINITY, f64::min),
                    CheckId::UpperBound => excess(&s(t, &u)?, &k(t, &u)?),
                    CheckId::KConvex => {
                        let (su, kv) = (s(t, &u)?, k(t, &v)?);
                        let mut w = f64::NEG_INFINITY;
                        for &l in &cfg.run.lambdas {
                            let mix = linear_combination(&[(l, &u), (1.0 - l, &v)])?;
                            let rhs: Vec<f64> = su.iter().zip(&kv).map(|(a, b)| l * a + (1.0 - l) * b).collect();
                            w = w.max(excess(&s(t, &mix)?, &rhs));
                        }
                        w
                    }
                    CheckId::Reflection => {
                        let lhs: Vec<f64> = s(t, &zero)?.iter().zip(s(t, &u)?).map(|(a, b)| 2.0 * a - b).collect();
                        excess(&lhs, &k(t, &u.neg())?)
                    }
                    CheckId::SeminormBound => {
                        let vp = v.eval_plan(plan)?;
                        let p = |a: &[f64], sign: f64| {
                            max_abs(&a.iter().zip(&vp).map(|(x, y)| x + sign * y).collect::<Vec<f64>>())
                        };
                        p(&s(t, &u)?, -1.0) - p(&k(t, &u)?, -1.0) - p(&k(t, &u.neg())?, 1.0)
                    }
                    CheckId::DifferenceQuotient => {
                        let (su, sv) = (s(t, &u)?, s(t, &v)?);
                        let mut w = f64::NEG_INFINITY;
                        for &h in &cfg.run.h_values {
                            let shifted = linear_combination(&[(1.0 - 1.0 / h, &v), (1.0 / h, &u)])?;
                            let kw = k(t, &shifted)?;
                            let lhs: Vec<f64> = su.iter().zip(&sv).map(|(a, b)| (a - b) / h).collect();
                            let rhs: Vec<f64> = kw.iter().zip(&sv).map(|(a, b)| a - b).collect();
                            w = w.max(excess(&lhs, &rhs));
                        }
                        w
                    }
                    _ => unreachable!("statistical check routed to exact runner"),
                };
                worst = worst.max(w);
            }
            Ok(worst)
        })
        .collect();
    let mut worst = 0.0f64;
    for w in per_trial {
        worst = worst.max(w?);
    }
    Ok((trials, worst, Vec::new()))
}

fn semigroup_law(ctx: &Ctx) -> Result<(usize, f64, Option<f64>, bool, Vec<String>)> {
    let cfg = ctx.cfg;
    let trials = cfg.trials(CheckId::SemigroupLaw);
    let base = cfg.mc_config();
    let grid = cfg.grid_config();
    let props = [
        Propagator::new(ctx.instance.clone(), base.clone(), &grid)?,
        Propagator::new(ctx.instance.clone(), MCConfig { steps: 2 * base.steps, ..base.clone() }, &grid)?,
    ];
    let mut details = Vec::new();
    let (mut worst, mut worst_fine, mut floor) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..trials {
        let u = trial_field(trial_seed(cfg.run.seed, CheckId::SemigroupLaw, i, 0), cfg.run.dim)?.to_lattice();
        let mut errs = [0.0; 2];
        for (j, p) in props.iter().enumerate() {
            let direct = p.apply_in_stream(Family::S, 1.0, &u, 1)?.eval_plan(&ctx.plan)?;
            let inner = p.apply_in_stream(Family::S, 0.5, &u, 2)?;
            let nested = p.apply_in_stream(Family::S, 0.5, &inner, 3)?.eval_plan(&ctx.plan)?;
            errs[j] = relative_sup_error(&nested, &direct);
            if j == 0 {
                let other = p.apply_in_stream(Family::S, 1.0, &u, 4)?.eval_plan(&ctx.plan)?;
                floor = floor.max(relative_sup_error(&other, &direct));
            }
        }
        worst = worst.max(errs[0]);
        worst_fine = worst_fine.max(errs[1]);
        details.push(format!("trial {i}: m={} rel {:.3e}, m={} rel {:.3e}", base.steps, errs[0], 2 * base.steps, errs[1]));
    }
    let shrinks = worst_fine < worst;
    details.push(format!("worst rel error shrinks under step doubling: {shrinks}"));
    Ok((trials, worst, Some(floor), shrinks, details))
}

fn right_continuity(ctx: &Ctx) -> Result<(usize, f64, bool, Vec<String>)> {
    let cfg = ctx.cfg;
    let trials = cfg.trials(CheckId::RightContinuity);
    let prop = Propagator::new(ctx.instance.clone(), cfg.mc_config(), &cfg.grid_config())?;
    let families: &[Family] = match ctx.instance {
        Instance::Levy(_) => &[Family::S],
        Instance::Ou(_) => &[Family::S, Family::K],
    };
    let t_seq: Vec<f64> = (1..=8).map(|n| 0.5f64.powi(n)).collect();
    let (mut worst, mut ok) = (0.0f64, true);
    let mut details = Vec::new();
    for i in 0..trials {
        let u = trial_field(trial_seed(cfg.run.seed, CheckId::RightContinuity, i, 0), cfg.run.dim)?.to_lattice();
        let pert = trial_field(trial_seed(cfg.run.seed, CheckId::RightContinuity, i, 1), cfg.run.dim)?.to_lattice();
        let u_seq = t_seq
            .iter()
            .map(|&t| linear_combination(&[(1.0, &u), (t, &pert)]))
            .collect::<Result<Vec<_>>>()?;
        for &f in families {
            let diag = crate::engine::right_continuity_probe(
                &prop,
                f,
                &t_seq,
                &u_seq,
                &u,
                &ctx.plan,
                cfg.tolerances.right_continuity,
                cfg.tolerances.mc_floor,
            )?;
            worst = worst.max(*diag.errors.last().expect("nonempty"));
            ok &= diag.pass;
            let errs: Vec<String> = diag.errors.iter().map(|e| format!("{e:.2e}")).collect();
            details.push(format!("trial {i} {f:?}: monotone {} errors [{}]", diag.monotone, errs.join(", ")));
        }
    }
    Ok((trials, worst, ok, details))
}

fn generator_match(ctx: &Ctx) -> Result<(usize, f64, Vec<String>)> {
    let cfg = ctx.cfg;
    let trials = cfg.trials(CheckId::GeneratorMatch);
    let mc = MCConfig { n_paths: cfg.generator.n_paths, steps: 1, ..cfg.mc_config() };
    let grid = cfg.grid_config();
    let h_seq = cfg.generator_h_seq();
    let plan = &ctx.plan;
    let (mut worst, mut details) = (0.0f64, Vec::new());
    for i in 0..trials {
        let f = trial_field(trial_seed(cfg.run.seed, CheckId::GeneratorMatch, i, 0), cfg.run.dim)?;
        match &ctx.instance {
            Instance::Levy(p) => {
                let prob = LevyControlProblem::new(p.triplet().clone(), p.cost().clone(), f.grad_bound())?;
                let prop = Propagator::new(Instance::Levy(prob.clone()), mc.clone(), &grid)?;
                let est = estimate_generator(&single_step_operator(&prop, Family::S), &f, &h_seq, plan)?;
                let an = plan.points().iter().map(|x| hjb_generator_levy(&prob, &f, x)).collect::<Result<Vec<_>>>()?;
                let e1 = relative_sup_error(&est.extrapolated, &an);
                let zero = vec![vec![0.0; cfg.run.dim]];
                let single = LevyControlProblem::with_actions(p.triplet().clone(), p.cost().clone(), zero, 0.0)?;
                let prop0 = Propagator::new(Instance::Levy(single.clone()), mc.clone(), &grid)?;
                let est0 = estimate_generator(&single_step_operator(&prop0, Family::S), &f, &h_seq, plan)?;
                let an0 = plan
                    .points()
                    .iter()
                    .map(|x| levy_generator_analytic(single.triplet(), &f, x))
                    .collect::<Result<Vec<_>>>()?;
                let e0 = relative_sup_error(&est0.extrapolated, &an0);
                worst = worst.max(e1).max(e0);
                details.push(format!("field {i}: controlled rel {e1:.3e}, singleton control rel {e0:.3e}"));
            }
            Instance::Ou(p) => {
                let prop = Propagator::new(ctx.instance.clone(), mc.clone(), &grid)?;
                let est = estimate_generator(&single_step_operator(&prop, Family::S), &f, &h_seq, plan)?;
                let an = plan.points().iter().map(|x| isaacs_generator_ou(p, &f, x)).collect::<Result<Vec<_>>>()?;
                let e = relative_sup_error(&est.extrapolated, &an);
                worst = worst.max(e);
                details.push(format!("field {i}: rel {e:.3e}, residual warning {}", est.warning));
            }
        }
    }
    Ok((trials, worst, details))
}

/// Run one check; every id needs an arm here.
pub fn run_check(ctx_cfg: &Config, instance: &Instance, plan: &SamplePlan, id: CheckId) -> CheckResult {
    let ctx = Ctx { cfg: ctx_cfg, instance: instance.clone(), plan: plan.clone() };
    let tol = &ctx_cfg.tolerances;
    let outcome: Result<CheckResult> = match id {
        CheckId::Monotone
        | CheckId::Positivity
        | CheckId::KConvex
        | CheckId::UpperBound
        | CheckId::Reflection
        | CheckId::SeminormBound
        | CheckId::DifferenceQuotient => exact_check(&ctx, id).map(|(trials, worst, details)| CheckResult {
            id,
            trials,
            worst_violation: worst.max(0.0),
            tolerance: tol.exact,
            mc_floor: None,
            passed: worst <= tol.exact,
            details,
            error: None,
        }),
        CheckId::SemigroupLaw => semigroup_law(&ctx).map(|(trials, worst, floor, shrinks, details)| CheckResult {
            id,
            trials,
            worst_violation: worst,
            tolerance: tol.semigroup_law,
            mc_floor: floor,
            passed: worst <= tol.semigroup_law && shrinks,
            details,
            error: None,
        }),
        CheckId::RightContinuity => right_continuity(&ctx).map(|(trials, worst, ok, details)| CheckResult {
            id,
            trials,
            worst_violation: worst,
            tolerance: tol.right_continuity,
            mc_floor: Some(tol.mc_floor),
            passed: ok && worst <= tol.right_continuity,
            details,
            error: None,
        }),
        CheckId::GeneratorMatch => generator_match(&ctx).map(|(trials, worst, details)| CheckResult {
            id,
            trials,
            worst_violation: worst,
            tolerance: tol.generator_match,
            mc_floor: None,
            passed: worst <= tol.generator_match,
            details,
            error: None,
        }),
    };
    outcome.unwrap_or_else(|e| CheckResult {
        id,
        trials: 0,
        worst_violation: f64::INFINITY,
        tolerance: 0.0,
        mc_floor: None,
        passed: false,
        details: Vec::new(),
        error: Some(e.to_string()),
    })
}

pub fn caveats(id: InstanceId) -> Vec<String> {
    let mut out = vec![format!("test family: {TEST_FAMILY_NOTE}")];
    match id {
        InstanceId::Levy => out.push("levy: the upper family K coincides with S".to_string()),
        InstanceId::Ou => {
            out.push(
                "ou: the discrete recursion satisfies the dynamic programming principle by construction; \
                 for the continuous-time game with volatility control it is assumed, not established"
                    .to_string(),
            );
            out.push("ou: the generator domain condition on the adjoint drift is vacuous in finite dimension and is not probed".to_string());
        }
    }
    out
}

pub fn run_campaign(cfg: &Config) -> Result<VerificationReport> {
    cfg.validate()?;
    let instance = cfg.instance()?;
    let plan = cfg.plan()?;
    let checks = cfg.run.checks.iter().map(|&id| run_check(cfg, &instance, &plan, id)).collect();
    let mc = cfg.mc_config();
    let fingerprint = Fingerprint {
        instance: cfg.run.instance,
        dim: cfg.run.dim,
        seed: cfg.run.seed,
        steps: mc.steps,
        n_paths: mc.n_paths,
        exact_steps: cfg.mc.exact_steps,
        exact_n_paths: cfg.mc.exact_n_paths,
        grid_dx: cfg.grid_config().dx,
        exact_grid_dx: cfg.exact_grid_config().dx,
        plan_points: plan.len(),
        plan_radius: plan.radius(),
    };
    Ok(VerificationReport { config: cfg.to_toml(), fingerprint, checks, caveats: caveats(cfg.run.instance) })
}
