//! Strict TOML run configuration. Every section and key is optional; unknown
//! keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::campaign::CheckId;
use crate::costs::RunningCost;
use crate::dynamics::{JumpLaw, LevyTriplet, OUModel};
use crate::engine::{GridConfig, Instance, LevyControlProblem, MCConfig, RobustOUProblem};
use crate::error::{config, Error, Result};
use crate::generator::random_smooth_function;
use crate::lattice::{LatticeFunction, SamplePlan};
use crate::viscosity::ViscosityConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InstanceId {
    #[default]
    Levy,
    Ou,
}

/// Initial value for single-trajectory runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialValue {
    /// `max(−‖x‖², −4)`.
    #[default]
    ClippedParabola,
    /// `max(−√(‖x‖² + 0.01) + 0.1, −4)`.
    SmoothCone,
    /// Seeded bump mixture.
    Bumps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub instance: InstanceId,
    pub dim: usize,
    pub checks: Vec<CheckId>,
    pub n_trials: usize,
    /// Per-check overrides of `n_trials`.
    pub trials: BTreeMap<CheckId, usize>,
    pub seed: u64,
    pub t_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub h_values: Vec<f64>,
    /// Lipschitz constant used to size the Lévy action grid.
    pub control_lip: f64,
    /// Number of action grid points per axis for the Lévy example.
    pub action_points: Option<usize>,
    pub u0: InitialValue,
    pub u0_seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let trials = BTreeMap::from([
            (CheckId::SemigroupLaw, 5),
            (CheckId::RightContinuity, 3),
            (CheckId::GeneratorMatch, 3),
        ]);
        Self {
            instance: InstanceId::Levy,
            dim: 1,
            checks: CheckId::ALL.to_vec(),
            n_trials: 20,
            trials,
            seed: 42,
            t_values: vec![0.25, 1.0],
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            h_values: vec![0.5, 0.25, 0.1],
            control_lip: 4.0,
            action_points: None,
            u0: InitialValue::ClippedParabola,
            u0_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub radius: Option<f64>,
    pub grid_per_dim: Option<usize>,
    pub fill: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub steps: usize,
    pub crn: bool,
    /// Paths and steps for the order checks, which hold for any sample size.
    pub exact_n_paths: usize,
    pub exact_steps: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { n_paths: 100_000, steps: 64, crn: true, exact_n_paths: 2000, exact_steps: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub half_width: Option<f64>,
    pub dx: Option<f64>,
    /// Spacing used by the order checks.
    pub exact_dx: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevySection {
    pub gamma: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub jump_rate: f64,
    /// Gaussian jump mean; defaults to `(0.3, 0, ...)`.
    pub jump_mean: Option<Vec<f64>>,
    pub jump_std: f64,
    /// Deterministic jump size, replacing the Gaussian law.
    pub jump_constant: Option<Vec<f64>>,
}

impl Default for LevySection {
    fn default() -> Self {
        Self { gamma: None, cov: None, jump_rate: 1.0, jump_mean: None, jump_std: 0.4, jump_constant: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostChoice {
    /// `½ s ‖a‖²`.
    #[default]
    Quadratic,
    /// `s ‖a‖⁴`.
    Quartic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub kind: CostChoice,
    pub scale: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { kind: CostChoice::Quadratic, scale: 1.0 }
    }
}

/// Robust OU model with `b(x, a) = a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuSection {
    /// Defaults to `−I`.
    pub a: Option<Vec<Vec<f64>>>,
    /// Defaults to `{−1, 0, 1}^dim`.
    pub actions: Option<Vec<Vec<f64>>>,
    /// Volatility set as multiples of the identity.
    pub sigma_scales: Vec<f64>,
    /// Defaults to `I`.
    pub q: Option<Vec<Vec<f64>>>,
    pub horizon: f64,
}

impl Default for OuSection {
    fn default() -> Self {
        Self { a: None, actions: None, sigma_scales: vec![0.5, 1.0], q: None, horizon: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Slack of the order checks.
    pub exact: f64,
    pub semigroup_law: f64,
    pub right_continuity: f64,
    /// Allowed rise between consecutive right-continuity errors.
    pub mc_floor: f64,
    pub generator_match: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { exact: 1e-9, semigroup_law: 0.05, right_continuity: 1e-2, mc_floor: 2e-3, generator_match: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    /// Defaults to `{0.2, 0.1, 0.05, 0.025}` for the Lévy example and
    /// `{0.05, 0.025, 0.0125, 0.00625}` for the OU example.
    pub h_seq: Option<Vec<f64>>,
    pub n_paths: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self { h_seq: None, n_paths: 400_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub plan: PlanSection,
    pub mc: McSection,
    pub grid: GridSection,
    pub levy: LevySection,
    pub cost: CostSection,
    pub ou: OuSection,
    pub tolerances: Tolerances,
    pub generator: GeneratorSection,
    pub viscosity: ViscosityConfig,
}

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(config(format!("{what} must be a {dim}x{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn unit(dim: usize, v: f64) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[0] = v;
    e
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if !(1..=3).contains(&r.dim) {
            return Err(config(format!("dim must be 1, 2 or 3, got {}", r.dim)));
        }
        if r.n_trials == 0 || r.trials.values().any(|&n| n == 0) {
            return Err(config("n_trials must be at least 1"));
        }
        if r.t_values.is_empty() || r.t_values.iter().any(|&t| !(t > 0.0)) {
            return Err(config("t_values must be positive"));
        }
        if r.lambdas.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(config("lambdas must lie in [0, 1]"));
        }
        if r.h_values.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
            return Err(config("h_values must lie in (0, 1]"));
        }
        if !(r.control_lip >= 0.0) {
            return Err(config("control_lip must be nonnegative"));
        }
        let t = &self.tolerances;
        if [t.exact, t.semigroup_law, t.right_continuity, t.generator_match].iter().any(|v| !(*v > 0.0)) || !(t.mc_floor >= 0.0) {
            return Err(config("tolerances must be positive"));
        }
        if self.mc.exact_steps == 0 || self.mc.steps == 0 {
            return Err(config("steps must be at least 1"));
        }
        if let Some(h) = &self.generator.h_seq {
            if h.len() < 3 {
                return Err(config("h_seq needs at least three entries"));
            }
        }
        self.mc_config().validate()?;
        self.exact_mc_config().validate()?;
        self.viscosity.validate()
    }

    pub fn trials(&self, id: CheckId) -> usize {
        self.run.trials.get(&id).copied().unwrap_or(self.run.n_trials)
    }

    pub fn mc_config(&self) -> MCConfig {
        MCConfig { n_paths: self.mc.n_paths, seed: self.run.seed, crn: self.mc.crn, steps: self.mc.steps, stream_id: 0 }
    }

    pub fn exact_mc_config(&self) -> MCConfig {
        MCConfig { n_paths: self.mc.exact_n_paths, steps: self.mc.exact_steps, ..self.mc_config() }
    }

    pub fn grid_config(&self) -> GridConfig {
        let d = GridConfig::default_for(self.run.dim);
        GridConfig { half_width: self.grid.half_width.unwrap_or(d.half_width), dx: self.grid.dx.unwrap_or(d.dx) }
    }

    /// Grid for the order checks: four times coarser than the default.
    pub fn exact_grid_config(&self) -> GridConfig {
        let g = self.grid_config();
        GridConfig { dx: self.grid.exact_dx.unwrap_or(4.0 * g.dx), ..g }
    }

    pub fn plan(&self) -> Result<SamplePlan> {
        let p = &self.plan;
        if p.radius.is_none() && p.grid_per_dim.is_none() && p.fill.is_none() {
            return SamplePlan::default_for(self.run.dim, p.seed);
        }
        let (radius, grid, fill) = match self.run.dim {
            3 => (1.5, 21, 0),
            _ => (2.0, 41, 256),
        };
        SamplePlan::build(
            self.run.dim,
            p.radius.unwrap_or(radius),
            p.grid_per_dim.unwrap_or(grid),
            p.fill.unwrap_or(fill),
            p.seed,
        )
    }

    pub fn cost(&self) -> Result<RunningCost> {
        match self.cost.kind {
            CostChoice::Quadratic => RunningCost::quadratic(self.run.dim, self.cost.scale),
            CostChoice::Quartic => RunningCost::quartic(self.run.dim, self.cost.scale),
        }
    }

    pub fn triplet(&self) -> Result<LevyTriplet> {
        let d = self.run.dim;
        let l = &self.levy;
        let gamma = l.gamma.clone().unwrap_or_else(|| unit(d, 0.2));
        let cov = match &l.cov {
            Some(rows) => matrix(rows, d, "levy.cov")?,
            None => DMatrix::identity(d, d) * 0.5,
        };
        let jumps = if l.jump_rate > 0.0 {
            Some(match &l.jump_constant {
                Some(j) => JumpLaw::Constant(j.clone()),
                None => JumpLaw::Gaussian { mean: l.jump_mean.clone().unwrap_or_else(|| unit(d, 0.3)), std: l.jump_std },
            })
        } else {
            None
        };
        LevyTriplet::new(gamma, cov, l.jump_rate, jumps)
    }

    pub fn ou_model(&self) -> Result<OUModel> {
        let d = self.run.dim;
        let o = &self.ou;
        let a = match &o.a {
            Some(rows) => matrix(rows, d, "ou.a")?,
            None => -DMatrix::identity(d, d),
        };
        let q = match &o.q {
            Some(rows) => matrix(rows, d, "ou.q")?,
            None => DMatrix::identity(d, d),
        };
        let actions = o.actions.clone().unwrap_or_else(|| {
            let mut out = vec![vec![]];
            for _ in 0..d {
                out = out
                    .into_iter()
                    .flat_map(|p: Vec<f64>| {
                        [-1.0, 0.0, 1.0].into_iter().map(move |v| {
                            let mut q = p.clone();
                            q.push(v);
                            q
                        })
                    })
                    .collect();
            }
            out
        });
        if o.sigma_scales.is_empty() {
            return Err(config("ou.sigma_scales is empty"));
        }
        let sigma = o.sigma_scales.iter().map(|s| DMatrix::identity(d, d) * *s).collect();
        let c = actions.iter().map(|a| crate::lattice::norm(a)).fold(0.0, f64::max);
        OUModel::new(a, |_x, a| a.to_vec(), actions, c, sigma, q, o.horizon)
    }

    pub fn instance(&self) -> Result<Instance> {
        self.instance_for(self.run.instance)
    }

    pub fn instance_for(&self, id: InstanceId) -> Result<Instance> {
        Ok(match id {
            InstanceId::Levy => {
                let (t, c, lip) = (self.triplet()?, self.cost()?, self.run.control_lip);
                Instance::Levy(match self.run.action_points {
                    Some(n) => LevyControlProblem::with_points(t, c, lip, n)?,
                    None => LevyControlProblem::new(t, c, lip)?,
                })
            }
            InstanceId::Ou => Instance::Ou(RobustOUProblem::new(self.ou_model()?)),
        })
    }

    pub fn generator_h_seq(&self) -> Vec<f64> {
        self.generator.h_seq.clone().unwrap_or_else(|| match self.run.instance {
            InstanceId::Levy => vec![0.2, 0.1, 0.05, 0.025],
            InstanceId::Ou => vec![0.05, 0.025, 0.0125, 0.00625],
        })
    }

    pub fn initial_value(&self) -> Result<LatticeFunction> {
        let d = self.run.dim;
        match self.run.u0 {
            InitialValue::ClippedParabola => {
                LatticeFunction::new(d, 4.0, Some(4.0), |x| (-x.iter().map(|v| v * v).sum::<f64>()).max(-4.0))
            }
            InitialValue::SmoothCone => LatticeFunction::new(d, 4.0, Some(1.0), |x| {
                (-(x.iter().map(|v| v * v).sum::<f64>() + 0.01).sqrt() + 0.1).max(-4.0)
            }),
            InitialValue::Bumps => Ok(random_smooth_function(self.run.u0_seed, d, 3, 1.0)?.to_lattice()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.run.checks.len(), CheckId::ALL.len());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::from_toml("[run]\nbogus = 1\n"), Err(Error::Configuration(_))));
        assert!(matches!(Config::from_toml("[nope]\n"), Err(Error::Configuration(_))));
        assert!(matches!(Config::from_toml("[mc]\nn_paths = 10\n"), Err(Error::Configuration(_))));
    }

    #[test]
    fn round_trip_through_toml() {
        let text = "[run]\ninstance = \"ou\"\nchecks = [\"monotone\", \"k_convex\"]\ntrials = { monotone = 3 }\n[ou]\nsigma_scales = [1.0]\n";
        let c = Config::from_toml(text).unwrap();
        assert_eq!(c.run.instance, InstanceId::Ou);
        assert_eq!(c.trials(CheckId::Monotone), 3);
        assert_eq!(c.trials(CheckId::KConvex), 20);
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn instances_build_in_each_dimension() {
        for d in 1..=2 {
            let mut c = Config::default();
            c.run.dim = d;
            assert_eq!(c.instance_for(InstanceId::Levy).unwrap().dim(), d);
            let ou = c.instance_for(InstanceId::Ou).unwrap();
            match ou {
                Instance::Ou(p) => assert_eq!(p.model.actions().len(), 3usize.pow(d as u32)),
                _ => unreachable!(),
            }
            assert_eq!(c.plan().unwrap().dim(), d);
        }
    }

    #[test]
    fn matrix_shape_is_checked() {
        let c = Config::from_toml("[levy]\ncov = [[1.0, 0.0]]\n").unwrap();
        assert!(c.triplet().is_err());
    }
}
