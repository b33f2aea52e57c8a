//! Driving noises and controlled state processes.
//!
//! Lévy increments are Gaussian plus compound Poisson, with the small-jump
//! compensator taken at truncation radius 1 so that the simulated process
//! has exactly the generator `⟨γ,∇u⟩ + ½tr(Σ∇²u) + λ E[u(x+J) − u(x) −
//! ⟨∇u(x),J⟩1{‖J‖≤1}]`. Draws come in antithetic pairs, Latin-hypercube
//! stratified across pairs in each Gaussian coordinate and in the jump
//! count. Every draw is keyed through [`crate::rng`].

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use rayon::prelude::*;

use crate::engine::MCConfig;
use crate::error::{argument, Error, Result};
use crate::lattice::{check_dim, norm, LatticeFunction};
use crate::rng;

/// Eigenvalue floor below which a covariance is rejected.
const PSD_FLOOR: f64 = -1e-12;
const TRUNCATION_RADIUS: f64 = 1.0;
const QUADRATURE_NODES: usize = 1 << 14;

/// Symmetric square root `F` with `F Fᵀ = m`; fails if `m` is not PSD.
pub(crate) fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Model(format!("{what} must be square")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::Model(format!("{what} is not symmetric")));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let eig = SymmetricEigen::new(m.clone());
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < PSD_FLOOR {
            return Err(Error::Model(format!("{what} is not positive semidefinite (eigenvalue {min:e})")));
        }
    }
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * roots)
}

/// Law of a single jump.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpLaw {
    /// Every jump equals the given vector.
    Constant(Vec<f64>),
    /// Independent Gaussian coordinates with the given mean and common standard deviation.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl JumpLaw {
    fn dim(&self) -> usize {
        match self {
            JumpLaw::Constant(v) => v.len(),
            JumpLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpLaw::Constant(v) => out.copy_from_slice(v),
            JumpLaw::Gaussian { mean, std } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + std * z;
                }
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            JumpLaw::Constant(v) => v.clone(),
            JumpLaw::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// Deterministic `(point, weight)` rule for the law: the single atom for
    /// constant jumps, a product midpoint rule in probability space otherwise.
    pub fn quadrature(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            JumpLaw::Constant(v) => vec![(v.clone(), 1.0)],
            JumpLaw::Gaussian { mean, std } => {
                let d = mean.len();
                let per_axis = match d {
                    1 => QUADRATURE_NODES,
                    2 => 256,
                    _ => 16,
                };
                let z: Vec<f64> = (0..per_axis)
                    .map(|k| STD_NORMAL.inverse_cdf((k as f64 + 0.5) / per_axis as f64))
                    .collect();
                let total = per_axis.pow(d as u32);
                let w = 1.0 / total as f64;
                (0..total)
                    .map(|flat| {
                        let mut rem = flat;
                        let p = mean
                            .iter()
                            .map(|m| {
                                let zi = z[rem % per_axis];
                                rem /= per_axis;
                                m + std * zi
                            })
                            .collect();
                        (p, w)
                    })
                    .collect()
            }
        }
    }

    /// `E[J 1{‖J‖ ≤ 1}]` under [`JumpLaw::quadrature`].
    pub fn truncated_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for (j, w) in self.quadrature() {
            if norm(&j) <= TRUNCATION_RADIUS {
                for (a, v) in acc.iter_mut().zip(&j) {
                    *a += w * v;
                }
            }
        }
        acc
    }
}

/// Lévy triplet `(γ, Σ, ν)` with `ν = λ_J · law(J)` a finite jump measure.
#[derive(Clone, Debug)]
pub struct LevyTriplet {
    dim: usize,
    gamma: Vec<f64>,
    cov: DMatrix<f64>,
    jump_rate: f64,
    jumps: Option<JumpLaw>,
    cov_factor: DMatrix<f64>,
    compensator: Vec<f64>,
}

impl LevyTriplet {
    pub fn new(gamma: Vec<f64>, cov: DMatrix<f64>, jump_rate: f64, jumps: Option<JumpLaw>) -> Result<Self> {
        let dim = gamma.len();
        if dim == 0 {
            return Err(argument("triplet dimension must be positive"));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Model(format!("covariance must be {dim}x{dim}")));
        }
        if !(jump_rate >= 0.0) || !jump_rate.is_finite() {
            return Err(Error::Model(format!("jump rate must be finite and nonnegative, got {jump_rate}")));
        }
        if let Some(j) = &jumps {
            check_dim(dim, j.dim())?;
            if let JumpLaw::Gaussian { std, .. } = j {
                if !(*std >= 0.0) {
                    return Err(Error::Model("jump standard deviation must be nonnegative".into()));
                }
            }
        }
        if jump_rate > 0.0 && jumps.is_none() {
            return Err(Error::Model("positive jump rate requires a jump law".into()));
        }
        let cov_factor = psd_factor(&cov, "covariance")?;
        let compensator = match (&jumps, jump_rate > 0.0) {
            (Some(j), true) => j.truncated_mean().iter().map(|m| jump_rate * m).collect(),
            _ => vec![0.0; dim],
        };
        Ok(Self { dim, gamma, cov, jump_rate, jumps, cov_factor, compensator })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::zeros(dim, dim), 0.0, None).expect("zero triplet is valid")
    }

    /// Standard Brownian motion with covariance `σ² I`.
    pub fn brownian(dim: usize, sigma: f64) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim) * (sigma * sigma), 0.0, None)
            .expect("Brownian triplet is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    pub fn jumps(&self) -> Option<&JumpLaw> {
        self.jumps.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0) && self.cov.iter().all(|&c| c == 0.0) && self.jump_rate == 0.0
    }

    /// `n` increments over a step of length `h`, flattened `n × dim`.
    pub fn sample_increments(&self, h: f64, n: usize, seed: u64, stream: u64, step: u64) -> Vec<f64> {
        let d = self.dim;
        let strata = LatinStrata::new(d + 1, n.div_ceil(2), seed, stream, step);
        let lambda_h = self.jump_rate * h;
        let sqrt_h = h.sqrt();
        let mut out = vec![0.0; n * d];
        out.par_chunks_mut(2 * d).enumerate().for_each(|(p, chunk)| {
            let mut r = rng::keyed_rng(seed, stream, p as u64, step);
            let z: Vec<f64> = (0..d).map(|k| strata.normal(k, p, &mut r)).collect();
            let mut jump_sum = vec![0.0; d];
            if lambda_h > 0.0 {
                let count = poisson_quantile(lambda_h, strata.uniform(d, p, &mut r));
                let law = self.jumps.as_ref().expect("jump law present");
                let mut j = vec![0.0; d];
                for _ in 0..count {
                    law.sample(&mut r, &mut j);
                    for (s, v) in jump_sum.iter_mut().zip(&j) {
                        *s += v;
                    }
                }
            }
            for (half, inc) in chunk.chunks_mut(d).enumerate() {
                let sign = if half == 0 { 1.0 } else { -1.0 };
                for i in 0..d {
                    let mut g = 0.0;
                    for k in 0..d {
                        g += self.cov_factor[(i, k)] * z[k];
                    }
                    inc[i] = self.gamma[i] * h + sign * sqrt_h * g + jump_sum[i] - h * self.compensator[i];
                }
            }
        });
        out
    }
}

/// Latin hypercube over antithetic pairs: coordinate `k` of pair `p` lies in
/// stratum `perm[k][p]` of `pairs` equal-probability strata.
struct LatinStrata {
    pairs: usize,
    perms: Vec<Vec<u32>>,
}

impl LatinStrata {
    fn new(coords: usize, pairs: usize, seed: u64, stream: u64, step: u64) -> Self {
        let perms = (0..coords)
            .map(|k| {
                let mut perm: Vec<u32> = (0..pairs as u32).collect();
                let mut r = rng::keyed_rng(seed, rng::mix(&[stream, 0x4c48_53, k as u64]), u64::MAX, step);
                perm.shuffle(&mut r);
                perm
            })
            .collect();
        Self { pairs, perms }
    }

    fn uniform<R: Rng + ?Sized>(&self, k: usize, p: usize, r: &mut R) -> f64 {
        let u: f64 = r.random();
        (self.perms[k][p] as f64 + u) / self.pairs as f64
    }

    fn normal<R: Rng + ?Sized>(&self, k: usize, p: usize, r: &mut R) -> f64 {
        let u = self.uniform(k, p, r).clamp(1e-300, 1.0 - 1e-16);
        STD_NORMAL.inverse_cdf(u)
    }
}

static STD_NORMAL: std::sync::LazyLock<Normal> =
    std::sync::LazyLock::new(|| Normal::new(0.0, 1.0).expect("standard normal"));

/// Smallest `k` with `P(N ≤ k) ≥ u` for `N ~ Poisson(mean)`.
fn poisson_quantile(mean: f64, u: f64) -> usize {
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    let mut k = 0;
    while cdf < u && k < 10_000 {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
        if pmf == 0.0 && cdf < u {
            break;
        }
    }
    k
}

/// Standard normal vectors in antithetic Latin-hypercube pairs, flattened `n × dim`.
pub(crate) fn standard_normals(dim: usize, n: usize, seed: u64, stream: u64, step: u64) -> Vec<f64> {
    let strata = LatinStrata::new(dim, n.div_ceil(2), seed, stream, step);
    let mut out = vec![0.0; n * dim];
    out.par_chunks_mut(2 * dim).enumerate().for_each(|(p, chunk)| {
        let mut r = rng::keyed_rng(seed, stream, p as u64, step);
        let z: Vec<f64> = (0..dim).map(|k| strata.normal(k, p, &mut r)).collect();
        for (half, v) in chunk.chunks_mut(dim).enumerate() {
            let sign = if half == 0 { 1.0 } else { -1.0 };
            for (o, zi) in v.iter_mut().zip(&z) {
                *o = sign * zi;
            }
        }
    });
    out
}

/// Simulated paths sharing a common starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub n_paths: usize,
    pub dim: usize,
    pub time_grid: Vec<f64>,
    /// Row-major `n_paths × time_grid.len() × dim`.
    pub states: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
}

impl PathBatch {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.time_grid.len() + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// `state(path, k) − state(path, k−1)` for `k ≥ 1`.
    pub fn increment(&self, path: usize, k: usize) -> Vec<f64> {
        let (a, b) = (self.state(path, k), self.state(path, k - 1));
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    /// One row per path per time point: `path,step,time,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path,step,time")?;
        for i in 0..self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for (k, t) in self.time_grid.iter().enumerate() {
                write!(w, "{p},{k},{t}")?;
                for v in self.state(p, k) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn validate_time_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(argument("time grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(argument("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Paths of the Lévy process `L` on `time_grid`, started at 0.
pub fn simulate_levy_increments(
    triplet: &LevyTriplet,
    time_grid: &[f64],
    n_paths: usize,
    seed: u64,
    stream_id: u64,
) -> Result<PathBatch> {
    validate_time_grid(time_grid)?;
    if n_paths == 0 {
        return Err(argument("n_paths must be positive"));
    }
    let d = triplet.dim;
    let len = time_grid.len();
    let mut states = vec![0.0; n_paths * len * d];
    for k in 1..len {
        let inc = triplet.sample_increments(time_grid[k] - time_grid[k - 1], n_paths, seed, stream_id, k as u64);
        for p in 0..n_paths {
            for i in 0..d {
                let prev = states[(p * len + k - 1) * d + i];
                states[(p * len + k) * d + i] = prev + inc[p * d + i];
            }
        }
    }
    Ok(PathBatch { n_paths, dim: d, time_grid: time_grid.to_vec(), states, seed, stream_id })
}

pub type DriftFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Finite-dimensional controlled Ornstein-Uhlenbeck model
/// `dX = (A X + b(X, α)) dt + θ dB` with `B` a `Q`-Brownian motion.
#[derive(Clone)]
pub struct OUModel {
    dim: usize,
    a_mat: DMatrix<f64>,
    omega: f64,
    b: Arc<DriftFn>,
    actions: Vec<Vec<f64>>,
    lip_c: f64,
    sigma: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
    q_factor: DMatrix<f64>,
}

impl std::fmt::Debug for OUModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OUModel")
            .field("dim", &self.dim)
            .field("a_mat", &self.a_mat)
            .field("omega", &self.omega)
            .field("actions", &self.actions)
            .field("lip_c", &self.lip_c)
            .field("sigma", &self.sigma)
            .field("q", &self.q)
            .finish()
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().fold(0.0f64, |a, &s| a.max(s))
}

impl OUModel {
    /// Validates the model and certifies `‖exp(tA)‖ ≤ e^{ωt}` on `[0, horizon]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<B>(
        a_mat: DMatrix<f64>,
        b: B,
        actions: Vec<Vec<f64>>,
        lip_c: f64,
        sigma: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self>
    where
        B: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let dim = a_mat.nrows();
        if dim == 0 || !a_mat.is_square() {
            return Err(Error::Model("A must be a nonempty square matrix".into()));
        }
        if actions.is_empty() {
            return Err(crate::error::config("action set is empty"));
        }
        if sigma.is_empty() {
            return Err(crate::error::config("volatility set is empty"));
        }
        for s in &sigma {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::Model(format!("volatility matrices must be {dim}x{dim}")));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::Model("volatility matrices must be finite".into()));
            }
        }
        if q.nrows() != dim || q.ncols() != dim {
            return Err(Error::Model(format!("Q must be {dim}x{dim}")));
        }
        let q_factor = psd_factor(&q, "Q")?;
        if !(lip_c >= 0.0) {
            return Err(Error::Model("Lipschitz constant C must be nonnegative".into()));
        }
        let b: Arc<DriftFn> = Arc::new(b);
        let zero = vec![0.0; dim];
        for a in &actions {
            if a.is_empty() {
                return Err(Error::Model("actions must be nonempty vectors".into()));
            }
            let b0 = b(&zero, a);
            if b0.len() != dim {
                return Err(Error::Model("drift b must return a state vector".into()));
            }
            if norm(&b0) > lip_c * (1.0 + 1e-12) {
                return Err(Error::Model(format!("‖b(0, {a:?})‖ = {} exceeds C = {lip_c}", norm(&b0))));
            }
        }
        // Spot-check the Lipschitz bound on seeded pairs in the ball of radius 4.
        for k in 0..256u64 {
            let x: Vec<f64> = rng::rotated_halton(k, dim, 0xb1).iter().map(|c| 8.0 * c - 4.0).collect();
            let y: Vec<f64> = rng::rotated_halton(k, dim, 0xb2).iter().map(|c| 8.0 * c - 4.0).collect();
            let a = &actions[(k as usize) % actions.len()];
            let diff: Vec<f64> = b(&x, a).iter().zip(b(&y, a)).map(|(p, q)| p - q).collect();
            let dist: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            if norm(&diff) > lip_c * dist * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Model(format!("b violates the Lipschitz bound C = {lip_c} at {x:?}, {y:?}")));
            }
        }
        let omega = certify_growth_bound(&a_mat, horizon)?;
        Ok(Self { dim, a_mat, omega, b, actions, lip_c, sigma, q, q_factor })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn lip_c(&self) -> f64 {
        self.lip_c
    }

    pub fn sigma(&self) -> &[DMatrix<f64>] {
        &self.sigma
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub(crate) fn q_factor(&self) -> &DMatrix<f64> {
        &self.q_factor
    }

    pub fn drift(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        (self.b)(x, a)
    }

    /// `exp(hA)`.
    pub fn transition_matrix(&self, h: f64) -> DMatrix<f64> {
        (&self.a_mat * h).exp()
    }

    /// Same model with `Q` replaced by `s·Q`.
    pub fn with_q_scaled(&self, s: f64) -> Result<Self> {
        let q = &self.q * s;
        let q_factor = psd_factor(&q, "Q")?;
        Ok(Self { q, q_factor, ..self.clone() })
    }
}

/// Logarithmic norm of `A`, checked against `‖exp(tA)‖₂` on a grid of `[0, horizon]`.
fn certify_growth_bound(a: &DMatrix<f64>, horizon: f64) -> Result<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let omega = SymmetricEigen::new(sym).eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
    let horizon = horizon.max(0.0);
    for k in 1..=64 {
        let t = horizon * k as f64 / 64.0;
        let nrm = spectral_norm(&(a * t).exp());
        if nrm > (omega * t).exp() * (1.0 + 1e-9) {
            return Err(Error::Model(format!("growth bound e^(ωt) with ω = {omega} fails at t = {t}")));
        }
    }
    Ok(omega)
}

/// Paths of the mild solution under discrete-time feedback policies using
/// the exponential-Euler step
/// `x' = e^{hA}x + h e^{hA} b(x, α) + e^{hA} θ ΔB`, `ΔB ~ N(0, Qh)`.
pub fn simulate_ou_mild(
    model: &OUModel,
    x0: &[f64],
    alpha_policy: &(dyn Fn(usize, &[f64]) -> Vec<f64> + Sync),
    theta_policy: &(dyn Fn(usize, &[f64]) -> DMatrix<f64> + Sync),
    time_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    validate_time_grid(time_grid)?;
    check_dim(model.dim, x0.len())?;
    if n_paths == 0 {
        return Err(argument("n_paths must be positive"));
    }
    let d = model.dim;
    let len = time_grid.len();
    let props: Vec<DMatrix<f64>> = time_grid.windows(2).map(|w| model.transition_matrix(w[1] - w[0])).collect();
    let mut states = vec![0.0; n_paths * len * d];
    states
        .par_chunks_mut(len * d)
        .enumerate()
        .try_for_each(|(p, path)| -> Result<()> {
            path[..d].copy_from_slice(x0);
            for k in 1..len {
                let h = time_grid[k] - time_grid[k - 1];
                let x = path[(k - 1) * d..k * d].to_vec();
                let a = alpha_policy(k - 1, &x);
                if !model.actions.iter().any(|m| *m == a) {
                    return Err(Error::Policy(format!("action {a:?} is not in the action set")));
                }
                let theta = theta_policy(k - 1, &x);
                if !model.sigma.iter().any(|s| *s == theta) {
                    return Err(Error::Policy("volatility is not an element of Sigma".into()));
                }
                let mut r = rng::keyed_rng(seed, 0x6f75, p as u64, k as u64);
                let z = DVector::from_iterator(d, (0..d).map(|_| r.sample::<f64, _>(StandardNormal)));
                let db = &model.q_factor * z * h.sqrt();
                let drift = DVector::from_vec(model.drift(&x, &a));
                let inner = DVector::from_vec(x) + drift * h + &theta * db;
                let next = &props[k - 1] * inner;
                path[k * d..(k + 1) * d].copy_from_slice(next.as_slice());
            }
            Ok(())
        })?;
    Ok(PathBatch { n_paths, dim: d, time_grid: time_grid.to_vec(), states, seed, stream_id: 0 })
}

/// `x ↦ mean_j u(x + L_t^{(j)})` with draws shared across all `x` when
/// `mc.crn` is set.
pub fn transition_expectation(
    u: &LatticeFunction,
    triplet: &LevyTriplet,
    t: f64,
    mc: &MCConfig,
) -> Result<LatticeFunction> {
    check_dim(u.dim(), triplet.dim)?;
    if !(t >= 0.0) {
        return Err(argument("t must be nonnegative"));
    }
    mc.validate()?;
    if t == 0.0 {
        return Ok(u.clone());
    }
    let d = triplet.dim;
    let n = mc.n_paths;
    let u_in = u.clone();
    let eval: Arc<crate::lattice::Evaluator> = if mc.crn {
        let samples = Arc::new(triplet.sample_increments(t, n, mc.seed, mc.stream_id, 0));
        Arc::new(move |x: &[f64]| mean_shifted(&u_in, x, &samples, d))
    } else {
        let tr = triplet.clone();
        let (seed, stream) = (mc.seed, mc.stream_id);
        Arc::new(move |x: &[f64]| {
            let samples = tr.sample_increments(t, n, seed, rng::mix(&[stream, rng::hash_f64s(x)]), 0);
            mean_shifted(&u_in, x, &samples, d)
        })
    };
    Ok(LatticeFunction::from_parts(d, u.bound(), u.lipschitz(), eval))
}

pub(crate) fn mean_shifted(u: &LatticeFunction, x: &[f64], samples: &[f64], d: usize) -> f64 {
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for s in samples.chunks(d) {
        for i in 0..d {
            y[i] = x[i] + s[i];
        }
        acc += u.eval(&y);
    }
    acc / (samples.len() / d) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_triplet_has_zero_increments() {
        let tr = LevyTriplet::zero(2);
        let batch = simulate_levy_increments(&tr, &[0.0, 0.5, 1.0], 10, 1, 0).unwrap();
        assert!(batch.states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_drift_increments() {
        let tr = LevyTriplet::new(vec![1.0], DMatrix::zeros(1, 1), 0.0, None).unwrap();
        let batch = simulate_levy_increments(&tr, &[0.0, 0.5, 1.0, 1.5], 7, 3, 0).unwrap();
        for p in 0..7 {
            for k in 1..4 {
                assert_eq!(batch.increment(p, k), vec![0.5]);
            }
        }
    }

    #[test]
    fn brownian_second_moment() {
        for d in [1, 2] {
            let tr = LevyTriplet::brownian(d, 1.0);
            let n = 100_000;
            let inc = tr.sample_increments(1.0, n, 42, 0, 0);
            // Antithetic pairs share ‖L‖², so the standard error uses pair means.
            let sq: Vec<f64> = inc.chunks(d).map(|c| c.iter().map(|v| v * v).sum()).collect();
            let pair: Vec<f64> = sq.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let m = sq.iter().sum::<f64>() / n as f64;
            let var = pair.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (pair.len() - 1) as f64;
            let se = (var / pair.len() as f64).sqrt();
            assert!((m - d as f64).abs() < 3.0 * se, "d={d} mean={m} se={se}");
        }
    }

    #[test]
    fn compensated_jump_mean() {
        // E[L_1] = γ + λ(E J − E[J 1{|J|≤1}]).
        let law = JumpLaw::Gaussian { mean: vec![0.5], std: 0.8 };
        let tr = LevyTriplet::new(vec![0.1], DMatrix::from_element(1, 1, 0.2), 2.0, Some(law.clone())).unwrap();
        let inc = tr.sample_increments(0.5, 200_000, 5, 0, 0);
        let m = inc.iter().sum::<f64>() / inc.len() as f64;
        let expect = 0.5 * (0.1 + 2.0 * (0.5 - law.truncated_mean()[0]));
        assert!((m - expect).abs() < 0.01, "{m} vs {expect}");
    }

    #[test]
    fn constant_jump_truncation() {
        assert_eq!(JumpLaw::Constant(vec![2.0]).truncated_mean(), vec![0.0]);
        assert_eq!(JumpLaw::Constant(vec![0.5]).truncated_mean(), vec![0.5]);
    }

    #[test]
    fn stratified_counts_match_poisson_mean() {
        let mut total = 0usize;
        let pairs = 10_000;
        for p in 0..pairs {
            total += poisson_quantile(0.3, (p as f64 + 0.5) / pairs as f64);
        }
        assert!((total as f64 / pairs as f64 - 0.3).abs() < 1e-3);
    }

    #[test]
    fn simulation_is_deterministic() {
        let tr = LevyTriplet::new(
            vec![0.2],
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            Some(JumpLaw::Gaussian { mean: vec![0.0], std: 1.0 }),
        )
        .unwrap();
        let a = simulate_levy_increments(&tr, &[0.0, 0.1, 0.3], 101, 9, 4).unwrap();
        let b = simulate_levy_increments(&tr, &[0.0, 0.1, 0.3], 101, 9, 4).unwrap();
        assert_eq!(a, b);
        let c = simulate_levy_increments(&tr, &[0.0, 0.1, 0.3], 101, 9, 5).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(LevyTriplet::new(vec![0.0, 0.0], cov, 0.0, None), Err(Error::Model(_))));
    }

    fn ou_1d(a: f64, drift_on: bool, q: f64) -> OUModel {
        OUModel::new(
            DMatrix::from_element(1, 1, a),
            move |_x, a| if drift_on { a.to_vec() } else { vec![0.0] },
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            1.0,
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, q),
            2.0,
        )
        .unwrap()
    }

    fn grid(t: f64, m: usize) -> Vec<f64> {
        (0..=m).map(|k| t * k as f64 / m as f64).collect()
    }

    #[test]
    fn ou_constant_path() {
        let m = ou_1d(0.0, false, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let b = simulate_ou_mild(&m, &[0.7], &|_, _| vec![0.0], &|_, _| one.clone(), &grid(1.0, 10), 3, 1).unwrap();
        assert!(b.states.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn ou_linear_decay() {
        let m = ou_1d(-1.0, false, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let b = simulate_ou_mild(&m, &[1.0], &|_, _| vec![0.0], &|_, _| one.clone(), &grid(1.0, 100), 2, 1).unwrap();
        assert!((b.state(0, 100)[0] - (-1.0f64).exp()).abs() < 1e-2);
    }

    #[test]
    fn ou_pure_drift() {
        let m = ou_1d(0.0, true, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let b = simulate_ou_mild(&m, &[0.25], &|_, _| vec![1.0], &|_, _| one.clone(), &grid(1.0, 50), 2, 1).unwrap();
        assert!((b.state(1, 50)[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn ou_with_zero_generator_is_euler_maruyama() {
        let m = ou_1d(0.0, true, 1.0);
        assert_eq!(m.transition_matrix(0.1), DMatrix::identity(1, 1));
        let one = DMatrix::from_element(1, 1, 1.0);
        let g = grid(1.0, 8);
        let b = simulate_ou_mild(&m, &[0.0], &|_, _| vec![1.0], &|_, _| one.clone(), &g, 1, 3).unwrap();
        let mut x = 0.0;
        for k in 1..=8 {
            let mut r = rng::keyed_rng(3, 0x6f75, 0, k as u64);
            let z: f64 = r.sample(StandardNormal);
            x += 0.125 * 1.0 + z * 0.125f64.sqrt();
            assert!((b.state(0, k)[0] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn ou_policy_errors() {
        let m = ou_1d(0.0, true, 1.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let two = DMatrix::from_element(1, 1, 2.0);
        let g = grid(1.0, 4);
        let bad_action = simulate_ou_mild(&m, &[0.0], &|_, _| vec![0.5], &|_, _| one.clone(), &g, 1, 3);
        assert!(matches!(bad_action, Err(Error::Policy(_))));
        let bad_sigma = simulate_ou_mild(&m, &[0.0], &|_, _| vec![1.0], &|_, _| two.clone(), &g, 1, 3);
        assert!(matches!(bad_sigma, Err(Error::Policy(_))));
    }

    #[test]
    fn ou_model_validation() {
        let bad_b = OUModel::new(
            DMatrix::from_element(1, 1, -1.0),
            |x, _a| vec![3.0 * x[0]],
            vec![vec![0.0]],
            1.0,
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, 1.0),
            1.0,
        );
        assert!(matches!(bad_b, Err(Error::Model(_))));
        let empty_sigma = OUModel::new(
            DMatrix::from_element(1, 1, -1.0),
            |_x, a| a.to_vec(),
            vec![vec![0.0]],
            1.0,
            vec![],
            DMatrix::from_element(1, 1, 1.0),
            1.0,
        );
        assert!(matches!(empty_sigma, Err(Error::Configuration(_))));
        let m = ou_1d(-1.0, true, 1.0);
        assert!((m.omega() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_one_row_per_path_and_time() {
        let tr = LevyTriplet::brownian(2, 1.0);
        let b = simulate_levy_increments(&tr, &[0.0, 0.5], 3, 1, 0).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        assert!(text.starts_with("path,step,time,x0,x1"));
    }

    fn gauss_bump() -> LatticeFunction {
        LatticeFunction::new(1, 1.0, Some(0.86), |x| (-x[0] * x[0]).exp()).unwrap()
    }

    #[test]
    fn transition_expectation_degenerate_cases() {
        let mc = MCConfig { n_paths: 1000, ..MCConfig::default() };
        let tr = LevyTriplet::brownian(1, 1.0);
        let u = gauss_bump();
        let same = transition_expectation(&u, &tr, 0.0, &mc).unwrap();
        assert_eq!(same.eval(&[0.3]), u.eval(&[0.3]));
        let k = LatticeFunction::constant(1, 2.5);
        let pk = transition_expectation(&k, &tr, 1.0, &mc).unwrap();
        assert!((pk.eval(&[0.1]) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn transition_expectation_gaussian_convolution() {
        let mc = MCConfig { n_paths: 200_000, ..MCConfig::default() };
        let tr = LevyTriplet::brownian(1, 1.0);
        let u = gauss_bump();
        for t in [0.25, 1.0] {
            let samples = tr.sample_increments(t, mc.n_paths, mc.seed, mc.stream_id, 0);
            let vals: Vec<f64> = samples.iter().map(|s| (-s * s).exp()).collect();
            let pairs: Vec<f64> = vals.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
            let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
            let var = pairs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (pairs.len() - 1) as f64;
            let se = (var / pairs.len() as f64).sqrt();
            let est = transition_expectation(&u, &tr, t, &mc).unwrap().eval(&[0.0]);
            let exact = 1.0 / (1.0 + 2.0 * t).sqrt();
            assert!((est - exact).abs() < 3.0 * se.max(1e-6), "t={t}: {est} vs {exact} (se {se})");
        }
    }

    #[test]
    fn transition_expectation_is_monotone_under_crn() {
        let mc = MCConfig { n_paths: 2000, ..MCConfig::default() };
        let tr = LevyTriplet::new(
            vec![0.3],
            DMatrix::from_element(1, 1, 0.5),
            1.0,
            Some(JumpLaw::Gaussian { mean: vec![0.2], std: 0.5 }),
        )
        .unwrap();
        let u = gauss_bump();
        let v = LatticeFunction::new(1, 1.5, None, |x| (-x[0] * x[0]).exp() + 0.5 * (-(x[0] - 1.0).powi(2)).exp())
            .unwrap();
        let pu = transition_expectation(&u, &tr, 0.7, &mc).unwrap();
        let pv = transition_expectation(&v, &tr, 0.7, &mc).unwrap();
        for i in 0..200 {
            let x = [-3.0 + 0.03 * i as f64];
            assert!(pu.eval(&x) <= pv.eval(&x) + 1e-12);
        }
    }
}
