//! Running costs and their conjugate transforms.
//!
//! For a cost `c` the module computes
//! `c*(b) = sup_a ⟨b,a⟩ − c(a)`, `c̄(M) = sup_a M‖a‖ − c(a)` and
//! `c̄̄(v) = sup_{w≥0} vw − c̄(w)`. Quadratic costs use closed forms; everything
//! else maximizes over a grid of the ball of radius `domain_radius`.

use std::sync::{Arc, OnceLock};

use crate::error::{config, Error, Result};
use crate::lattice::norm;
use crate::rng;

pub type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Radii at which superlinear growth `c(a)/‖a‖ ↑` is certified.
pub const CERTIFICATE_RADII: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_DOMAIN_RADIUS: f64 = 8.0;
/// Upper end of the `w` window used for `c̄̄`.
pub const W_MAX: f64 = 64.0;
const W_STEP: f64 = 1e-2;
const V_STEP: f64 = 1e-3;

#[derive(Clone)]
pub enum CostKind {
    /// `c(a) = ½ s ‖a‖²`.
    Quadratic { scale: f64 },
    /// `c(a) = k ‖a‖⁴`.
    Quartic { coef: f64 },
    /// Radial cost interpolated linearly from `(‖a‖, c)` knots, extended
    /// linearly past the last knot.
    TabulatedRadial { radii: Vec<f64>, values: Vec<f64> },
    Custom(Arc<CostFn>),
}

impl std::fmt::Debug for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostKind::Quadratic { scale } => write!(f, "Quadratic {{ scale: {scale} }}"),
            CostKind::Quartic { coef } => write!(f, "Quartic {{ coef: {coef} }}"),
            CostKind::TabulatedRadial { radii, .. } => write!(f, "TabulatedRadial({} knots)", radii.len()),
            CostKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Default)]
struct GridCache {
    /// Grid points of the ball, flattened.
    points: Vec<f64>,
    values: Vec<f64>,
    /// Upper convex hull of `(‖a‖, −c(a))`, sorted by radius.
    hull: Vec<(f64, f64)>,
    /// `c̄` tabulated on `[0, W_MAX]` with step `W_STEP`.
    cbar_table: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunningCost {
    dim: usize,
    kind: CostKind,
    domain_radius: f64,
    grid_step: f64,
    certificate: Vec<(f64, f64)>,
    cache: Arc<OnceLock<GridCache>>,
}

pub fn default_grid_step(dim: usize) -> f64 {
    match dim {
        1 => 1e-2,
        2 => 5e-2,
        _ => 0.2,
    }
}

impl RunningCost {
    pub fn new(dim: usize, kind: CostKind) -> Result<Self> {
        Self::with_domain(dim, kind, DEFAULT_DOMAIN_RADIUS, default_grid_step(dim))
    }

    pub fn quadratic(dim: usize, scale: f64) -> Result<Self> {
        Self::new(dim, CostKind::Quadratic { scale })
    }

    pub fn quartic(dim: usize, coef: f64) -> Result<Self> {
        Self::new(dim, CostKind::Quartic { coef })
    }

    pub fn custom<F>(dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, CostKind::Custom(Arc::new(f)))
    }

    pub fn with_domain(dim: usize, kind: CostKind, domain_radius: f64, grid_step: f64) -> Result<Self> {
        if dim == 0 {
            return Err(config("cost dimension must be positive"));
        }
        if !(domain_radius > 0.0) || !(grid_step > 0.0) || grid_step > domain_radius {
            return Err(config("domain radius and grid step must be positive with step ≤ radius"));
        }
        match &kind {
            CostKind::Quadratic { scale } if !(*scale > 0.0) => return Err(config("quadratic scale must be positive")),
            CostKind::Quartic { coef } if !(*coef > 0.0) => return Err(config("quartic coefficient must be positive")),
            CostKind::TabulatedRadial { radii, values } => {
                if radii.len() < 2 || radii.len() != values.len() {
                    return Err(config("tabulated cost needs at least two (radius, value) knots"));
                }
                if radii[0] != 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(config("tabulated radii must start at 0 and increase"));
                }
            }
            _ => {}
        }
        let mut cost = Self {
            dim,
            kind,
            domain_radius,
            grid_step,
            certificate: Vec::new(),
            cache: Arc::new(OnceLock::new()),
        };
        let zero = vec![0.0; dim];
        let c0 = cost.eval(&zero);
        if c0 != 0.0 {
            return Err(Error::Model(format!("running cost must vanish at 0, got c(0) = {c0}")));
        }
        for k in 0..256u64 {
            let a: Vec<f64> = rng::rotated_halton(k, dim, 0xc057)
                .iter()
                .map(|u| domain_radius * (2.0 * u - 1.0) / (dim as f64).sqrt())
                .collect();
            let c = cost.eval(&a);
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::Model(format!("running cost must be finite and nonnegative, got c({a:?}) = {c}")));
            }
        }
        let mut e1 = vec![0.0; dim];
        let mut cert = Vec::new();
        for r in CERTIFICATE_RADII {
            e1[0] = r;
            cert.push((r, cost.eval(&e1) / r));
        }
        if cert.windows(2).any(|w| !(w[1].1 > w[0].1)) {
            return Err(Error::Model(format!("running cost is not superlinear: c(a)/‖a‖ along e₁ = {cert:?}")));
        }
        cost.certificate = cert;
        Ok(cost)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn superlinearity_certificate(&self) -> &[(f64, f64)] {
        &self.certificate
    }

    pub fn is_quadratic(&self) -> Option<f64> {
        match self.kind {
            CostKind::Quadratic { scale } => Some(scale),
            _ => None,
        }
    }

    pub fn eval(&self, a: &[f64]) -> f64 {
        match &self.kind {
            CostKind::Quadratic { scale } => 0.5 * scale * a.iter().map(|v| v * v).sum::<f64>(),
            CostKind::Quartic { coef } => {
                let s: f64 = a.iter().map(|v| v * v).sum();
                coef * s * s
            }
            CostKind::TabulatedRadial { radii, values } => {
                let r = norm(a);
                let n = radii.len();
                let i = match radii.partition_point(|&k| k <= r) {
                    0 => 0,
                    p if p >= n => n - 2,
                    p => p - 1,
                };
                let w = (r - radii[i]) / (radii[i + 1] - radii[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
            CostKind::Custom(f) => f(a),
        }
    }

    fn cache(&self) -> &GridCache {
        self.cache.get_or_init(|| {
            let points = ball_grid(self.dim, self.domain_radius, self.grid_step);
            let values: Vec<f64> = points.chunks(self.dim).map(|a| self.eval(a)).collect();
            let mut radial: Vec<(f64, f64)> =
                points.chunks(self.dim).zip(&values).map(|(a, &c)| (norm(a), -c)).collect();
            radial.sort_by(|p, q| p.0.total_cmp(&q.0).then(q.1.total_cmp(&p.1)));
            radial.dedup_by(|p, q| p.0 == q.0);
            let hull = upper_hull(&radial);
            let mut cache = GridCache { points, values, hull, cbar_table: Vec::new() };
            let n_w = (W_MAX / W_STEP).round() as usize;
            cache.cbar_table = (0..=n_w).map(|k| hull_max(&cache.hull, k as f64 * W_STEP)).collect();
            cache
        })
    }

    /// `c*(b)` on the default grid.
    pub fn cstar(&self, b: &[f64]) -> f64 {
        if let Some(s) = self.is_quadratic() {
            return b.iter().map(|v| v * v).sum::<f64>() / (2.0 * s);
        }
        let cache = self.cache();
        let d = self.dim;
        cache
            .points
            .chunks(d)
            .zip(&cache.values)
            .fold(0.0f64, |m, (a, &c)| m.max(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() - c))
    }

    /// `c̄(M)`.
    pub fn cbar(&self, m: f64) -> f64 {
        if let Some(s) = self.is_quadratic() {
            return m * m / (2.0 * s);
        }
        hull_max(&self.cache().hull, m)
    }

    /// `c̄̄(v)`, or `+∞` when the maximizer reaches the end of the `w` window.
    pub fn cbarbar(&self, v: f64) -> f64 {
        if let Some(s) = self.is_quadratic() {
            return 0.5 * s * v * v;
        }
        let table = &self.cache().cbar_table;
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (k, c) in table.iter().enumerate() {
            let val = v * k as f64 * W_STEP - c;
            if val > best {
                best = val;
                arg = k;
            }
        }
        if arg + 1 == table.len() {
            f64::INFINITY
        } else {
            best
        }
    }

    /// Smallest `v` with `c̄̄(v) > 1 + lip_u·v`; optimal controls of a
    /// `lip_u`-Lipschitz terminal value have norm at most this.
    pub fn t_optimal_control_bound(&self, lip_u: f64) -> Result<f64> {
        if !(lip_u >= 0.0) {
            return Err(crate::error::argument("lip_u must be nonnegative"));
        }
        let excess = |v: f64| self.cbarbar(v) - 1.0 - lip_u * v;
        let n = (W_MAX / V_STEP).round() as usize;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=n {
            let v = k as f64 * V_STEP;
            if excess(v) > 0.0 {
                hi = Some(v);
                break;
            }
            lo = v;
        }
        let mut hi = hi.ok_or_else(|| config("control bound window exhausted: c̄̄(v) ≤ 1 + L v on [0, W_MAX]"))?;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// `c*(b)` maximized over a grid of the given step.
pub fn conjugate_cstar(cost: &RunningCost, b: &[f64], grid_step: f64) -> f64 {
    if (grid_step - cost.grid_step).abs() < 1e-15 || cost.is_quadratic().is_some() {
        return cost.cstar(b);
    }
    let pts = ball_grid(cost.dim, cost.domain_radius, grid_step);
    pts.chunks(cost.dim)
        .fold(0.0f64, |m, a| m.max(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() - cost.eval(a)))
}

/// Points of `step·Z^dim` in the closed ball of radius `r`, flattened.
pub(crate) fn ball_grid(dim: usize, r: f64, step: f64) -> Vec<f64> {
    let n = (r / step).floor() as i64;
    let side = (2 * n + 1) as usize;
    let total = side.pow(dim as u32);
    let mut out = Vec::new();
    let mut p = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for c in p.iter_mut() {
            *c = ((rem % side) as i64 - n) as f64 * step;
            rem /= side;
        }
        if norm(&p) <= r * (1.0 + 1e-12) {
            out.extend_from_slice(&p);
        }
    }
    out
}

fn upper_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_max(hull: &[(f64, f64)], m: f64) -> f64 {
    hull.iter().fold(f64::NEG_INFINITY, |best, &(r, nc)| best.max(m * r + nc))
}
