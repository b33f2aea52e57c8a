//! Independent closed-form and quadrature oracles for the Lévy example.

use serde::Serialize;

use crate::costs::RunningCost;
use crate::dynamics::LevyTriplet;
use crate::engine::MCConfig;
use crate::error::{argument, Result};
use crate::lattice::{check_dim, LatticeFunction};

/// `sup_y u₀(y) − t c((y − x)/t)` over the supplied `y` grid.
pub fn hopf_lax_oracle(u0: &LatticeFunction, cost: &RunningCost, t: f64, x: &[f64], y_grid: &[Vec<f64>]) -> Result<f64> {
    check_dim(u0.dim(), x.len())?;
    check_dim(cost.dim(), x.len())?;
    if !(t > 0.0) {
        return Err(argument("Hopf-Lax oracle needs t > 0"));
    }
    if y_grid.is_empty() {
        return Err(argument("empty y grid"));
    }
    let mut a = vec![0.0; x.len()];
    let mut best = f64::NEG_INFINITY;
    for y in y_grid {
        for i in 0..x.len() {
            a[i] = (y[i] - x[i]) / t;
        }
        best = best.max(u0.eval(y) - t * cost.eval(&a));
    }
    Ok(best)
}

/// `center ± half_width` sampled with the given step, as 1-d points.
pub fn line_grid(center: f64, half_width: f64, step: f64) -> Vec<Vec<f64>> {
    let n = (half_width / step).round() as i64;
    (-n..=n).map(|k| vec![center + k as f64 * step]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// `log E exp(u₀(x + B_t))` for a standard Brownian motion `B`, the value of
/// the quadratic-cost problem `c(a) = ½‖a‖²`.
pub fn hopf_cole_oracle(u0: &LatticeFunction, t: f64, x: &[f64], mc: &MCConfig) -> Result<OracleEstimate> {
    check_dim(u0.dim(), x.len())?;
    if !(t >= 0.0) {
        return Err(argument("t must be nonnegative"));
    }
    mc.validate()?;
    if t == 0.0 {
        return Ok(OracleEstimate { value: u0.eval(x), std_err: 0.0 });
    }
    let d = x.len();
    let bm = LevyTriplet::brownian(d, 1.0);
    let samples = bm.sample_increments(t, mc.n_paths, mc.seed, crate::rng::mix(&[mc.stream_id, 0x686f_7066]), 0);
    let mut y = vec![0.0; d];
    let vals: Vec<f64> = samples
        .chunks(d)
        .map(|s| {
            for i in 0..d {
                y[i] = x[i] + s[i];
            }
            u0.eval(&y)
        })
        .collect();
    // Log-sum-exp around the maximum for stability.
    let shift = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = vals.iter().map(|v| (v - shift).exp()).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let pairs: Vec<f64> = e.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let pm = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let var = pairs.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / (pairs.len().max(2) - 1) as f64;
    let std_err = (var / pairs.len() as f64).sqrt() / mean;
    Ok(OracleEstimate { value: shift + mean.ln(), std_err })
}

/// Closed form of the quadratic-cost Brownian value for `u₀(x) = −α x²` in
/// one dimension: `−½ log(1 + 2αt) − αx² / (1 + 2αt)`.
pub fn hopf_cole_quadratic(alpha: f64, t: f64, x: f64) -> f64 {
    let s = 1.0 + 2.0 * alpha * t;
    -0.5 * s.ln() - alpha * x * x / s
}
