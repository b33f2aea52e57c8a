//! Regular state grids, multilinear interpolation and sampled transition
//! kernels.
//!
//! A kernel built from samples `ξ_j` is the exact average
//! `G(x_i) = mean_j I(V)(x_i + ξ_j)` of the interpolant `I(V)`, with the
//! interpolation weights of all samples aggregated per integer offset. The
//! weights are nonnegative, so applying a kernel is linear and monotone in
//! `V`, including under floating-point rounding.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{argument, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct StateGrid {
    dim: usize,
    /// Nodes per axis (odd, so the origin is a node).
    n: usize,
    half_width: f64,
    dx: f64,
}

impl StateGrid {
    pub fn new(dim: usize, half_width: f64, dx: f64) -> Result<Self> {
        if dim == 0 || !(half_width > 0.0) || !(dx > 0.0) || dx > half_width {
            return Err(argument("grid needs positive dimension, half-width and spacing ≤ half-width"));
        }
        let half = (half_width / dx).round().max(1.0) as usize;
        let n = 2 * half + 1;
        if (n as f64).powi(dim as i32) > 5e7 {
            return Err(argument(format!("grid with {n}^{dim} nodes is too large")));
        }
        Ok(Self { dim, n, half_width, dx: half_width / half as f64 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn per_axis(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    /// All nodes, flattened `len × dim`, first axis fastest.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for flat in 0..self.len() {
            let mut rem = flat;
            for _ in 0..self.dim {
                out.push(self.coord(rem % self.n));
                rem /= self.n;
            }
        }
        out
    }

    /// Multilinear interpolation of node values, constant beyond the boundary.
    pub fn interp(&self, values: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let last = (self.n - 1) as f64;
        if self.dim == 1 {
            let p = ((x[0] + self.half_width) / self.dx).clamp(0.0, last);
            let i = (p.floor() as usize).min(self.n - 2);
            let f = p - i as f64;
            return values[i] * (1.0 - f) + values[i + 1] * f;
        }
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut fr = [0.0f64; 8];
        let mut strides = [0usize; 8];
        for k in 0..self.dim {
            let p = ((x[k] + self.half_width) / self.dx).clamp(0.0, last);
            let i = (p.floor() as usize).min(self.n - 2);
            fr[k] = p - i as f64;
            base += i * stride;
            strides[k] = stride;
            stride *= self.n;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    w *= fr[k];
                    idx += strides[k];
                } else {
                    w *= 1.0 - fr[k];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

/// Averaging kernel over integer node offsets.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// Dense 1-d weights for offsets `min_offset, min_offset + 1, ...`.
    Line { min_offset: i64, weights: Vec<f64> },
    /// Sparse offsets in any dimension, sorted.
    Sparse { dim: usize, offsets: Vec<i64>, weights: Vec<f64> },
}

impl Kernel {
    /// Kernel of the empirical law of `samples` (flattened `n × dim`).
    pub fn from_samples(grid: &StateGrid, samples: &[f64]) -> Self {
        let d = grid.dim;
        let n = samples.len() / d;
        let inv_n = 1.0 / n as f64;
        if d == 1 {
            let (mut lo, mut hi) = (i64::MAX, i64::MIN);
            for &s in samples {
                let k = (s / grid.dx).floor() as i64;
                lo = lo.min(k);
                hi = hi.max(k + 1);
            }
            let mut weights = vec![0.0; (hi - lo + 1) as usize];
            for &s in samples {
                let p = s / grid.dx;
                let k = p.floor();
                let f = p - k;
                let i = (k as i64 - lo) as usize;
                weights[i] += 1.0 - f;
                weights[i + 1] += f;
            }
            weights.iter_mut().for_each(|w| *w *= inv_n);
            return Kernel::Line { min_offset: lo, weights };
        }
        let mut map: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        let mut key = vec![0i64; d];
        for s in samples.chunks(d) {
            let base: Vec<i64> = s.iter().map(|v| (v / grid.dx).floor() as i64).collect();
            let fr: Vec<f64> = s.iter().zip(&base).map(|(v, b)| v / grid.dx - *b as f64).collect();
            for corner in 0..(1usize << d) {
                let mut w = 1.0;
                for k in 0..d {
                    if corner >> k & 1 == 1 {
                        w *= fr[k];
                        key[k] = base[k] + 1;
                    } else {
                        w *= 1.0 - fr[k];
                        key[k] = base[k];
                    }
                }
                if w != 0.0 {
                    *map.entry(key.clone()).or_insert(0.0) += w;
                }
            }
        }
        let mut offsets = Vec::with_capacity(map.len() * d);
        let mut weights = Vec::with_capacity(map.len());
        for (k, w) in map {
            offsets.extend_from_slice(&k);
            weights.push(w * inv_n);
        }
        Kernel::Sparse { dim: d, offsets, weights }
    }

    /// Number of stored offsets.
    pub fn support(&self) -> usize {
        match self {
            Kernel::Line { weights, .. } | Kernel::Sparse { weights, .. } => weights.len(),
        }
    }

    /// `G_i = Σ_k w_k V[clamp(i + k)]`.
    pub fn apply(&self, grid: &StateGrid, values: &[f64]) -> Vec<f64> {
        let n = grid.n as i64;
        match self {
            Kernel::Line { min_offset, weights } => {
                let lo = *min_offset;
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut acc = 0.0;
                        let start = i + lo;
                        let end = start + weights.len() as i64 - 1;
                        if start >= 0 && end < n {
                            let s = start as usize;
                            for (w, v) in weights.iter().zip(&values[s..s + weights.len()]) {
                                acc += w * v;
                            }
                        } else {
                            for (k, w) in weights.iter().enumerate() {
                                let j = (start + k as i64).clamp(0, n - 1) as usize;
                                acc += w * values[j];
                            }
                        }
                        acc
                    })
                    .collect()
            }
            Kernel::Sparse { dim, offsets, weights } => {
                let d = *dim;
                (0..grid.len())
                    .into_par_iter()
                    .map(|flat| {
                        let mut idx = [0i64; 8];
                        let mut rem = flat;
                        for c in idx.iter_mut().take(d) {
                            *c = (rem % grid.n) as i64;
                            rem /= grid.n;
                        }
                        let mut acc = 0.0;
                        for (off, w) in offsets.chunks(d).zip(weights) {
                            let mut j = 0usize;
                            let mut stride = 1usize;
                            for k in 0..d {
                                j += ((idx[k] + off[k]).clamp(0, n - 1) as usize) * stride;
                                stride *= grid.n;
                            }
                            acc += w * values[j];
                        }
                        acc
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_reproduces_affine_functions() {
        for d in [1, 2, 3] {
            let g = StateGrid::new(d, 2.0, 0.25).unwrap();
            let nodes = g.nodes();
            let f = |x: &[f64]| 0.5 + x.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * v).sum::<f64>();
            let vals: Vec<f64> = nodes.chunks(d).map(f).collect();
            for x in [vec![0.13; d], vec![-1.71; d], vec![1.99; d]] {
                assert!((g.interp(&vals, &x) - f(&x)).abs() < 1e-12);
            }
            // Flat extension.
            let far = vec![5.0; d];
            assert!((g.interp(&vals, &far) - f(&vec![2.0; d])).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_matches_direct_average_of_interpolant() {
        for d in [1, 2] {
            let g = StateGrid::new(d, 2.0, 0.1).unwrap();
            let nodes = g.nodes();
            let vals: Vec<f64> = nodes.chunks(d).map(|x| (x.iter().sum::<f64>()).sin()).collect();
            let samples: Vec<f64> = (0..37 * d).map(|k| ((k * 7919) % 113) as f64 / 40.0 - 1.4).collect();
            let kern = Kernel::from_samples(&g, &samples);
            let out = kern.apply(&g, &vals);
            for (i, x) in nodes.chunks(d).enumerate().step_by(97) {
                let direct: f64 = samples
                    .chunks(d)
                    .map(|s| {
                        let y: Vec<f64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
                        g.interp(&vals, &y)
                    })
                    .sum::<f64>()
                    / 37.0;
                assert!((out[i] - direct).abs() < 1e-12, "d={d} i={i}");
            }
        }
    }

    #[test]
    fn zero_samples_give_identity_kernel() {
        let g = StateGrid::new(1, 1.0, 0.5).unwrap();
        let k = Kernel::from_samples(&g, &[0.0; 10]);
        let v = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        assert_eq!(k.apply(&g, &v), v);
    }
}
