//! Particle configurations stored as flat row-major `N x d` arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Positions and velocities of `n` particles in `d` dimensions at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    n: usize,
    d: usize,
    x: Vec<f64>,
    v: Vec<f64>,
}

/// Closest pair of a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

impl ParticleState {
    /// Builds a state from flat row-major position and velocity arrays.
    pub fn new(t: f64, d: usize, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Shape("dimension d must be at least 1".into()));
        }
        if x.len() != v.len() {
            return Err(Error::Shape(format!(
                "positions have {} entries but velocities have {}",
                x.len(),
                v.len()
            )));
        }
        if !x.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} entries is not a multiple of d = {d}",
                x.len()
            )));
        }
        let n = x.len() / d;
        if n < 2 {
            return Err(Error::Shape(format!("need at least 2 particles, got {n}")));
        }
        if !t.is_finite() || x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(Error::Domain("state contains non-finite entries".into()));
        }
        Ok(ParticleState { t, n, d, x, v })
    }

    /// Builds a state from per-particle rows.
    pub fn from_rows(t: f64, x: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Self> {
        let d = x.first().map(Vec::len).unwrap_or(0);
        if x.iter().chain(v.iter()).any(|row| row.len() != d) {
            return Err(Error::Shape("all rows must have the same length".into()));
        }
        Self::new(t, d, x.concat(), v.concat())
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(t: f64, x: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(t, 1, x.to_vec(), v.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn vi(&self, i: usize) -> &[f64] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.xi(i), self.xi(j))
    }

    pub fn rel_speed(&self, i: usize, j: usize) -> f64 {
        dist(self.vi(i), self.vi(j))
    }

    /// Closest pair by Euclidean distance; ties keep the first pair in
    /// lexicographic `(i, j)` order.
    pub fn closest_pair(&self) -> ClosestPair {
        let mut best = ClosestPair {
            i: 0,
            j: 1,
            distance: f64::INFINITY,
        };
        for i in 0..self.n {
            let xi = self.xi(i);
            for j in i + 1..self.n {
                let r2 = dist2(xi, self.xi(j));
                if r2 < best.distance {
                    best = ClosestPair { i, j, distance: r2 };
                }
            }
        }
        best.distance = best.distance.sqrt();
        best
    }

    pub fn min_distance(&self) -> f64 {
        self.closest_pair().distance
    }

    /// Largest `|v_i - v_j|` over all pairs.
    pub fn max_rel_speed(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            let vi = self.vi(i);
            for j in i + 1..self.n {
                best = best.max(dist2(vi, self.vi(j)));
            }
        }
        best.sqrt()
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.n).map(|i| norm(self.vi(i))).fold(0.0, f64::max)
    }

    pub fn max_position_norm(&self) -> f64 {
        (0..self.n).map(|i| norm(self.xi(i))).fold(0.0, f64::max)
    }

    pub fn x_center(&self) -> Vec<f64> {
        mean_rows(&self.x, self.n, self.d)
    }

    pub fn v_center(&self) -> Vec<f64> {
        mean_rows(&self.v, self.n, self.d)
    }

    /// Checks every pairwise distance exceeds `k.delta`; the error names the
    /// first offending pair.
    pub fn check_admissible(&self, k: &KernelSpec) -> Result<()> {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let r = self.distance(i, j);
                if !(r > k.delta) {
                    return Err(Error::Inadmissible {
                        i,
                        j,
                        gap: r,
                        delta: k.delta,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_admissible(&self, k: &KernelSpec) -> bool {
        self.check_admissible(k).is_ok()
    }

    /// Returns a copy with particle rows reordered so that new row `r` is old
    /// row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut x = Vec::with_capacity(self.x.len());
        let mut v = Vec::with_capacity(self.v.len());
        for &p in perm {
            x.extend_from_slice(self.xi(p));
            v.extend_from_slice(self.vi(p));
        }
        ParticleState { x, v, ..*self }
    }

    pub(crate) fn from_parts_unchecked(
        t: f64,
        n: usize,
        d: usize,
        x: Vec<f64>,
        v: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(x.len(), n * d);
        debug_assert_eq!(v.len(), n * d);
        ParticleState { t, n, d, x, v }
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Time derivative of a [`ParticleState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub dx: Vec<f64>,
    pub dv: Vec<f64>,
}

impl StateDerivative {
    pub fn dvi(&self, i: usize, d: usize) -> &[f64] {
        &self.dv[i * d..(i + 1) * d]
    }

    /// Component-wise sum of `dv` over particles.
    pub fn momentum_rate(&self, d: usize) -> Vec<f64> {
        let n = self.dv.len() / d;
        let mut s = vec![0.0; d];
        for i in 0..n {
            for (a, c) in s.iter_mut().zip(self.dvi(i, d)) {
                *a += c;
            }
        }
        s
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn mean_rows(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (a, c) in m.iter_mut().zip(row) {
            *a += c;
        }
    }
    m.iter_mut().for_each(|c| *c /= n as f64);
    m
}
