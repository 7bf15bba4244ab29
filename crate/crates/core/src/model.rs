//! Right-hand side of the (shifted) Cucker-Smale system and the a priori
//! flocking condition.
//!
//! Pairwise sums skip the diagonal `j = i`: there the factor `v_j - v_i`
//! vanishes while the weight is singular, and zero is the only finite value.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::state::{dist2, ParticleState, StateDerivative};

/// Rows per block of the pair loop. Fixed so the reduction order depends only
/// on `n`, never on the worker count.
const PAIR_BLOCK_ROWS: usize = 16;

/// Below this many particles the pair loop runs as a single block.
const PARALLEL_MIN_N: usize = 64;

/// `dx = v`, `dv_i = (1/N) sum_{j != i} psi_delta(|x_i - x_j|) (v_j - v_i)`.
pub fn rhs(k: &KernelSpec, st: &ParticleState) -> Result<StateDerivative> {
    let dv = acceleration(k, st.n(), st.d(), st.x(), st.v())?;
    Ok(StateDerivative {
        dx: st.v().to_vec(),
        dv,
    })
}

/// Velocity equation on raw flat arrays.
pub(crate) fn acceleration(
    k: &KernelSpec,
    n: usize,
    d: usize,
    x: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    Ok(acceleration_dissipation(k, n, d, x, v)?.0)
}

/// Velocity equation together with the dissipation rate
/// `(1/N^2) sum_{i != j} psi_delta(|x_i - x_j|) |v_i - v_j|^2`, which shares
/// the pair loop.
pub(crate) fn acceleration_dissipation(
    k: &KernelSpec,
    n: usize,
    d: usize,
    x: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let mut dv = vec![0.0; n * d];
    if n < PARALLEL_MIN_N {
        let diss = accumulate_rows(k, n, d, x, v, 0..n, &mut dv)?;
        return Ok((dv, diss));
    }

    let n_blocks = n.div_ceil(PAIR_BLOCK_ROWS);
    let partials: Vec<Result<(Vec<f64>, f64)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * PAIR_BLOCK_ROWS;
            let hi = (lo + PAIR_BLOCK_ROWS).min(n);
            let mut part = vec![0.0; n * d];
            let diss = accumulate_rows(k, n, d, x, v, lo..hi, &mut part)?;
            Ok((part, diss))
        })
        .collect();

    let mut diss = 0.0;
    for (b, part) in partials.into_iter().enumerate() {
        let (part, block_diss) = part?;
        diss += block_diss;
        // rows below the block start are untouched by it
        let start = b * PAIR_BLOCK_ROWS * d;
        for (acc, p) in dv[start..].iter_mut().zip(&part[start..]) {
            *acc += p;
        }
    }
    Ok((dv, diss))
}

/// Adds the pair terms of `rows` into `dv` and returns their share of the
/// dissipation rate.
fn accumulate_rows(
    k: &KernelSpec,
    n: usize,
    d: usize,
    x: &[f64],
    v: &[f64],
    rows: std::ops::Range<usize>,
    dv: &mut [f64],
) -> Result<f64> {
    let inv_n = 1.0 / n as f64;
    let mut diss = 0.0;
    for i in rows {
        let xi = &x[i * d..(i + 1) * d];
        for j in i + 1..n {
            let r = dist2(xi, &x[j * d..(j + 1) * d]).sqrt();
            let gap = r - k.delta;
            if !(gap > 0.0) {
                return Err(Error::Inadmissible {
                    i,
                    j,
                    gap: r,
                    delta: k.delta,
                });
            }
            let w = k.weight_of_gap(gap) * inv_n;
            let mut dv2 = 0.0;
            for c in 0..d {
                let u = v[j * d + c] - v[i * d + c];
                let f = w * u;
                dv[i * d + c] += f;
                dv[j * d + c] -= f;
                dv2 += u * u;
            }
            diss += w * dv2;
        }
    }
    // each unordered pair stands for (i, j) and (j, i)
    Ok(2.0 * inv_n * diss)
}

/// Outcome of the a priori flocking test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlockingCondition {
    pub holds: bool,
    /// Right side minus left side; `+inf` when the tail integral diverges.
    pub margin: f64,
}

/// Checks `max_i |v_i - v_c| < (1/2) int_{2 max_i |x_i - x_c|}^inf psi(s - delta) ds`.
///
/// For `alpha <= 1` the integral diverges and the condition holds for every
/// admissible state. With `delta > 0` the position spread must exceed `delta`.
pub fn flocking_condition(k: &KernelSpec, st: &ParticleState) -> Result<FlockingCondition> {
    st.check_admissible(k)?;
    let xc = st.x_center();
    let vc = st.v_center();
    let x_spread = (0..st.n())
        .map(|i| dist2(st.xi(i), &xc).sqrt())
        .fold(0.0, f64::max);
    let v_spread = (0..st.n())
        .map(|i| dist2(st.vi(i), &vc).sqrt())
        .fold(0.0, f64::max);

    if k.delta > 0.0 && !(x_spread > k.delta) {
        return Err(Error::Domain(format!(
            "position spread {x_spread} must exceed delta {} for the shifted flocking condition",
            k.delta
        )));
    }
    if k.alpha <= 1.0 {
        return Ok(FlockingCondition {
            holds: true,
            margin: f64::INFINITY,
        });
    }
    let rhs = 0.5 * k.tail_integral(2.0 * x_spread)?;
    let margin = rhs - v_spread;
    Ok(FlockingCondition {
        holds: margin > 0.0,
        margin,
    })
}
