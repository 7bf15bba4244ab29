//! Two-body reduction: relative distance `r` and relative velocity `w` obey
//! `r' = w`, `w' = -psi(r) w`, so `w + Psi(r)` is conserved while `r > 0`.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::quadrature;

const ORACLE_REL_TOL: f64 = 1e-10;
const ORACLE_MAX_INTERVALS: usize = 20_000;

/// Contact time of a head-on pair under a sub-critical weight, or `None`
/// when the first integral stops the pair before contact.
///
/// Contact happens iff `w0 + Psi(r0) <= 0`; the time is then
/// `int_0^r0 dr / (Psi(r) - Psi(r0) - w0)`. The integral is evaluated after
/// substituting `r = r0 u^(1/alpha)`, which maps `Psi(r)` to a power of `u` and
/// removes the endpoint singularity of the marginal case.
pub fn collision_time_oracle(alpha: f64, r0: f64, w0: f64) -> Result<Option<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "collision time is only finite for alpha in (0, 1), got {alpha}"
        )));
    }
    if !(r0.is_finite() && r0 > 0.0) {
        return Err(Error::Domain(format!("r0 must be positive, got {r0}")));
    }
    if !w0.is_finite() {
        return Err(Error::Domain(format!("w0 must be finite, got {w0}")));
    }
    if w0 >= 0.0 {
        return Ok(None);
    }
    let k = KernelSpec { alpha, delta: 0.0 };
    let psi_r0 = k.primitive_unchecked(r0);
    // Psi(0+) = 0 below the critical exponent; positive residual speed at
    // r = 0 is c = -(w0 + Psi(r0)).
    let c = -(w0 + psi_r0);
    if c < 0.0 {
        return Ok(None);
    }
    let p = 1.0 / alpha;
    let q = (1.0 - alpha) / alpha;
    let integrand = |u: f64| {
        if u == 0.0 {
            // u^(p-1) / (psi_r0 u^q + c) as u -> 0
            return if c > 0.0 { 0.0 } else { r0 * p / psi_r0 };
        }
        r0 * p * u.powf(p - 1.0) / (psi_r0 * u.powf(q) + c)
    };
    let quad = quadrature::integrate(
        integrand,
        0.0,
        1.0,
        ORACLE_REL_TOL,
        0.0,
        ORACLE_MAX_INTERVALS,
    )?;
    Ok(Some(quad.value))
}

/// Smallest separation reached by an approaching pair (`w0 < 0`): the root of
/// `Psi(r) = w0 + Psi(r0)`, or `0` when that root does not exist (contact).
/// Separating pairs return `r0`.
pub fn closest_approach(k: &KernelSpec, r0: f64, w0: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(Error::Domain(format!("r0 must be positive, got {r0}")));
    }
    if w0 >= 0.0 {
        return Ok(r0);
    }
    let level = w0 + k.primitive_unchecked(r0);
    let alpha = k.alpha;
    if alpha == 1.0 {
        return Ok(level.exp());
    }
    let base = (1.0 - alpha) * level;
    if base <= 0.0 {
        // only reachable for alpha < 1: Psi >= 0 cannot hit a nonpositive level
        return Ok(0.0);
    }
    Ok(base.powf(1.0 / (1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn separating_pairs_never_collide() {
        assert_eq!(collision_time_oracle(0.5, 1.0, 0.0).unwrap(), None);
        assert_eq!(collision_time_oracle(0.5, 1.0, 3.0).unwrap(), None);
    }

    #[test]
    fn rejects_supercritical_exponents() {
        assert!(collision_time_oracle(1.0, 1.0, -5.0).is_err());
        assert!(collision_time_oracle(2.0, 1.0, -5.0).is_err());
        assert!(collision_time_oracle(0.5, 0.0, -5.0).is_err());
    }

    #[test]
    fn closed_form_head_on() {
        // alpha = 1/2, r0 = 1, w0 = -4: int_0^1 dr / (2 + 2 sqrt r) = 1 - ln 2
        let t = collision_time_oracle(0.5, 1.0, -4.0).unwrap().unwrap();
        assert_relative_eq!(t, 1.0 - 2f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn marginal_contact_time() {
        // w0 = -Psi(r0): arrival with zero speed after (1 - alpha) r0^alpha / alpha
        for (alpha, r0) in [(0.5, 1.0), (0.25, 2.0), (0.8, 0.3)] {
            let k = KernelSpec { alpha, delta: 0.0 };
            let w0 = -k.primitive(r0).unwrap();
            let t = collision_time_oracle(alpha, r0, w0).unwrap().unwrap();
            assert_relative_eq!(
                t,
                (1.0 - alpha) * r0.powf(alpha) / alpha,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn barrier_just_above_threshold_blocks_contact() {
        let w0 = -2.0 * (1.0 - 1e-9);
        assert_eq!(collision_time_oracle(0.5, 1.0, w0).unwrap(), None);
    }

    #[test]
    fn substitution_agrees_with_direct_quadrature() {
        for (alpha, r0, w0) in [(0.5, 1.0, -3.0), (0.3, 2.0, -5.0), (0.9, 0.5, -12.0)] {
            let k = KernelSpec { alpha, delta: 0.0 };
            let psi_r0 = k.primitive(r0).unwrap();
            let direct = quadrature::integrate(
                |r: f64| 1.0 / (k.primitive_unchecked(r) - psi_r0 - w0),
                0.0,
                r0,
                1e-10,
                0.0,
                200_000,
            )
            .unwrap()
            .value;
            let t = collision_time_oracle(alpha, r0, w0).unwrap().unwrap();
            assert_relative_eq!(t, direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn closest_approach_values() {
        let k1 = KernelSpec {
            alpha: 1.0,
            delta: 0.0,
        };
        assert_relative_eq!(closest_approach(&k1, 1.0, -2.0).unwrap(), (-2f64).exp());
        let k3 = KernelSpec {
            alpha: 3.0,
            delta: 0.0,
        };
        // -1 - 1/2 = -1/(2 r^2)  =>  r = 1/sqrt(3)
        assert_relative_eq!(
            closest_approach(&k3, 1.0, -1.0).unwrap(),
            3f64.sqrt().recip(),
            max_relative = 1e-14
        );
        let kh = KernelSpec {
            alpha: 0.5,
            delta: 0.0,
        };
        assert_eq!(closest_approach(&kh, 1.0, -4.0).unwrap(), 0.0);
        assert_relative_eq!(
            closest_approach(&kh, 1.0, -1.0).unwrap(),
            0.25,
            max_relative = 1e-14
        );
        assert_eq!(closest_approach(&kh, 1.0, 1.0).unwrap(), 1.0);
    }
}
