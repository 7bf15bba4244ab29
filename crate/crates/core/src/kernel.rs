//! The singular communication weight `psi(s) = s^-alpha`, its shifted form
//! `psi_delta(s) = psi(s - delta)`, and the primitive `Psi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent and shift of the communication weight.
///
/// `delta = 0` is the plain model; `delta > 0` widens the singular set from
/// `{0}` to `[0, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    #[serde(default)]
    pub delta: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        let k = KernelSpec { alpha, delta };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Parameter(format!(
                "delta must be finite and nonnegative, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Weight at distance `s`, i.e. `(s - delta)^-alpha`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        let gap = s - self.delta;
        if !(gap > 0.0) {
            return Err(Error::Domain(format!(
                "kernel argument {s} is inside the singular set [0, {}]",
                self.delta
            )));
        }
        Ok(self.weight_of_gap(gap))
    }

    /// `gap^-alpha` for a gap already known to be positive.
    #[inline]
    pub(crate) fn weight_of_gap(&self, gap: f64) -> f64 {
        if self.alpha == 1.0 {
            1.0 / gap
        } else if self.alpha == 2.0 {
            1.0 / (gap * gap)
        } else {
            gap.powf(-self.alpha)
        }
    }

    /// Primitive of the unshifted weight: `ln s` for `alpha = 1`, otherwise
    /// `s^(1-alpha) / (1-alpha)`. Callers apply the shift themselves.
    pub fn primitive(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "primitive argument must be positive, got {s}"
            )));
        }
        Ok(self.primitive_unchecked(s))
    }

    #[inline]
    pub(crate) fn primitive_unchecked(&self, s: f64) -> f64 {
        if self.alpha == 1.0 {
            s.ln()
        } else {
            s.powf(1.0 - self.alpha) / (1.0 - self.alpha)
        }
    }

    /// `int_a^inf psi(s - delta) ds`, infinite when `alpha <= 1`.
    pub fn tail_integral(&self, a: f64) -> Result<f64> {
        let gap = a - self.delta;
        if !(gap > 0.0) {
            return Err(Error::Domain(format!(
                "tail integral lower limit {a} is inside the singular set [0, {}]",
                self.delta
            )));
        }
        if self.alpha <= 1.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(-self.primitive_unchecked(gap))
        }
    }
}

/// `(s - delta)^-alpha`; errors when `s <= delta`.
pub fn kernel_eval(k: &KernelSpec, s: f64) -> Result<f64> {
    k.eval(s)
}

/// Primitive `Psi(s)` of `s^-alpha`.
pub fn psi_primitive(k: &KernelSpec, s: f64) -> Result<f64> {
    k.primitive(s)
}
