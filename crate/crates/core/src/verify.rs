//! Consistency checks on a stored trajectory: the properties every exact
//! solution has, tested sample by sample.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    default_gronwall_constant, energy_balance_residual, gronwall_bound_check, kinetic,
    DiagnosticsRecord,
};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::state::{dist, ParticleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Relative slack on the max-speed and position-growth bounds.
    pub rel_slack: f64,
    /// Allowed drift of the mean velocity, relative to `max(1, max_speed(0))`.
    pub momentum_tol: f64,
    /// Bound on the relative energy residual when diagnostics are supplied.
    pub energy_tol: f64,
    /// Constant of the `alpha > 2` bound.
    pub gronwall_c: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            rel_slack: 1e-6,
            momentum_tol: 1e-9,
            energy_tol: 1e-5,
            gronwall_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity, in the units of `limit`.
    pub worst: f64,
    pub limit: f64,
    /// Time of the worst sample.
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub samples: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn violations(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Tracks the sample with the largest excess `value - limit`.
struct Worst {
    name: &'static str,
    worst: f64,
    limit: f64,
    at: f64,
    excess: f64,
    /// Fail on `value == limit` too.
    strict: bool,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Worst {
            name,
            worst: f64::NAN,
            limit: f64::NAN,
            at: f64::NAN,
            excess: f64::NEG_INFINITY,
            strict: false,
        }
    }

    fn strict(name: &'static str) -> Self {
        Worst {
            strict: true,
            ..Worst::new(name)
        }
    }

    fn see(&mut self, t: f64, value: f64, limit: f64) {
        let excess = if value.is_nan() {
            f64::INFINITY
        } else {
            value - limit
        };
        if excess > self.excess {
            *self = Worst {
                name: self.name,
                worst: value,
                limit,
                at: t,
                excess,
                strict: self.strict,
            };
        }
    }

    fn result(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: if self.strict {
                self.excess < 0.0
            } else {
                self.excess <= 0.0
            },
            worst: self.worst,
            limit: self.limit,
            at: self.at,
        }
    }
}

/// Runs every check on `states` (first entry is the initial state).
///
/// - `admissible`: `min_gap - delta` stays positive (reported negated, limit 0).
/// - `max_speed`: `max_i |v_i(t)| <= max_i |v_i(0)|`.
/// - `position_growth`: `max_i |x_i(t) - x_c(0)| <= max_i |x_i(0) - x_c(0)| + t max_speed(0)`.
/// - `momentum`: `|v_c(t) - v_c(0)|_inf` stays at rounding level.
/// - `kinetic_decay`: kinetic energy never increases.
/// - `energy_balance`: relative residual of the energy identity, only when
///   `diagnostics` are given.
/// - `gronwall`: the a priori bound on the collision functional, for `alpha >= 2`.
pub fn verify_trajectory(
    k: &KernelSpec,
    states: &[ParticleState],
    diagnostics: Option<&[DiagnosticsRecord]>,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let first = states
        .first()
        .ok_or_else(|| Error::Parameter("trajectory has no samples".into()))?;
    let t0 = first.t;
    let speed0 = first.max_speed();
    let xc0 = first.x_center();
    let vc0 = first.v_center();
    let spread0 = (0..first.n())
        .map(|i| dist(first.xi(i), &xc0))
        .fold(0.0, f64::max);
    let kin0 = kinetic(first);
    let scale = 1.0 + opts.rel_slack;
    let mom_limit = opts.momentum_tol * speed0.max(1.0);

    let mut admissible = Worst::strict("admissible");
    let mut speed = Worst::new("max_speed");
    let mut growth = Worst::new("position_growth");
    let mut momentum = Worst::new("momentum");
    let mut decay = Worst::new("kinetic_decay");
    let mut kin_prev = kin0;
    for st in states {
        if st.n() != first.n() || st.d() != first.d() {
            return Err(Error::Shape(format!(
                "sample at t = {} changes shape",
                st.t
            )));
        }
        let s = st.t - t0;
        admissible.see(st.t, k.delta - st.min_distance(), 0.0);
        speed.see(st.t, st.max_speed(), speed0 * scale);
        let spread = (0..st.n())
            .map(|i| dist(st.xi(i), &xc0))
            .fold(0.0, f64::max);
        growth.see(st.t, spread, (spread0 + s * speed0) * scale);
        let drift = st
            .v_center()
            .iter()
            .zip(&vc0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        momentum.see(st.t, drift, mom_limit);
        let kin = kinetic(st);
        decay.see(st.t, kin, kin_prev * scale);
        kin_prev = kin;
    }
    let mut checks = vec![
        admissible.result(),
        speed.result(),
        growth.result(),
        momentum.result(),
        decay.result(),
    ];

    if let Some(records) = diagnostics {
        let r = energy_balance_residual(records)?;
        checks.push(CheckResult {
            name: "energy_balance".into(),
            passed: r.value <= opts.energy_tol,
            worst: r.value,
            limit: opts.energy_tol,
            at: records.last().map(|r| r.t).unwrap_or(f64::NAN),
        });
    }

    if k.alpha >= 2.0 && checks[0].passed {
        let c = opts
            .gronwall_c
            .unwrap_or_else(|| default_gronwall_constant(k.alpha));
        let g = gronwall_bound_check(k, states, c)?;
        let at = g
            .samples
            .iter()
            .min_by(|a, b| (a.rhs - a.lhs).total_cmp(&(b.rhs - b.lhs)))
            .map(|s| s.t)
            .unwrap_or(t0);
        checks.push(CheckResult {
            name: "gronwall".into(),
            passed: g.holds,
            worst: -g.worst_margin,
            limit: 0.0,
            at,
        });
    }

    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        samples: states.len(),
        checks,
    })
}
