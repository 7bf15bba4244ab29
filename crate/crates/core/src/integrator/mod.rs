//! Embedded Runge-Kutta integration of the particle system.
//!
//! The stepper is Dormand-Prince 5(4) with a PI step-size controller. On top of
//! the error control every attempted step obeys a gap cap
//! `dt <= eta (|x_i - x_j| - delta) / |v_i - v_j|` for every pair, so a
//! single step cannot carry a pair across the singular set. There is no regularization of the
//! kernel: close encounters are resolved by shrinking the step.

mod oracle;
mod rk4;

pub use oracle::{closest_approach, collision_time_oracle};
pub use rk4::integrate_fixed_rk4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::model::acceleration_dissipation;
use crate::state::{dist2, ClosestPair, ParticleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Fraction `eta` of the remaining distance to the singular set a step may consume.
    pub gap_safety: f64,
    /// A pair within `delta + collision_gap` counts as collided.
    pub collision_gap: f64,
    /// Collided pairs slower than this relative speed are classified as sticking.
    pub sticking_vel: f64,
    /// Entering `delta + near_gap` emits a near-collision event.
    pub near_gap: f64,
    pub max_steps: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            dt_init: 1e-3,
            dt_min: 1e-12,
            dt_max: 0.05,
            gap_safety: 0.1,
            collision_gap: 1e-9,
            sticking_vel: 1e-7,
            near_gap: 1e-3,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
            ("collision_gap", self.collision_gap),
            ("sticking_vel", self.sticking_vel),
            ("near_gap", self.near_gap),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.dt_min < self.dt_max) {
            return Err(Error::Parameter(format!(
                "dt_min ({}) must be below dt_max ({})",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.gap_safety > 0.0 && self.gap_safety <= 1.0) {
            return Err(Error::Parameter(format!(
                "gap_safety must lie in (0, 1], got {}",
                self.gap_safety
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Parameter("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Same config with both tolerances scaled by `factor`.
    pub fn with_tolerance_scale(mut self, factor: f64) -> Self {
        self.rel_tol *= factor;
        self.abs_tol *= factor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    NearCollision,
    Collision,
    Sticking,
    StepFloor,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::NearCollision => "NearCollision",
            EventKind::Collision => "Collision",
            EventKind::Sticking => "Sticking",
            EventKind::StepFloor => "StepFloor",
        }
    }

    /// Collision and sticking both end a run.
    pub fn is_contact(&self) -> bool {
        matches!(self, EventKind::Collision | EventKind::Sticking)
    }
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NearCollision" => Ok(EventKind::NearCollision),
            "Collision" => Ok(EventKind::Collision),
            "Sticking" => Ok(EventKind::Sticking),
            "StepFloor" => Ok(EventKind::StepFloor),
            other => Err(Error::Parameter(format!("unknown event kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub pair: (usize, usize),
    /// Distance `|x_i - x_j|`, not shifted by `delta`.
    pub gap: f64,
    pub rel_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: ParticleState,
    /// False only for a step-floor halt, in which case `state` is the input.
    pub accepted: bool,
    pub dt_used: f64,
    /// Controller proposal for the next step.
    pub dt_next: f64,
    pub error_estimate: f64,
    pub rejected_attempts: u32,
    pub events: Vec<EventRecord>,
    /// Integral of the dissipation rate over the step, by the same
    /// fifth-order quadrature that advances the state.
    pub dissipation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitReason {
    Completed,
    Collision,
    StepFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult {
    pub state: ParticleState,
    pub events: Vec<EventRecord>,
    pub exit: ExitReason,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

impl IntegrationResult {
    pub fn terminating_event(&self) -> Option<&EventRecord> {
        match self.exit {
            ExitReason::Completed => None,
            _ => self.events.last(),
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const PI_BETA: f64 = 0.04;
const PI_EXPONENT: f64 = 0.2 - 0.75 * PI_BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
/// Shrink factor after a stage left the admissible set.
const FAC_INADMISSIBLE: f64 = 0.25;

struct Attempt {
    x: Vec<f64>,
    v: Vec<f64>,
    dv_end: Vec<f64>,
    diss_end: f64,
    dissipation: f64,
    error: f64,
}

/// Result of a single embedded step at a fixed `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedStep {
    pub state: ParticleState,
    /// Weighted max-norm of the embedded error estimate.
    pub error: f64,
}

/// Adaptive stepper. Keeps the controller history and the first-same-as-last
/// derivative between calls.
pub struct Integrator {
    kernel: KernelSpec,
    cfg: IntegratorConfig,
    err_prev: f64,
    fsal: Option<Fsal>,
}

struct Fsal {
    t: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
    diss: f64,
    closest: ClosestPair,
}

impl Integrator {
    pub fn new(kernel: KernelSpec, cfg: IntegratorConfig) -> Result<Self> {
        kernel.validate()?;
        cfg.validate()?;
        Ok(Integrator {
            kernel,
            cfg,
            err_prev: 1e-4,
            fsal: None,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// Largest step allowed by the gap cap at `st`: the smallest
    /// `eta (|x_i - x_j| - delta) / |v_i - v_j|` over pairs. This never falls
    /// below `eta (min_gap - delta) / max_rel_speed`, and a close but slow pair
    /// is not throttled by a fast pair far away.
    pub fn gap_cap(&self, st: &ParticleState) -> f64 {
        let n = st.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let w2 = dist2(st.vi(i), st.vi(j));
                if w2 > 0.0 {
                    let gap = dist2(st.xi(i), st.xi(j)).sqrt() - self.kernel.delta;
                    // largest inverse time to contact
                    worst = worst.max(w2.sqrt() / gap);
                }
            }
        }
        if worst > 0.0 {
            self.cfg.gap_safety / worst
        } else {
            f64::INFINITY
        }
    }

    /// One accepted step from `st`, retrying with smaller `dt` on rejection.
    pub fn step(&mut self, st: &ParticleState, dt_proposed: f64) -> Result<StepOutcome> {
        self.step_bounded(st, dt_proposed, f64::INFINITY)
    }

    /// Like [`Integrator::step`] but never steps past `t_limit`; a step that
    /// reaches it lands on `t_limit` exactly. A step shortened only to hit
    /// that bound is exempt from the step floor.
    pub fn step_bounded(
        &mut self,
        st: &ParticleState,
        dt_proposed: f64,
        t_limit: f64,
    ) -> Result<StepOutcome> {
        let max_advance = t_limit - st.t;
        let (dv0, diss0, closest) = self.start_of_step(st)?;
        let cap = self.gap_cap(st);
        let mut dt = dt_proposed.min(self.cfg.dt_max).min(cap);
        let mut rejected = 0u32;

        loop {
            if dt < self.cfg.dt_min && dt < max_advance {
                let pair = (closest.i, closest.j);
                return Ok(StepOutcome {
                    state: st.clone(),
                    accepted: false,
                    dt_used: 0.0,
                    dt_next: dt,
                    error_estimate: f64::NAN,
                    rejected_attempts: rejected,
                    events: vec![EventRecord {
                        time: st.t,
                        kind: EventKind::StepFloor,
                        pair,
                        gap: closest.distance,
                        rel_speed: st.rel_speed(pair.0, pair.1),
                    }],
                    dissipation: 0.0,
                });
            }
            let last = dt >= max_advance;
            let h = if last { max_advance } else { dt };

            let attempt = match attempt(&self.kernel, &self.cfg, st, &dv0, diss0, h) {
                Ok(a) => a,
                Err(Error::Inadmissible { .. }) => {
                    rejected += 1;
                    dt = h * FAC_INADMISSIBLE;
                    continue;
                }
                Err(e) => return Err(e),
            };

            if attempt.error <= 1.0 && attempt.error.is_finite() {
                let err = attempt.error.max(1e-4);
                let mut fac = SAFETY * err.powf(-PI_EXPONENT) * self.err_prev.powf(PI_BETA);
                fac = fac.clamp(FAC_MIN, FAC_MAX);
                if rejected > 0 {
                    fac = fac.min(1.0);
                }
                self.err_prev = err;
                let dt_next = (h * fac).min(self.cfg.dt_max);

                let n = st.n();
                let d = st.d();
                let t_new = if last { t_limit } else { st.t + h };
                let state = ParticleState::from_parts_unchecked(t_new, n, d, attempt.x, attempt.v);
                if !state.all_finite() {
                    return Err(Error::Domain(format!(
                        "non-finite state after step at t = {}",
                        st.t
                    )));
                }
                let new_closest = state.closest_pair();
                let events = self.classify(&state, &closest, &new_closest);
                self.fsal = Some(Fsal {
                    t: state.t,
                    x: state.x().to_vec(),
                    v: state.v().to_vec(),
                    dv: attempt.dv_end,
                    diss: attempt.diss_end,
                    closest: new_closest,
                });
                return Ok(StepOutcome {
                    state,
                    accepted: true,
                    dt_used: h,
                    dt_next,
                    error_estimate: attempt.error,
                    rejected_attempts: rejected,
                    events,
                    dissipation: attempt.dissipation,
                });
            }

            rejected += 1;
            let fac = if attempt.error.is_finite() {
                (SAFETY * attempt.error.powf(-0.2)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            dt = h * fac.min(1.0);
        }
    }

    fn start_of_step(&mut self, st: &ParticleState) -> Result<(Vec<f64>, f64, ClosestPair)> {
        if let Some(f) = self.fsal.take() {
            if f.t == st.t && f.x == st.x() && f.v == st.v() {
                return Ok((f.dv, f.diss, f.closest));
            }
        }
        let (dv, diss) = acceleration_dissipation(&self.kernel, st.n(), st.d(), st.x(), st.v())?;
        Ok((dv, diss, st.closest_pair()))
    }

    fn classify(
        &self,
        st: &ParticleState,
        before: &ClosestPair,
        after: &ClosestPair,
    ) -> Vec<EventRecord> {
        let delta = self.kernel.delta;
        let pair = (after.i, after.j);
        let rel_speed = st.rel_speed(after.i, after.j);
        let record = |kind| EventRecord {
            time: st.t,
            kind,
            pair,
            gap: after.distance,
            rel_speed,
        };
        let mut events = Vec::new();
        let near = delta + self.cfg.near_gap;
        if after.distance < near && (before.distance >= near || (before.i, before.j) != pair) {
            events.push(record(EventKind::NearCollision));
        }
        if after.distance <= delta + self.cfg.collision_gap {
            let kind = if rel_speed <= self.cfg.sticking_vel {
                EventKind::Sticking
            } else {
                EventKind::Collision
            };
            events.push(record(kind));
        }
        events
    }

    /// Advances to `t_end`, calling `observer` after every accepted step.
    /// Stops early at the first collision or step-floor event.
    pub fn integrate<F>(
        &mut self,
        st0: &ParticleState,
        t_end: f64,
        mut observer: F,
    ) -> Result<IntegrationResult>
    where
        F: FnMut(&ParticleState, &StepOutcome),
    {
        st0.check_admissible(&self.kernel)?;
        if !(t_end >= st0.t) {
            return Err(Error::Parameter(format!(
                "t_end ({t_end}) must not precede the initial time ({})",
                st0.t
            )));
        }
        let mut state = st0.clone();
        let mut events = Vec::new();
        let mut accepted = 0u64;
        let mut rejected = 0u64;
        let mut dt = self.cfg.dt_init;
        let mut exit = ExitReason::Completed;

        while state.t < t_end {
            if accepted >= self.cfg.max_steps {
                return Err(Error::StepLimit(self.cfg.max_steps));
            }
            let outcome = self.step_bounded(&state, dt, t_end)?;
            rejected += outcome.rejected_attempts as u64;
            if !outcome.accepted {
                events.extend_from_slice(&outcome.events);
                exit = ExitReason::StepFloor;
                break;
            }
            accepted += 1;
            observer(&outcome.state, &outcome);
            let contact = outcome.events.iter().any(|e| e.kind.is_contact());
            events.extend_from_slice(&outcome.events);
            dt = outcome.dt_next;
            state = outcome.state;
            if contact {
                exit = ExitReason::Collision;
                break;
            }
        }

        Ok(IntegrationResult {
            state,
            events,
            exit,
            accepted_steps: accepted,
            rejected_steps: rejected,
        })
    }
}

/// Single fixed-`dt` Dormand-Prince step without step control or gap cap.
pub fn embedded_step(
    k: &KernelSpec,
    cfg: &IntegratorConfig,
    st: &ParticleState,
    dt: f64,
) -> Result<EmbeddedStep> {
    let (dv0, diss0) = acceleration_dissipation(k, st.n(), st.d(), st.x(), st.v())?;
    let a = attempt(k, cfg, st, &dv0, diss0, dt)?;
    Ok(EmbeddedStep {
        state: ParticleState::from_parts_unchecked(st.t + dt, st.n(), st.d(), a.x, a.v),
        error: a.error,
    })
}

/// Advances `st` with the adaptive stepper; see [`Integrator::integrate`].
pub fn integrate<F>(
    k: &KernelSpec,
    cfg: &IntegratorConfig,
    st0: &ParticleState,
    t_end: f64,
    observer: F,
) -> Result<IntegrationResult>
where
    F: FnMut(&ParticleState, &StepOutcome),
{
    Integrator::new(*k, *cfg)?.integrate(st0, t_end, observer)
}

fn attempt(
    k: &KernelSpec,
    cfg: &IntegratorConfig,
    st: &ParticleState,
    dv0: &[f64],
    diss0: f64,
    dt: f64,
) -> Result<Attempt> {
    let n = st.n();
    let d = st.d();
    let m = n * d;
    let x = st.x();
    let v = st.v();

    // Stage slopes: the x-slope of stage s is the stage velocity.
    let mut kx: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut kv: Vec<Vec<f64>> = Vec::with_capacity(7);
    kx.push(v.to_vec());
    kv.push(dv0.to_vec());
    let mut diss = [0.0; 7];
    diss[0] = diss0;

    let mut xs = vec![0.0; m];
    let mut vs = vec![0.0; m];
    for s in 1..7 {
        for c in 0..m {
            let mut ax = 0.0;
            let mut av = 0.0;
            for (j, a) in A[s][..s].iter().enumerate() {
                ax += a * kx[j][c];
                av += a * kv[j][c];
            }
            xs[c] = x[c] + dt * ax;
            vs[c] = v[c] + dt * av;
        }
        let (dv, rate) = acceleration_dissipation(k, n, d, &xs, &vs)?;
        diss[s] = rate;
        kx.push(vs.clone());
        kv.push(dv);
    }
    const { assert!(C[6] == 1.0) };

    // Stage 7 sits at the fifth-order solution.
    let mut error = 0.0f64;
    for c in 0..m {
        let mut ex = 0.0;
        let mut ev = 0.0;
        for s in 0..7 {
            ex += E[s] * kx[s][c];
            ev += E[s] * kv[s][c];
        }
        let sx = cfg.abs_tol + cfg.rel_tol * x[c].abs().max(xs[c].abs());
        let sv = cfg.abs_tol + cfg.rel_tol * v[c].abs().max(vs[c].abs());
        error = error.max((dt * ex).abs() / sx).max((dt * ev).abs() / sv);
    }
    if error.is_nan() {
        error = f64::INFINITY;
    }

    // the fifth-order weights are the last row of A
    let dissipation = dt * A[6].iter().zip(&diss).map(|(b, r)| b * r).sum::<f64>();

    Ok(Attempt {
        x: xs,
        v: vs,
        dv_end: kv.pop().unwrap(),
        diss_end: diss[6],
        dissipation,
        error,
    })
}
