//! Initial data generators and the experiment families run on top of them:
//! single runs, parameter sweeps, and two-body collision probes.

use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    default_beta, default_gronwall_constant, energy_balance_residual, DiagnosticsRecord,
    DiagnosticsRecorder, GronwallCheck, GronwallMonitor,
};
use crate::error::{Error, Result};
use crate::integrator::{
    collision_time_oracle, EventKind, ExitReason, IntegrationResult, Integrator, IntegratorConfig,
};
use crate::kernel::KernelSpec;
use crate::state::ParticleState;

/// Name of the generator algorithm, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

/// Attempts per particle before uniform-box sampling gives up.
const MAX_PLACEMENT_TRIES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum InitSpec {
    /// Positions uniform in the centered cube `[-side/2, side/2]^d`.
    UniformBox { side: f64 },
    /// Row-major grid of the given spacing, filled from the origin.
    Lattice { spacing: f64 },
    /// Two particles on the first axis at distance `r0` with relative velocity `w0`.
    TwoBody { r0: f64, w0: f64 },
    /// First row of a trajectory file.
    Custom { file: PathBuf },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(alias = "N")]
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    #[serde(default)]
    pub delta: f64,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    pub init: InitSpec,
    #[serde(default)]
    pub velocity_scale: f64,
    /// Extra clearance above `delta` required at generation. Defaults to 5% of
    /// the characteristic spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Shift velocities so their mean is zero.
    #[serde(default = "default_true")]
    pub recenter: bool,
}

impl ScenarioSpec {
    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.alpha, self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel()?;
        if self.n < 2 {
            return Err(Error::Parameter(format!(
                "N must be at least 2, got {}",
                self.n
            )));
        }
        if self.d < 1 {
            return Err(Error::Parameter("d must be at least 1".into()));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::Parameter(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.velocity_scale.is_finite() && self.velocity_scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "velocity_scale must be nonnegative, got {}",
                self.velocity_scale
            )));
        }
        if let Some(m) = self.margin {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::Parameter(format!(
                    "margin must be nonnegative, got {m}"
                )));
            }
        }
        match &self.init {
            InitSpec::UniformBox { side } if !(*side > 0.0) => Err(Error::Parameter(format!(
                "box side must be positive, got {side}"
            ))),
            InitSpec::Lattice { spacing } if !(*spacing > 0.0) => Err(Error::Parameter(format!(
                "lattice spacing must be positive, got {spacing}"
            ))),
            InitSpec::TwoBody { r0, w0 } => {
                if self.n != 2 {
                    return Err(Error::Parameter(format!(
                        "TwoBody needs N = 2, got {}",
                        self.n
                    )));
                }
                if !(r0.is_finite() && *r0 > self.delta) || !w0.is_finite() {
                    return Err(Error::Parameter(format!(
                        "TwoBody needs finite r0 > delta and finite w0, got r0 = {r0}, w0 = {w0}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Mean inter-particle spacing implied by the initial layout.
    fn spacing(&self) -> f64 {
        match &self.init {
            InitSpec::UniformBox { side } => side / (self.n as f64).powf(1.0 / self.d as f64),
            InitSpec::Lattice { spacing } => *spacing,
            InitSpec::TwoBody { r0, .. } => *r0,
            InitSpec::Custom { .. } => 0.0,
        }
    }

    pub fn effective_margin(&self) -> f64 {
        self.margin.unwrap_or(0.05 * self.spacing())
    }
}

/// Builds the admissible initial state described by `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<ParticleState> {
    spec.validate()?;
    let k = spec.kernel()?;
    let n = spec.n;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_sep = spec.delta + spec.effective_margin();

    let x = match &spec.init {
        InitSpec::UniformBox { side } => uniform_box(&mut rng, n, d, *side, min_sep)?,
        InitSpec::Lattice { spacing } => {
            if !(*spacing > min_sep) {
                return Err(Error::Generation(format!(
                    "lattice spacing {spacing} does not exceed delta + margin = {min_sep}"
                )));
            }
            lattice(n, d, *spacing)
        }
        InitSpec::TwoBody { r0, w0 } => {
            let mut x = vec![0.0; 2 * d];
            x[d] = *r0;
            let mut v = vec![0.0; 2 * d];
            if spec.recenter {
                v[0] = -0.5 * w0;
                v[d] = 0.5 * w0;
            } else {
                v[d] = *w0;
            }
            let st = ParticleState::new(0.0, d, x, v)?;
            st.check_admissible(&k)?;
            return Ok(st);
        }
        InitSpec::Custom { file } => {
            let st = crate::io::read_initial_state(file)?;
            if st.n() != n || st.d() != d {
                return Err(Error::Generation(format!(
                    "{} holds N = {}, d = {} but the scenario declares N = {n}, d = {d}",
                    file.display(),
                    st.n(),
                    st.d()
                )));
            }
            st.check_admissible(&k)?;
            return Ok(st);
        }
    };

    let mut v: Vec<f64> = (0..n * d)
        .map(|_| {
            if spec.velocity_scale > 0.0 {
                rng.random_range(-spec.velocity_scale..=spec.velocity_scale)
            } else {
                0.0
            }
        })
        .collect();
    if spec.recenter {
        for c in 0..d {
            let mean = (0..n).map(|i| v[i * d + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                v[i * d + c] -= mean;
            }
        }
    }
    let st = ParticleState::new(0.0, d, x, v)?;
    st.check_admissible(&k)?;
    Ok(st)
}

fn uniform_box(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    side: f64,
    min_sep: f64,
) -> Result<Vec<f64>> {
    let half = 0.5 * side;
    let min_sep2 = min_sep * min_sep;
    let mut x: Vec<f64> = Vec::with_capacity(n * d);
    let mut candidate = vec![0.0; d];
    for i in 0..n {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            candidate
                .iter_mut()
                .for_each(|c| *c = rng.random_range(-half..half));
            let clear = x
                .chunks_exact(d)
                .all(|p| crate::state::dist2(p, &candidate) > min_sep2);
            if clear {
                x.extend_from_slice(&candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place particle {i} of {n} with clearance {min_sep} in a box of side {side} \
                 after {MAX_PLACEMENT_TRIES} tries"
            )));
        }
    }
    Ok(x)
}

fn lattice(n: usize, d: usize, spacing: f64) -> Vec<f64> {
    let mut m = 1usize;
    while m.pow(d as u32) < n {
        m += 1;
    }
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rest = i;
        let mut coords = vec![0.0; d];
        for c in (0..d).rev() {
            coords[c] = (rest % m) as f64 * spacing;
            rest /= m;
        }
        x.extend(coords);
    }
    x
}

/// Knobs for [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub sample_every: usize,
    /// Exponent of the `L_beta` column; [`default_beta`] when `None`.
    pub beta: Option<f64>,
    /// Keep the sampled states (same cadence as the records).
    pub keep_states: bool,
    /// Constant for the `alpha > 2` bound; [`default_gronwall_constant`] when `None`.
    pub gronwall_c: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            sample_every: 1,
            beta: None,
            keep_states: false,
            gronwall_c: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: ParticleState,
    pub result: IntegrationResult,
    pub records: Vec<DiagnosticsRecord>,
    pub states: Vec<ParticleState>,
    /// Bound check evaluated at every accepted step, for `alpha >= 2`.
    pub gronwall: Option<GronwallCheck>,
}

/// Integrates from `initial` to `t_end`, sampling diagnostics along the way.
pub fn run_from_state(
    k: &KernelSpec,
    cfg: &IntegratorConfig,
    initial: ParticleState,
    t_end: f64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let beta = opts.beta.unwrap_or_else(|| default_beta(k));
    let mut recorder = DiagnosticsRecorder::new(*k, beta, opts.sample_every)?;
    recorder.observe(&initial);
    let mut gronwall = if k.alpha >= 2.0 {
        let c = opts
            .gronwall_c
            .unwrap_or_else(|| default_gronwall_constant(k.alpha));
        Some(GronwallMonitor::new(k, c, &initial)?)
    } else {
        None
    };
    let mut gronwall_err = None;
    let mut states = Vec::new();
    if opts.keep_states {
        states.push(initial.clone());
    }
    let mut count = 0usize;
    let mut last_kept = true;

    let mut integ = Integrator::new(*k, *cfg)?;
    let result = integ.integrate(&initial, t_end, |st, outcome| {
        recorder.observe_step(st, outcome.dissipation);
        if let Some(m) = gronwall.as_mut() {
            if let Err(e) = m.observe(st) {
                gronwall_err.get_or_insert(e);
            }
        }
        count += 1;
        last_kept = count.is_multiple_of(opts.sample_every);
        if opts.keep_states && last_kept {
            states.push(st.clone());
        }
    })?;
    if let Some(e) = gronwall_err {
        return Err(e);
    }
    if opts.keep_states && !last_kept {
        states.push(result.state.clone());
    }
    Ok(RunOutput {
        initial,
        result,
        records: recorder.finish()?,
        states,
        gronwall: gronwall.map(GronwallMonitor::finish),
    })
}

/// Generates the scenario and runs it to `spec.t_end`.
pub fn run_scenario(
    spec: &ScenarioSpec,
    cfg: &IntegratorConfig,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let initial = generate(spec)?;
    run_from_state(&spec.kernel()?, cfg, initial, spec.t_end, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    N,
    #[serde(alias = "alpha")]
    Alpha,
    #[serde(alias = "delta")]
    Delta,
    #[serde(alias = "velocity_scale")]
    VelocityScale,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::N => "N",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Delta => "delta",
            SweepAxis::VelocityScale => "velocity_scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioSpec,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub replicates: usize,
}

fn one() -> usize {
    1
}

/// Seed of replicate `replicate` at sweep point `index`: first output of the
/// base generator on a dedicated stream.
pub fn derive_seed(base_seed: u64, index: usize, replicate: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(((index as u64) << 32) | replicate as u64);
    rng.next_u64()
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Parameter("sweep values must be nonempty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Parameter("replicates must be at least 1".into()));
        }
        if self.axis == SweepAxis::N && self.values.iter().any(|&v| v < 2.0 || v.fract() != 0.0) {
            return Err(Error::Parameter(
                "N sweep values must be integers >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Scenario for sweep point `index`, replicate `replicate`. Along the `N`
    /// axis a uniform box keeps the density of the base scenario.
    pub fn scenario(&self, index: usize, replicate: usize) -> ScenarioSpec {
        let mut s = self.base.clone();
        let value = self.values[index];
        match self.axis {
            SweepAxis::N => {
                let n = value as usize;
                if let InitSpec::UniformBox { side } = s.init {
                    let scale = (n as f64 / s.n as f64).powf(1.0 / s.d as f64);
                    s.init = InitSpec::UniformBox { side: side * scale };
                    if s.margin.is_none() {
                        s.margin = Some(self.base.effective_margin());
                    }
                }
                s.n = n;
            }
            SweepAxis::Alpha => s.alpha = value,
            SweepAxis::Delta => s.delta = value,
            SweepAxis::VelocityScale => s.velocity_scale = value,
        }
        s.seed = derive_seed(self.base.seed, index, replicate);
        s.name = format!(
            "{}[{}={}#{}]",
            self.base.name,
            self.axis.as_str(),
            value,
            replicate
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    Completed,
    Collision,
    StepFloor,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub replicate: usize,
    pub n: usize,
    pub seed: u64,
    pub status: RowStatus,
    pub message: Option<String>,
    pub t_final: f64,
    pub accepted_steps: u64,
    pub min_gap: f64,
    pub max_speed_ratio: f64,
    pub energy_residual: f64,
    /// `sup_t L^(alpha-2)(t)` for `alpha > 2`.
    pub sup_l_functional: Option<f64>,
    /// Bound on `L^(alpha-2)` at the final time for `alpha > 2`.
    pub bound_rhs: Option<f64>,
    pub bound_holds: Option<bool>,
}

fn failed_row(
    index: usize,
    value: f64,
    replicate: usize,
    spec: &ScenarioSpec,
    e: Error,
) -> SweepRow {
    SweepRow {
        index,
        value,
        replicate,
        n: spec.n,
        seed: spec.seed,
        status: RowStatus::Failed,
        message: Some(e.to_string()),
        t_final: f64::NAN,
        accepted_steps: 0,
        min_gap: f64::NAN,
        max_speed_ratio: f64::NAN,
        energy_residual: f64::NAN,
        sup_l_functional: None,
        bound_rhs: None,
        bound_holds: None,
    }
}

fn sweep_row(
    index: usize,
    value: f64,
    replicate: usize,
    spec: &ScenarioSpec,
    cfg: &IntegratorConfig,
) -> SweepRow {
    let out = match run_scenario(spec, cfg, &RunOptions::default()) {
        Ok(o) => o,
        Err(e) => return failed_row(index, value, replicate, spec, e),
    };
    let status = match out.result.exit {
        ExitReason::Completed => RowStatus::Completed,
        ExitReason::Collision => RowStatus::Collision,
        ExitReason::StepFloor => RowStatus::StepFloor,
    };
    let v0 = out.records[0].max_speed;
    let max_speed_ratio = if v0 > 0.0 {
        out.records.iter().map(|r| r.max_speed).fold(0.0, f64::max) / v0
    } else {
        1.0
    };
    let (sup_l, bound, holds) = match (&out.gronwall, spec.alpha > 2.0) {
        (Some(g), true) => (
            Some(g.samples.iter().map(|s| s.lhs).fold(0.0, f64::max)),
            g.samples.last().map(|s| s.rhs),
            Some(g.holds),
        ),
        _ => (None, None, None),
    };
    SweepRow {
        index,
        value,
        replicate,
        n: spec.n,
        seed: spec.seed,
        status,
        message: out
            .result
            .terminating_event()
            .map(|e| format!("{:?} at t = {}", e.kind, e.time)),
        t_final: out.result.state.t,
        accepted_steps: out.result.accepted_steps,
        min_gap: out
            .records
            .iter()
            .map(|r| r.min_gap)
            .fold(f64::INFINITY, f64::min),
        max_speed_ratio,
        energy_residual: energy_balance_residual(&out.records)
            .map(|r| r.value)
            .unwrap_or(f64::NAN),
        sup_l_functional: sup_l,
        bound_rhs: bound,
        bound_holds: holds,
    }
}

/// Runs every (value, replicate) point. Rows are independent and run in
/// parallel; the table is ordered by `(index, replicate)`. A failing row is
/// marked [`RowStatus::Failed`] without aborting the sweep.
pub fn run_sweep(sw: &SweepSpec, cfg: &IntegratorConfig) -> Result<Vec<SweepRow>> {
    sw.validate()?;
    cfg.validate()?;
    let points: Vec<(usize, usize)> = (0..sw.values.len())
        .flat_map(|i| (0..sw.replicates).map(move |r| (i, r)))
        .collect();
    Ok(points
        .into_par_iter()
        .map(|(i, r)| sweep_row(i, sw.values[i], r, &sw.scenario(i, r), cfg))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityRow {
    pub n: usize,
    pub replicate: usize,
    pub status: RowStatus,
    pub sup_l_functional: f64,
    pub bound_rhs: f64,
}

/// Sweep over `N` recording `sup_t L^(alpha-2)` against its a priori bound.
pub fn run_uniformity_sweep(sw: &SweepSpec, cfg: &IntegratorConfig) -> Result<Vec<UniformityRow>> {
    if sw.axis != SweepAxis::N {
        return Err(Error::Parameter(
            "uniformity sweep runs along the N axis".into(),
        ));
    }
    if !(sw.base.alpha > 2.0) {
        return Err(Error::Parameter(format!(
            "uniformity sweep needs alpha > 2, got {}",
            sw.base.alpha
        )));
    }
    Ok(run_sweep(sw, cfg)?
        .into_iter()
        .map(|r| UniformityRow {
            n: r.n,
            replicate: r.replicate,
            status: r.status,
            sup_l_functional: r.sup_l_functional.unwrap_or(f64::NAN),
            bound_rhs: r.bound_rhs.unwrap_or(f64::NAN),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub alpha: f64,
    pub r0: f64,
    pub w0: f64,
    pub t_max: f64,
    pub collided: bool,
    pub kind: Option<EventKind>,
    pub t_observed: Option<f64>,
    pub t_oracle: Option<f64>,
    pub time_rel_error: Option<f64>,
    /// `|v_i - v_j|` when the collision was declared.
    pub impact_speed: Option<f64>,
    /// `|w0 + Psi(r0)|` from the first integral.
    pub impact_speed_predicted: Option<f64>,
    pub impact_speed_rel_error: Option<f64>,
    pub exit: ExitReason,
    /// True when integration and oracle agree on whether contact happens.
    pub oracle_agrees: bool,
}

/// Integrates a head-on pair in one dimension and compares against the
/// first-integral oracle.
pub fn run_collision_probe(
    alpha: f64,
    r0: f64,
    w0: f64,
    t_max: f64,
    cfg: &IntegratorConfig,
) -> Result<ProbeReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "collision probes need alpha in (0, 1), got {alpha}"
        )));
    }
    let spec = ScenarioSpec {
        name: "probe".into(),
        n: 2,
        d: 1,
        alpha,
        delta: 0.0,
        t_end: t_max,
        seed: 0,
        init: InitSpec::TwoBody { r0, w0 },
        velocity_scale: 0.0,
        margin: Some(0.0),
        recenter: true,
    };
    let k = spec.kernel()?;
    let initial = generate(&spec)?;
    let t_oracle = collision_time_oracle(alpha, r0, w0)?;
    let mut integ = Integrator::new(k, *cfg)?;
    let result = integ.integrate(&initial, t_max, |_, _| {})?;
    let contact = result.events.iter().find(|e| e.kind.is_contact());

    let predicted = t_oracle.map(|_| (w0 + k.primitive_unchecked(r0)).abs());
    let t_observed = contact.map(|e| e.time);
    let impact_speed = contact.map(|e| e.rel_speed);
    let time_rel_error = match (t_observed, t_oracle) {
        (Some(a), Some(b)) => Some(((a - b) / b).abs()),
        _ => None,
    };
    let impact_speed_rel_error = match (impact_speed, predicted) {
        (Some(a), Some(b)) if b > 0.0 => Some(((a - b) / b).abs()),
        _ => None,
    };
    let oracle_agrees = match (contact, t_oracle) {
        (Some(_), Some(_)) => true,
        (None, None) => true,
        (None, Some(t)) => t > t_max,
        (Some(_), None) => false,
    };
    Ok(ProbeReport {
        alpha,
        r0,
        w0,
        t_max,
        collided: contact.is_some(),
        kind: contact.map(|e| e.kind),
        t_observed,
        t_oracle,
        time_rel_error,
        impact_speed,
        impact_speed_predicted: predicted,
        impact_speed_rel_error,
        exit: result.exit,
        oracle_agrees,
    })
}
