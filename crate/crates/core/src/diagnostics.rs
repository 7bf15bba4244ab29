//! Monitored functionals of a trajectory and the residual checks built on
//! them: energy balance, the Gronwall-type bounds on the collision functional,
//! and exponential flocking decay.
//!
//! Double sums over particles skip the diagonal `i = j`, which is singular
//! for every functional here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::state::{dist, dist2, norm, ParticleState};

/// One time sample of every monitored functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Smallest pairwise distance (unshifted).
    pub min_gap: f64,
    pub max_speed: f64,
    pub v_center: Vec<f64>,
    /// `(1/N) sum |v_i|^2`.
    pub kinetic: f64,
    /// Time integral of the dissipation rate since the first sample.
    pub dissipation_integral: f64,
    pub l_beta: f64,
    pub log_functional: f64,
    /// `max_{i,j} |v_i - v_j|`.
    pub vel_diam_inf: f64,
    /// `max_{i,j} |x_i - x_j|`.
    pub pos_diam_inf: f64,
}

/// Pairwise sums gathered in one sweep.
struct PairSums {
    min_gap: f64,
    l_beta: f64,
    log_sum: f64,
    dissipation: f64,
    vel_diam: f64,
    pos_diam: f64,
}

fn pair_sums(k: &KernelSpec, st: &ParticleState, beta: f64) -> Result<PairSums> {
    let n = st.n();
    let mut s = PairSums {
        min_gap: f64::INFINITY,
        l_beta: 0.0,
        log_sum: 0.0,
        dissipation: 0.0,
        vel_diam: 0.0,
        pos_diam: 0.0,
    };
    for i in 0..n {
        for j in i + 1..n {
            let r = st.distance(i, j);
            let gap = r - k.delta;
            if !(gap > 0.0) {
                return Err(Error::Inadmissible {
                    i,
                    j,
                    gap: r,
                    delta: k.delta,
                });
            }
            let dv2 = dist2(st.vi(i), st.vi(j));
            s.min_gap = s.min_gap.min(r);
            s.l_beta += gap.powf(-beta);
            s.log_sum += gap.ln();
            s.dissipation += k.weight_of_gap(gap) * dv2;
            s.vel_diam = s.vel_diam.max(dv2);
            s.pos_diam = s.pos_diam.max(r);
        }
    }
    // each unordered pair stands for (i, j) and (j, i)
    let scale = 2.0 / (n * n) as f64;
    s.l_beta *= scale;
    s.log_sum *= scale;
    s.dissipation *= scale;
    s.vel_diam = s.vel_diam.sqrt();
    Ok(s)
}

/// `(1/N^2) sum_{i != j} (|x_i - x_j| - delta)^-beta`.
pub fn l_beta(k: &KernelSpec, st: &ParticleState, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(pair_sums(k, st, beta)?.l_beta)
}

/// `(1/N^2) sum_{i != j} log(|x_i - x_j| - delta)`.
pub fn log_functional(k: &KernelSpec, st: &ParticleState) -> Result<f64> {
    Ok(pair_sums(k, st, 1.0)?.log_sum)
}

/// `(1/N^2) sum_{i != j} psi_delta(|x_i - x_j|) |v_i - v_j|^2`, the rate at which
/// kinetic energy is lost.
pub fn dissipation_rate(k: &KernelSpec, st: &ParticleState) -> Result<f64> {
    Ok(pair_sums(k, st, 1.0)?.dissipation)
}

pub fn kinetic(st: &ParticleState) -> f64 {
    st.v().iter().map(|c| c * c).sum::<f64>() / st.n() as f64
}

/// Exponent used for the `L_beta` column when none is configured: the
/// collision functional `alpha - 2` above the critical value 2, else 1.
pub fn default_beta(k: &KernelSpec) -> f64 {
    if k.alpha > 2.0 {
        k.alpha - 2.0
    } else {
        1.0
    }
}

impl DiagnosticsRecord {
    pub fn sample(
        k: &KernelSpec,
        st: &ParticleState,
        beta: f64,
        dissipation_integral: f64,
    ) -> Result<Self> {
        Ok(Self::sample_with_rate(k, st, beta, dissipation_integral)?.0)
    }

    fn sample_with_rate(
        k: &KernelSpec,
        st: &ParticleState,
        beta: f64,
        dissipation_integral: f64,
    ) -> Result<(Self, f64)> {
        let s = pair_sums(k, st, beta)?;
        let rec = DiagnosticsRecord {
            t: st.t,
            min_gap: s.min_gap,
            max_speed: st.max_speed(),
            v_center: st.v_center(),
            kinetic: kinetic(st),
            dissipation_integral,
            l_beta: s.l_beta,
            log_functional: s.log_sum,
            vel_diam_inf: s.vel_diam,
            pos_diam_inf: s.pos_diam,
        };
        Ok((rec, s.dissipation))
    }
}

/// Accumulates the dissipation integral over every observed state and keeps
/// every `sample_every`-th record.
///
/// [`DiagnosticsRecorder::observe_step`] takes the per-step integral computed
/// by the integrator; [`DiagnosticsRecorder::observe`] falls back to the
/// trapezoidal rule between consecutive states.
#[derive(Debug)]
pub struct DiagnosticsRecorder {
    kernel: KernelSpec,
    beta: f64,
    sample_every: usize,
    seen: usize,
    last: Option<(f64, f64)>,
    integral: f64,
    records: Vec<DiagnosticsRecord>,
    latest: Option<DiagnosticsRecord>,
    error: Option<Error>,
}

impl DiagnosticsRecorder {
    pub fn new(kernel: KernelSpec, beta: f64, sample_every: usize) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Parameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if sample_every == 0 {
            return Err(Error::Parameter("sample_every must be at least 1".into()));
        }
        Ok(DiagnosticsRecorder {
            kernel,
            beta,
            sample_every,
            seen: 0,
            last: None,
            integral: 0.0,
            records: Vec::new(),
            latest: None,
            error: None,
        })
    }

    /// Feeds the next state. The first call defines `t = 0` of the integral.
    /// Errors are latched and reported by [`DiagnosticsRecorder::finish`].
    pub fn observe(&mut self, st: &ParticleState) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_observe(st, None) {
            self.error = Some(e);
        }
    }

    /// Feeds a state reached by a step over which the dissipation rate
    /// integrates to `increment`.
    pub fn observe_step(&mut self, st: &ParticleState, increment: f64) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_observe(st, Some(increment)) {
            self.error = Some(e);
        }
    }

    fn try_observe(&mut self, st: &ParticleState, increment: Option<f64>) -> Result<()> {
        let (mut rec, rate) =
            DiagnosticsRecord::sample_with_rate(&self.kernel, st, self.beta, 0.0)?;
        if let Some((t0, r0)) = self.last {
            self.integral += increment.unwrap_or(0.5 * (st.t - t0) * (rate + r0));
        }
        rec.dissipation_integral = self.integral;
        self.last = Some((st.t, rate));
        if self.seen.is_multiple_of(self.sample_every) {
            self.records.push(rec.clone());
            self.latest = None;
        } else {
            self.latest = Some(rec);
        }
        self.seen += 1;
        Ok(())
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    /// Most recent record, whether or not it was kept.
    pub fn last_record(&self) -> Option<&DiagnosticsRecord> {
        self.latest.as_ref().or(self.records.last())
    }

    /// Returns the kept records, always including the final observed state.
    pub fn finish(mut self) -> Result<Vec<DiagnosticsRecord>> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if let Some(rec) = self.latest.take() {
            self.records.push(rec);
        }
        Ok(self.records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyResidual {
    pub value: f64,
    /// False when the initial kinetic energy is zero and `value` is absolute.
    pub relative: bool,
}

/// `max_t |kinetic(t) + dissipation_integral(t) - kinetic(0)| / kinetic(0)`.
pub fn energy_balance_residual(records: &[DiagnosticsRecord]) -> Result<EnergyResidual> {
    let first = records
        .first()
        .ok_or_else(|| Error::Parameter("energy residual needs at least one sample".into()))?;
    let k0 = first.kinetic;
    let worst = records
        .iter()
        .map(|r| (r.kinetic + r.dissipation_integral - k0).abs())
        .fold(0.0, f64::max);
    if k0 > 0.0 {
        Ok(EnergyResidual {
            value: worst / k0,
            relative: true,
        })
    } else {
        Ok(EnergyResidual {
            value: worst,
            relative: false,
        })
    }
}

/// Default constant for the `alpha > 2` bound: `(alpha - 2) max(1, (alpha - 1)/2)`,
/// from the Young-inequality step behind the estimate.
pub fn default_gronwall_constant(alpha: f64) -> f64 {
    (alpha - 2.0) * 1f64.max((alpha - 1.0) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallCheck {
    pub holds: bool,
    /// Minimum of `rhs - lhs` over samples.
    pub worst_margin: f64,
    pub samples: Vec<BoundSample>,
}

/// Streaming form of [`gronwall_bound_check`].
///
/// For `alpha > 2`: `L^(alpha-2)(t) <= L^(alpha-2)(0) e^(Ct) + C e^(Ct) kinetic(0)`.
/// For `alpha = 2`: `|log_functional(t)| <= |log_functional(0)| + t/2 + kinetic(0)/2`.
#[derive(Debug)]
pub struct GronwallMonitor {
    kernel: KernelSpec,
    c: f64,
    t0: f64,
    lhs0: f64,
    kinetic0: f64,
    samples: Vec<BoundSample>,
}

impl GronwallMonitor {
    pub fn new(k: &KernelSpec, c: f64, st0: &ParticleState) -> Result<Self> {
        if !(k.alpha >= 2.0) {
            return Err(Error::Parameter(format!(
                "the Gronwall bound needs alpha >= 2, got {}",
                k.alpha
            )));
        }
        if k.alpha > 2.0 && !(c > 0.0) {
            return Err(Error::Parameter(format!("C must be positive, got {c}")));
        }
        let lhs0 = Self::functional(k, st0)?;
        let mut m = GronwallMonitor {
            kernel: *k,
            c,
            t0: st0.t,
            lhs0,
            kinetic0: kinetic(st0),
            samples: Vec::new(),
        };
        m.samples.push(BoundSample {
            t: st0.t,
            lhs: lhs0,
            rhs: m.rhs(st0.t),
        });
        Ok(m)
    }

    fn functional(k: &KernelSpec, st: &ParticleState) -> Result<f64> {
        if k.alpha == 2.0 {
            Ok(log_functional(k, st)?.abs())
        } else {
            l_beta(k, st, k.alpha - 2.0)
        }
    }

    fn rhs(&self, t: f64) -> f64 {
        let s = t - self.t0;
        if self.kernel.alpha == 2.0 {
            self.lhs0 + 0.5 * s + 0.5 * self.kinetic0
        } else {
            let g = (self.c * s).exp();
            self.lhs0 * g + self.c * g * self.kinetic0
        }
    }

    pub fn observe(&mut self, st: &ParticleState) -> Result<()> {
        let lhs = Self::functional(&self.kernel, st)?;
        self.samples.push(BoundSample {
            t: st.t,
            lhs,
            rhs: self.rhs(st.t),
        });
        Ok(())
    }

    /// Bound value at the latest sample.
    pub fn current_rhs(&self) -> f64 {
        self.samples.last().map(|s| s.rhs).unwrap_or(f64::NAN)
    }

    pub fn finish(self) -> GronwallCheck {
        let worst_margin = self
            .samples
            .iter()
            .map(|s| s.rhs - s.lhs)
            .fold(f64::INFINITY, f64::min);
        GronwallCheck {
            holds: worst_margin >= 0.0,
            worst_margin,
            samples: self.samples,
        }
    }
}

/// Checks the a priori bound on the collision functional along `trajectory`
/// (first entry is the initial state).
pub fn gronwall_bound_check(
    k: &KernelSpec,
    trajectory: &[ParticleState],
    c: f64,
) -> Result<GronwallCheck> {
    let (first, rest) = trajectory
        .split_first()
        .ok_or_else(|| Error::Parameter("empty trajectory".into()))?;
    let mut m = GronwallMonitor::new(k, c, first)?;
    for st in rest {
        m.observe(st)?;
    }
    Ok(m.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlockingDecay {
    pub holds: bool,
    /// Least-squares decay rate of `log ||v(t) - v_c(0)||_inf`; `None` without
    /// at least two samples of positive deviation.
    pub fitted_rate: Option<f64>,
    /// The guaranteed rate `psi_delta(2 c1)`.
    pub bound_rate: f64,
    /// Largest `deviation(t) / bound(t)` seen.
    pub worst_ratio: f64,
}

/// Deviations below this fraction of the initial one are excluded from the
/// rate fit; they sit at the integration noise floor.
const FIT_FLOOR: f64 = 1e-9;

/// `max_i |v_i - v_ref|`.
pub fn velocity_deviation(st: &ParticleState, v_ref: &[f64]) -> f64 {
    (0..st.n())
        .map(|i| dist(st.vi(i), v_ref))
        .fold(0.0, f64::max)
}

/// `sup_t max_i |x_i(t) - x_c(0)|`, the observed spread used as `c1`.
pub fn position_deviation_sup(trajectory: &[ParticleState]) -> f64 {
    let Some(first) = trajectory.first() else {
        return 0.0;
    };
    let xc0 = first.x_center();
    trajectory
        .iter()
        .flat_map(|st| (0..st.n()).map(move |i| (st, i)))
        .map(|(st, i)| dist(st.xi(i), &xc0))
        .fold(0.0, f64::max)
}

/// Checks `||v(t) - v_c(0)||_inf <= ||v_0 - v_c(0)||_inf e^(-psi(2 c1) t) (1 + rel_slack)`
/// at every sample and fits the empirical decay rate.
pub fn flocking_decay_check(
    trajectory: &[ParticleState],
    c1: f64,
    k: &KernelSpec,
    rel_slack: f64,
) -> Result<FlockingDecay> {
    let first = trajectory
        .first()
        .ok_or_else(|| Error::Parameter("empty trajectory".into()))?;
    let bound_rate = k.eval(2.0 * c1)?;
    let vc0 = first.v_center();
    let dev0 = velocity_deviation(first, &vc0);

    let mut worst_ratio = 0.0f64;
    let mut holds = true;
    let mut fit = Vec::new();
    for st in trajectory {
        let s = st.t - first.t;
        let dev = velocity_deviation(st, &vc0);
        let bound = dev0 * (-bound_rate * s).exp();
        if dev > bound * (1.0 + rel_slack) {
            holds = false;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(dev / bound);
        }
        if dev > FIT_FLOOR * dev0 && dev > 0.0 {
            fit.push((s, dev.ln()));
        }
    }
    Ok(FlockingDecay {
        holds,
        fitted_rate: fit_rate(&fit),
        bound_rate,
        worst_ratio,
    })
}

fn fit_rate(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNorms {
    pub cluster: Vec<usize>,
    /// `sqrt(sum_{i,j in cluster} |x_i - x_j|^2)` over ordered pairs.
    pub x_norm: f64,
    pub v_norm: f64,
}

pub fn cluster_norms(st: &ParticleState, cluster: &[usize]) -> Result<ClusterNorms> {
    if cluster.is_empty() {
        return Err(Error::Parameter("cluster must be nonempty".into()));
    }
    if let Some(&bad) = cluster.iter().find(|&&i| i >= st.n()) {
        return Err(Error::Parameter(format!(
            "cluster index {bad} out of range for {} particles",
            st.n()
        )));
    }
    let mut xs = 0.0;
    let mut vs = 0.0;
    for &i in cluster {
        for &j in cluster {
            xs += dist2(st.xi(i), st.xi(j));
            vs += dist2(st.vi(i), st.vi(j));
        }
    }
    Ok(ClusterNorms {
        cluster: cluster.to_vec(),
        x_norm: xs.sqrt(),
        v_norm: vs.sqrt(),
    })
}

/// Norm of the mean velocity; handy for drift checks.
pub fn mean_speed(st: &ParticleState) -> f64 {
    norm(&st.v_center())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k(alpha: f64, delta: f64) -> KernelSpec {
        KernelSpec::new(alpha, delta).unwrap()
    }

    fn equilateral(side: f64) -> ParticleState {
        let h = side * 3f64.sqrt() / 2.0;
        ParticleState::from_rows(
            0.0,
            &[vec![0.0, 0.0], vec![side, 0.0], vec![side / 2.0, h]],
            &vec![vec![0.1, 0.2]; 3],
        )
        .unwrap()
    }

    #[test]
    fn l_beta_values() {
        let two = ParticleState::from_1d(0.0, &[0.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(l_beta(&k(1.0, 0.0), &two, 1.0).unwrap(), 0.25);
        for delta in [0.0, 0.3, 2.0] {
            let st = ParticleState::from_1d(0.0, &[0.0, 1.0 + delta], &[0.0, 0.0]).unwrap();
            assert_relative_eq!(
                l_beta(&k(1.0, delta), &st, 7.0).unwrap(),
                0.5,
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(
            l_beta(&k(1.0, 0.0), &equilateral(2.0), 2.0).unwrap(),
            1.0 / 6.0,
            max_relative = 1e-14
        );
        assert!(l_beta(&k(1.0, 0.0), &two, 0.0).is_err());
        assert!(l_beta(&k(1.0, 2.5), &two, 1.0).is_err());
    }

    #[test]
    fn log_functional_values() {
        let delta = 0.4;
        let st = ParticleState::from_1d(0.0, &[0.0, 1.0 + delta], &[0.0, 0.0]).unwrap();
        assert!(log_functional(&k(2.0, delta), &st).unwrap().abs() < 1e-15);
        let e = std::f64::consts::E;
        let st = ParticleState::from_1d(0.0, &[0.0, e + delta], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(
            log_functional(&k(2.0, delta), &st).unwrap(),
            0.5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_functional_scaling() {
        let st = equilateral(1.3);
        let doubled = ParticleState::new(
            0.0,
            2,
            st.x().iter().map(|c| 2.0 * c).collect(),
            st.v().to_vec(),
        )
        .unwrap();
        let kk = k(2.0, 0.0);
        let diff = log_functional(&kk, &doubled).unwrap() - log_functional(&kk, &st).unwrap();
        assert_relative_eq!(diff, 2f64.ln() * 6.0 / 9.0, max_relative = 1e-13);
    }

    #[test]
    fn two_particle_l_beta_matches_cluster_norm() {
        let st = ParticleState::from_rows(
            0.0,
            &[vec![0.0, 0.0], vec![1.2, 0.9]],
            &[vec![0.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let cn = cluster_norms(&st, &[0, 1]).unwrap();
        let gap = cn.x_norm / 2f64.sqrt();
        assert_relative_eq!(gap, 1.5, max_relative = 1e-14);
        for beta in [0.5, 1.0, 3.0] {
            assert_relative_eq!(
                l_beta(&k(1.0, 0.0), &st, beta).unwrap(),
                0.5 * gap.powf(-beta),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn cluster_norm_values() {
        let tri = equilateral(1.0);
        let cn = cluster_norms(&tri, &[1]).unwrap();
        assert_eq!((cn.x_norm, cn.v_norm), (0.0, 0.0));
        let cn = cluster_norms(&tri, &[0, 1]).unwrap();
        assert_relative_eq!(cn.x_norm, 2f64.sqrt(), max_relative = 1e-14);
        assert_eq!(cn.v_norm, 0.0);
        let cn = cluster_norms(&tri, &[0, 1, 2]).unwrap();
        assert_relative_eq!(cn.x_norm, 6f64.sqrt(), max_relative = 1e-14);
        assert!(cluster_norms(&tri, &[]).is_err());
        assert!(cluster_norms(&tri, &[0, 3]).is_err());
    }

    #[test]
    fn record_fields() {
        let st = ParticleState::from_1d(0.0, &[0.0, 1.0, 3.0], &[1.0, 0.0, -1.0]).unwrap();
        let kk = k(2.0, 0.0);
        let rec = DiagnosticsRecord::sample(&kk, &st, 1.0, 0.25).unwrap();
        assert_eq!(rec.min_gap, 1.0);
        assert_eq!(rec.max_speed, 1.0);
        assert_relative_eq!(rec.kinetic, 2.0 / 3.0);
        assert_eq!(rec.dissipation_integral, 0.25);
        assert_eq!(rec.vel_diam_inf, 2.0);
        assert_eq!(rec.pos_diam_inf, 3.0);
        assert_eq!(rec.v_center, vec![0.0]);
        // (2/9) (1*1 + (1/9)*4 + (1/4)*1)
        assert_relative_eq!(
            dissipation_rate(&kk, &st).unwrap(),
            2.0 / 9.0 * (1.0 + 4.0 / 9.0 + 0.25),
            max_relative = 1e-14
        );
    }

    #[test]
    fn dissipation_rate_is_minus_kinetic_derivative() {
        let st = ParticleState::from_rows(
            0.0,
            &[
                vec![0.0, 0.0],
                vec![1.5, 0.2],
                vec![-0.4, 1.8],
                vec![2.0, 2.0],
            ],
            &[
                vec![0.3, -0.1],
                vec![-0.5, 0.2],
                vec![0.1, 0.4],
                vec![0.0, -0.3],
            ],
        )
        .unwrap();
        for kk in [k(1.0, 0.0), k(2.5, 0.1)] {
            let der = crate::model::rhs(&kk, &st).unwrap();
            let dk: f64 = 2.0 / 4.0 * st.v().iter().zip(&der.dv).map(|(v, a)| v * a).sum::<f64>();
            assert_relative_eq!(
                dk,
                -dissipation_rate(&kk, &st).unwrap(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn recorder_trapezoid_and_sampling() {
        let kk = k(2.0, 0.0);
        let mut rec = DiagnosticsRecorder::new(kk, 1.0, 2).unwrap();
        let states: Vec<ParticleState> = (0..5)
            .map(|s| {
                ParticleState::from_1d(s as f64 * 0.5, &[0.0, 1.0 + s as f64], &[0.0, 1.0]).unwrap()
            })
            .collect();
        for st in &states {
            rec.observe(st);
        }
        let rates: Vec<f64> = states
            .iter()
            .map(|s| dissipation_rate(&kk, s).unwrap())
            .collect();
        let expect: f64 = rates.windows(2).map(|w| 0.25 * (w[0] + w[1])).sum();
        let out = rec.finish().unwrap();
        assert_eq!(
            out.iter().map(|r| r.t).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0]
        );
        assert_relative_eq!(out[2].dissipation_integral, expect, max_relative = 1e-14);
        assert!(DiagnosticsRecorder::new(kk, 1.0, 0).is_err());
    }

    #[test]
    fn recorder_keeps_final_state() {
        let kk = k(2.0, 0.0);
        let mut rec = DiagnosticsRecorder::new(kk, 1.0, 3).unwrap();
        for s in 0..5 {
            rec.observe(&ParticleState::from_1d(s as f64, &[0.0, 1.0], &[0.0, 0.0]).unwrap());
        }
        let out = rec.finish().unwrap();
        assert_eq!(
            out.iter().map(|r| r.t).collect::<Vec<_>>(),
            vec![0.0, 3.0, 4.0]
        );
    }

    #[test]
    fn flocked_energy_residual_is_zero() {
        let kk = k(2.0, 0.0);
        let mut rec = DiagnosticsRecorder::new(kk, 1.0, 1).unwrap();
        for s in 0..4 {
            let t = s as f64;
            rec.observe(&ParticleState::from_1d(t, &[t, 1.0 + t], &[1.0, 1.0]).unwrap());
        }
        let res = energy_balance_residual(&rec.finish().unwrap()).unwrap();
        assert_eq!(
            res,
            EnergyResidual {
                value: 0.0,
                relative: true
            }
        );
    }

    #[test]
    fn energy_residual_absolute_when_at_rest() {
        let kk = k(2.0, 0.0);
        let r = DiagnosticsRecord::sample(
            &kk,
            &ParticleState::from_1d(0.0, &[0.0, 1.0], &[0.0, 0.0]).unwrap(),
            1.0,
            0.0,
        )
        .unwrap();
        let res = energy_balance_residual(&[r]).unwrap();
        assert!(!res.relative);
        assert!(energy_balance_residual(&[]).is_err());
    }

    #[test]
    fn gronwall_frozen_geometry_alpha_two() {
        let kk = k(2.0, 0.0);
        let traj: Vec<ParticleState> = (0..5)
            .map(|s| {
                let t = s as f64;
                ParticleState::from_1d(t, &[0.3 * t, 2.0 + 0.3 * t], &[0.3, 0.3]).unwrap()
            })
            .collect();
        let chk = gronwall_bound_check(&kk, &traj, 1.0).unwrap();
        assert!(chk.holds);
        let kin0 = 0.09;
        for s in &chk.samples {
            assert_relative_eq!(s.rhs - s.lhs, s.t / 2.0 + kin0 / 2.0, max_relative = 1e-12);
        }
        assert_relative_eq!(chk.worst_margin, kin0 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn gronwall_separating_pair_alpha_three() {
        let kk = k(3.0, 0.0);
        let traj: Vec<ParticleState> = (0..5)
            .map(|s| {
                let t = s as f64;
                ParticleState::from_1d(t, &[-t, 1.0 + t], &[-1.0, 1.0]).unwrap()
            })
            .collect();
        for c in [1e-3, 1.0, 10.0] {
            let chk = gronwall_bound_check(&kk, &traj, c).unwrap();
            assert!(chk.holds);
            assert!(chk.samples.windows(2).all(|w| w[1].lhs < w[0].lhs));
        }
        assert!(gronwall_bound_check(&k(1.5, 0.0), &traj, 1.0).is_err());
        assert!(gronwall_bound_check(&kk, &traj, 0.0).is_err());
    }

    #[test]
    fn gronwall_detects_violation() {
        let kk = k(3.0, 0.0);
        // particles approaching with no velocity recorded: bound is L(0) + 0
        let traj = vec![
            ParticleState::from_1d(0.0, &[0.0, 1.0], &[0.0, 0.0]).unwrap(),
            ParticleState::from_1d(1e-6, &[0.0, 0.5], &[0.0, 0.0]).unwrap(),
        ];
        let chk = gronwall_bound_check(&kk, &traj, 1.0).unwrap();
        assert!(!chk.holds);
        assert!(chk.worst_margin < 0.0);
    }

    #[test]
    fn default_constant() {
        assert_eq!(default_gronwall_constant(3.0), 1.0);
        assert_eq!(default_gronwall_constant(5.0), 6.0);
        assert_eq!(default_gronwall_constant(2.5), 0.5);
    }

    #[test]
    fn flocked_decay_holds_trivially() {
        let kk = k(2.0, 0.0);
        let traj: Vec<ParticleState> = (0..4)
            .map(|s| {
                ParticleState::from_1d(s as f64, &[s as f64, 1.0 + s as f64], &[1.0, 1.0]).unwrap()
            })
            .collect();
        let c1 = position_deviation_sup(&traj);
        let out = flocking_decay_check(&traj, c1, &kk, 1e-6).unwrap();
        assert!(out.holds);
        assert_eq!(out.fitted_rate, None);
    }

    #[test]
    fn decay_fit_recovers_exact_exponential() {
        let kk = k(2.0, 0.0);
        let rate = 0.3;
        let traj: Vec<ParticleState> = (0..20)
            .map(|s| {
                let t = s as f64 * 0.5;
                let u = (-rate * t).exp();
                ParticleState::from_1d(t, &[-1.0, 1.0], &[-u, u]).unwrap()
            })
            .collect();
        let out = flocking_decay_check(&traj, 1.0, &kk, 0.0).unwrap();
        assert_relative_eq!(out.fitted_rate.unwrap(), rate, max_relative = 1e-10);
        assert_eq!(out.bound_rate, 0.25);
        assert!(out.holds);
        let slow = flocking_decay_check(&traj, 0.5, &kk, 0.0).unwrap();
        assert_eq!(slow.bound_rate, 1.0);
        assert!(!slow.holds);
    }

    proptest! {
        #[test]
        fn functionals_invariant_under_relabel_and_translation(
            seed in any::<u64>(), n in 2usize..10, shift in -5.0f64..5.0)
        {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n * 2).map(|q| (q / 2) as f64 * 2.0 + rng.random_range(0.0..0.5)).collect();
            let v: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let st = ParticleState::new(0.0, 2, x.clone(), v.clone()).unwrap();
            let moved = ParticleState::new(0.0, 2, x.iter().map(|c| c + shift).collect(), v).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            let kk = k(2.5, 0.2);
            let l = l_beta(&kk, &st, 0.5).unwrap();
            let g = log_functional(&kk, &st).unwrap();
            for other in [moved, st.permuted(&perm)] {
                prop_assert!((l_beta(&kk, &other, 0.5).unwrap() - l).abs() <= 1e-12 * l.abs());
                prop_assert!((log_functional(&kk, &other).unwrap() - g).abs() <= 1e-12 * (1.0 + g.abs()));
            }
        }

        #[test]
        fn l_beta_grows_when_one_gap_shrinks(d0 in 1.0f64..5.0, shrink in 0.05f64..0.9, beta in 0.2f64..4.0) {
            let kk = k(2.0, 0.0);
            let a = ParticleState::from_1d(0.0, &[0.0, d0, 10.0], &[0.0; 3]).unwrap();
            let b = ParticleState::from_1d(0.0, &[0.0, d0 * shrink, 10.0], &[0.0; 3]).unwrap();
            prop_assert!(l_beta(&kk, &b, beta).unwrap() > l_beta(&kk, &a, beta).unwrap());
        }
    }
}
