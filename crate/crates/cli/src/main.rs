//! `flock`: run Cucker-Smale experiments from JSON configs and check stored
//! trajectories.
//!
//! Exit codes: 0 completed (or check holds), 1 usage/config/runtime error,
//! 2 collision, 3 step floor, 4 a verification or flocking check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use flock_core::diagnostics::DiagnosticsRecord;
use flock_core::io::{
    self, load_json, read_diagnostics, read_trajectory, seed_override_from_env, write_diagnostics,
    write_events, write_sweep_rows, write_trajectory, Metadata, RunConfig,
};
use flock_core::scenarios::{
    generate, run_collision_probe, run_from_state, run_sweep, RowStatus, RunOptions, ScenarioSpec,
    SweepSpec,
};
use flock_core::verify::{verify_trajectory, VerifyOptions};
use flock_core::{flocking_condition, ExitReason, IntegratorConfig, KernelSpec};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_COLLISION: u8 = 2;
const EXIT_STEP_FLOOR: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "flock",
    version,
    about = "Cucker-Smale flocking experiments with singular weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario and write diagnostics, events and (optionally) the trajectory.
    Simulate { config: PathBuf },
    /// Run a parameter sweep.
    Sweep { config: PathBuf },
    /// Integrate a head-on pair and compare with the collision-time oracle.
    Probe { config: PathBuf },
    /// Check a stored trajectory against the properties of exact solutions.
    Verify {
        trajectory: PathBuf,
        /// Diagnostics file of the same run; enables the energy-balance check.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Bound on the relative energy residual; defaults to 1000 * rel_tol.
        #[arg(long)]
        energy_tol: Option<f64>,
    },
    /// Evaluate the a priori flocking condition on the generated initial data.
    FlockCheck { config: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    sweep: SweepSpec,
    #[serde(default)]
    integrator: IntegratorConfig,
    /// Table of rows; relative to the config file.
    #[serde(default)]
    output: Option<PathBuf>,
}

fn default_t_max() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeConfig {
    alpha: f64,
    r0: f64,
    w0: f64,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default)]
    integrator: IntegratorConfig,
    #[serde(default)]
    report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    exit_reason: &'static str,
    wall_time: f64,
    n_steps: u64,
    rejected_steps: u64,
    t_final: f64,
    events: usize,
    final_record: Option<DiagnosticsRecord>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Sweep { config } => sweep(&config),
        Command::Probe { config } => probe(&config),
        Command::Verify {
            trajectory,
            diagnostics,
            energy_tol,
        } => verify(&trajectory, diagnostics.as_deref(), energy_tol),
        Command::FlockCheck { config } => flock_check(&config),
    }
}

/// Sizes the global pool from `SF_THREADS`. Results never depend on it.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("SF_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn apply_seed_override(spec: &mut ScenarioSpec) -> anyhow::Result<()> {
    if let Some(seed) = seed_override_from_env()? {
        spec.seed = seed;
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn exit_code(exit: ExitReason) -> u8 {
    match exit {
        ExitReason::Completed => EXIT_OK,
        ExitReason::Collision => EXIT_COLLISION,
        ExitReason::StepFloor => EXIT_STEP_FLOOR,
    }
}

fn simulate(path: &Path) -> anyhow::Result<u8> {
    let mut cfg: RunConfig = load_json(path)?;
    apply_seed_override(&mut cfg.scenario)?;
    cfg.resolve_paths(&config_dir(path));
    cfg.validate()?;

    let started = Instant::now();
    let kernel = cfg.scenario.kernel()?;
    let initial = generate(&cfg.scenario)?;
    let opts = RunOptions {
        sample_every: cfg.sample_every,
        beta: cfg.diagnostics_beta,
        keep_states: cfg.outputs.trajectory.is_some(),
        gronwall_c: None,
    };
    let out = run_from_state(&kernel, &cfg.integrator, initial, cfg.scenario.t_end, &opts)?;

    let mut meta = Metadata::for_run(&cfg.scenario, &cfg.integrator);
    meta.push("sample_every", cfg.sample_every);
    meta.push(
        "beta",
        cfg.diagnostics_beta
            .unwrap_or_else(|| flock_core::diagnostics::default_beta(&kernel)),
    );
    write_diagnostics(&cfg.outputs.diagnostics, &meta, &out.records)?;
    write_events(&cfg.outputs.events, &meta, &out.result.events)?;
    if let Some(p) = &cfg.outputs.trajectory {
        write_trajectory(p, &meta, &out.states)?;
    }

    let summary = RunSummary {
        exit_reason: match out.result.exit {
            ExitReason::Completed => "Completed",
            ExitReason::Collision => "Collision",
            ExitReason::StepFloor => "StepFloor",
        },
        wall_time: started.elapsed().as_secs_f64(),
        n_steps: out.result.accepted_steps,
        rejected_steps: out.result.rejected_steps,
        t_final: out.result.state.t,
        events: out.result.events.len(),
        final_record: out.records.last().cloned(),
    };
    print_json(&summary);
    Ok(exit_code(out.result.exit))
}

fn sweep(path: &Path) -> anyhow::Result<u8> {
    let mut cfg: SweepConfig = load_json(path)?;
    apply_seed_override(&mut cfg.sweep.base)?;
    let dir = config_dir(path);
    if let flock_core::scenarios::InitSpec::Custom { file } = &mut cfg.sweep.base.init {
        if file.is_relative() {
            *file = dir.join(&*file);
        }
    }
    let rows = run_sweep(&cfg.sweep, &cfg.integrator)?;
    if let Some(out) = &cfg.output {
        let out = dir.join(out);
        let mut meta = Metadata::for_run(&cfg.sweep.base, &cfg.integrator);
        meta.push("axis", cfg.sweep.axis.as_str());
        meta.push("values", serde_json::to_string(&cfg.sweep.values)?);
        meta.push("replicates", cfg.sweep.replicates);
        write_sweep_rows(&out, &meta, &rows)?;
    }
    print_json(&rows);
    let has = |s: RowStatus| rows.iter().any(|r| r.status == s);
    Ok(if has(RowStatus::Failed) {
        EXIT_ERROR
    } else if has(RowStatus::Collision) {
        EXIT_COLLISION
    } else if has(RowStatus::StepFloor) {
        EXIT_STEP_FLOOR
    } else {
        EXIT_OK
    })
}

fn probe(path: &Path) -> anyhow::Result<u8> {
    let cfg: ProbeConfig = load_json(path)?;
    let report = run_collision_probe(cfg.alpha, cfg.r0, cfg.w0, cfg.t_max, &cfg.integrator)?;
    if let Some(out) = &cfg.report {
        let out = config_dir(path).join(out);
        std::fs::write(&out, io::to_json(&report) + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print_json(&report);
    Ok(exit_code(report.exit))
}

fn verify(
    trajectory: &Path,
    diagnostics: Option<&Path>,
    energy_tol: Option<f64>,
) -> anyhow::Result<u8> {
    let (meta, states) = read_trajectory(trajectory)?;
    let field = |key: &str| {
        meta.get_f64(key).ok_or_else(|| {
            anyhow!(
                "{}: metadata lacks a numeric `{key}` entry",
                trajectory.display()
            )
        })
    };
    let kernel = KernelSpec::new(field("alpha")?, field("delta")?)?;
    let records = match diagnostics {
        Some(p) => Some(read_diagnostics(p)?.1),
        None => None,
    };
    let mut opts = VerifyOptions::default();
    if let Some(tol) = energy_tol.or_else(|| meta.get_f64("rel_tol").map(|r| 1e3 * r)) {
        if tol.is_nan() || tol <= 0.0 {
            bail!("energy tolerance must be positive, got {tol}");
        }
        opts.energy_tol = tol;
    }
    let report = verify_trajectory(&kernel, &states, records.as_deref(), &opts)?;
    print_json(&report);
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

#[derive(Debug, Serialize)]
struct FlockCheckReport {
    holds: bool,
    /// `null` when the tail integral diverges and the condition holds for any data.
    margin: Option<f64>,
    alpha: f64,
    delta: f64,
    n: usize,
    d: usize,
    seed: u64,
}

fn flock_check(path: &Path) -> anyhow::Result<u8> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = io::parse_json(&text, path)?;
    // a full run config or a bare scenario
    let mut spec: ScenarioSpec = if value.get("scenario").is_some() {
        io::parse_json::<RunConfig>(&text, path)?.scenario
    } else {
        io::parse_json(&text, path)?
    };
    apply_seed_override(&mut spec)?;
    if let flock_core::scenarios::InitSpec::Custom { file } = &mut spec.init {
        if file.is_relative() {
            *file = config_dir(path).join(&*file);
        }
    }
    let st = generate(&spec)?;
    let cond = flocking_condition(&spec.kernel()?, &st)?;
    print_json(&FlockCheckReport {
        holds: cond.holds,
        margin: cond.margin.is_finite().then_some(cond.margin),
        alpha: spec.alpha,
        delta: spec.delta,
        n: spec.n,
        d: spec.d,
        seed: spec.seed,
    });
    Ok(if cond.holds {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
