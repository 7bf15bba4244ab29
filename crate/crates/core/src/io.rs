//! Run configuration and the CSV artifacts written by the harness.
//!
//! Every CSV starts with a block of `# key=value` lines carrying enough
//! metadata to rerun the experiment, followed by a header row. Floats are
//! written with 17 significant digits so read-back is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::integrator::{EventKind, EventRecord, IntegratorConfig};
use crate::scenarios::{ScenarioSpec, SweepRow, RNG_ALGORITHM};
use crate::state::ParticleState;

pub const TOOL_VERSION: &str = concat!("flock ", env!("CARGO_PKG_VERSION"));

pub const DIAGNOSTICS_HEADER: [&str; 9] = [
    "t",
    "min_gap",
    "max_speed",
    "kinetic",
    "dissipation_integral",
    "L_beta",
    "log_functional",
    "vel_diam_inf",
    "pos_diam_inf",
];

pub const SWEEP_HEADER: [&str; 15] = [
    "index",
    "value",
    "replicate",
    "N",
    "seed",
    "status",
    "t_final",
    "accepted_steps",
    "min_gap",
    "max_speed_ratio",
    "energy_residual",
    "sup_L_functional",
    "bound_rhs",
    "bound_holds",
    "message",
];

pub const EVENTS_HEADER: [&str; 6] = ["time", "kind", "i", "j", "gap", "rel_speed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    pub diagnostics: PathBuf,
    pub events: PathBuf,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub outputs: OutputPaths,
    /// Accepted steps between diagnostic samples.
    #[serde(default = "one")]
    pub sample_every: usize,
    /// Exponent of the `L_beta` column; `alpha - 2` for `alpha > 2`, else 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics_beta: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_every == 0 {
            return Err(Error::Config("sample_every must be at least 1".into()));
        }
        if let Some(b) = self.diagnostics_beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "diagnostics_beta must be positive, got {b}"
                )));
            }
        }
        self.scenario.validate()?;
        self.integrator.validate()
    }

    /// Resolves relative output paths against `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.outputs.diagnostics);
        fix(&mut self.outputs.events);
        if let Some(p) = self.outputs.trajectory.as_mut() {
            fix(p);
        }
        if let crate::scenarios::InitSpec::Custom { file } = &mut self.scenario.init {
            fix(file);
        }
    }
}

/// Parses JSON text, reporting the line and offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("config types serialize infallibly")
}

/// Parses an `SF_SEED` style override.
pub fn parse_seed_override(raw: Option<&str>) -> Result<Option<u64>> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("SF_SEED must be an unsigned integer, got {s:?}"))),
    }
}

/// Value of `SF_SEED` if set.
pub fn seed_override_from_env() -> Result<Option<u64>> {
    parse_seed_override(std::env::var("SF_SEED").ok().as_deref())
}

/// Ordered `key=value` pairs written as `#` comment lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        let mut m = Metadata::default();
        m.push("tool", TOOL_VERSION);
        m
    }

    /// Everything needed to regenerate and rerun `spec` under `cfg`.
    pub fn for_run(spec: &ScenarioSpec, cfg: &IntegratorConfig) -> Self {
        let mut m = Metadata::new();
        m.push("seed", spec.seed);
        m.push("rng", RNG_ALGORITHM);
        m.push("alpha", short_f64(spec.alpha));
        m.push("delta", short_f64(spec.delta));
        m.push("N", spec.n);
        m.push("d", spec.d);
        m.push("rel_tol", short_f64(cfg.rel_tol));
        m.push("abs_tol", short_f64(cfg.abs_tol));
        m.push(
            "scenario",
            serde_json::to_string(spec).expect("serializable"),
        );
        m.push(
            "integrator",
            serde_json::to_string(cfg).expect("serializable"),
        );
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.to_string(), value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }

    fn parse_line(&mut self, line: &str) {
        if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
            self.entries.push((k.trim().to_string(), v.to_string()));
        }
    }
}

/// Shortest round-trip form, in exponent notation for very small or large values.
pub fn short_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-3..1e6).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    fn create(path: &Path, meta: &Metadata, header: &[String]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = BufWriter::new(file);
        meta.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().from_writer(buf);
        let mut out = CsvOut {
            path: path.to_path_buf(),
            inner: {
                inner.write_record(header).map_err(|e| csv_error(path, e))?;
                inner
            },
        };
        out.inner.flush().map_err(|e| Error::io(&out.path, e))?;
        Ok(out)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| csv_error(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Reads a `#`-prefixed metadata block, the header, and all data rows.
type Table = (Metadata, Vec<String>, Vec<(usize, csv::StringRecord)>);

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut meta = Metadata::default();
    let mut body_start = 0;
    let mut skipped = 0;
    for line in text.lines() {
        if !line.starts_with('#') {
            break;
        }
        meta.parse_line(line);
        body_start += line.len() + 1;
        skipped += 1;
    }
    let body = &text[body_start.min(text.len())..];
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: skipped + 1,
            msg: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0) + skipped;
            Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0) + skipped;
        rows.push((line, rec));
    }
    Ok((meta, header, rows))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad or missing value for column {name}"),
        })
}

fn expect_header(path: &Path, got: &[String], want: &[&str], line: usize) -> Result<()> {
    if got.iter().map(String::as_str).ne(want.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!(
                "expected header {}, found {}",
                want.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn header_line(meta: &Metadata) -> usize {
    meta.entries.len() + 1
}

pub fn write_diagnostics(
    path: &Path,
    meta: &Metadata,
    records: &[DiagnosticsRecord],
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Parameter("no diagnostics records to write".into()));
    }
    let header: Vec<String> = DIAGNOSTICS_HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = CsvOut::create(path, meta, &header)?;
    for r in records {
        out.row(
            [
                r.t,
                r.min_gap,
                r.max_speed,
                r.kinetic,
                r.dissipation_integral,
                r.l_beta,
                r.log_functional,
                r.vel_diam_inf,
                r.pos_diam_inf,
            ]
            .map(fmt_f64),
        )?;
    }
    out.finish()
}

/// Reads a diagnostics file. The velocity center is not stored in the file,
/// so `v_center` comes back empty.
pub fn read_diagnostics(path: &Path) -> Result<(Metadata, Vec<DiagnosticsRecord>)> {
    let (meta, header, rows) = read_table(path)?;
    expect_header(path, &header, &DIAGNOSTICS_HEADER, header_line(&meta))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let f = |i: usize| parse_field::<f64>(path, line, &rec, i, DIAGNOSTICS_HEADER[i]);
        out.push(DiagnosticsRecord {
            t: f(0)?,
            min_gap: f(1)?,
            max_speed: f(2)?,
            v_center: Vec::new(),
            kinetic: f(3)?,
            dissipation_integral: f(4)?,
            l_beta: f(5)?,
            log_functional: f(6)?,
            vel_diam_inf: f(7)?,
            pos_diam_inf: f(8)?,
        });
    }
    Ok((meta, out))
}

pub fn write_events(path: &Path, meta: &Metadata, events: &[EventRecord]) -> Result<()> {
    let header: Vec<String> = EVENTS_HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = CsvOut::create(path, meta, &header)?;
    for e in events {
        out.row([
            fmt_f64(e.time),
            e.kind.as_str().to_string(),
            e.pair.0.to_string(),
            e.pair.1.to_string(),
            fmt_f64(e.gap),
            fmt_f64(e.rel_speed),
        ])?;
    }
    out.finish()
}

pub fn read_events(path: &Path) -> Result<(Metadata, Vec<EventRecord>)> {
    let (meta, header, rows) = read_table(path)?;
    expect_header(path, &header, &EVENTS_HEADER, header_line(&meta))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        out.push(EventRecord {
            time: parse_field(path, line, &rec, 0, "time")?,
            kind: parse_field::<EventKind>(path, line, &rec, 1, "kind")?,
            pair: (
                parse_field(path, line, &rec, 2, "i")?,
                parse_field(path, line, &rec, 3, "j")?,
            ),
            gap: parse_field(path, line, &rec, 4, "gap")?,
            rel_speed: parse_field(path, line, &rec, 5, "rel_speed")?,
        });
    }
    Ok((meta, out))
}

/// One row per sweep point; absent optional values are left empty.
pub fn write_sweep_rows(path: &Path, meta: &Metadata, rows: &[SweepRow]) -> Result<()> {
    let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = CsvOut::create(path, meta, &header)?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in rows {
        out.row([
            r.index.to_string(),
            fmt_f64(r.value),
            r.replicate.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.status),
            fmt_f64(r.t_final),
            r.accepted_steps.to_string(),
            fmt_f64(r.min_gap),
            fmt_f64(r.max_speed_ratio),
            fmt_f64(r.energy_residual),
            opt(r.sup_l_functional),
            opt(r.bound_rhs),
            r.bound_holds.map(|b| b.to_string()).unwrap_or_default(),
            r.message.clone().unwrap_or_default(),
        ])?;
    }
    out.finish()
}

fn trajectory_header(n: usize, d: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(1 + 2 * n * d);
    h.push("t".to_string());
    for prefix in ["x", "v"] {
        for i in 0..n {
            for c in 0..d {
                h.push(format!("{prefix}{i}_{c}"));
            }
        }
    }
    h
}

/// Recovers `(N, d)` from a trajectory header.
fn trajectory_shape(path: &Path, header: &[String], line: usize) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if header.first().map(String::as_str) != Some("t") {
        return Err(bad("trajectory header must start with t".into()));
    }
    let last_x = header
        .iter()
        .rev()
        .find(|h| h.starts_with('x'))
        .ok_or_else(|| bad("trajectory header has no position columns".into()))?;
    let (i, c) = last_x[1..]
        .split_once('_')
        .and_then(|(i, c)| Some((i.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
        .ok_or_else(|| bad(format!("malformed column name {last_x}")))?;
    let (n, d) = (i + 1, c + 1);
    if header != trajectory_header(n, d).as_slice() {
        return Err(bad(format!(
            "header does not match the layout for N = {n}, d = {d}"
        )));
    }
    Ok((n, d))
}

/// Row-oriented trajectory sink: `t`, then positions, then velocities, each
/// flattened row-major.
pub struct TrajectoryWriter {
    out: CsvOut,
    n: usize,
    d: usize,
    buf: Vec<String>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, meta: &Metadata, n: usize, d: usize) -> Result<Self> {
        let out = CsvOut::create(path, meta, &trajectory_header(n, d))?;
        Ok(TrajectoryWriter {
            out,
            n,
            d,
            buf: Vec::with_capacity(1 + 2 * n * d),
        })
    }

    pub fn write(&mut self, st: &ParticleState) -> Result<()> {
        if st.n() != self.n || st.d() != self.d {
            return Err(Error::Shape(format!(
                "trajectory holds N = {}, d = {} but state has N = {}, d = {}",
                self.n,
                self.d,
                st.n(),
                st.d()
            )));
        }
        self.buf.clear();
        self.buf.push(fmt_f64(st.t));
        self.buf
            .extend(st.x().iter().chain(st.v()).map(|&z| fmt_f64(z)));
        self.out.row(&self.buf)
    }

    pub fn finish(self) -> Result<()> {
        self.out.finish()
    }
}

pub fn write_trajectory(path: &Path, meta: &Metadata, states: &[ParticleState]) -> Result<()> {
    let first = states
        .first()
        .ok_or_else(|| Error::Parameter("no states to write".into()))?;
    let mut w = TrajectoryWriter::create(path, meta, first.n(), first.d())?;
    for st in states {
        w.write(st)?;
    }
    w.finish()
}

pub fn read_trajectory(path: &Path) -> Result<(Metadata, Vec<ParticleState>)> {
    let (meta, header, rows) = read_table(path)?;
    let (n, d) = trajectory_shape(path, &header, header_line(&meta))?;
    let nd = n * d;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        if rec.len() != 1 + 2 * nd {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", 1 + 2 * nd, rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (idx, name) in header.iter().enumerate() {
            vals.push(parse_field::<f64>(path, line, &rec, idx, name)?);
        }
        let t = vals[0];
        let x = vals[1..1 + nd].to_vec();
        let v = vals[1 + nd..].to_vec();
        let st = ParticleState::new(t, d, x, v).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        out.push(st);
    }
    Ok((meta, out))
}

/// First row of a trajectory file, re-timed to `t = 0`.
pub fn read_initial_state(path: &Path) -> Result<ParticleState> {
    let (_, states) = read_trajectory(path)?;
    let mut st = states.into_iter().next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "trajectory has no data rows".into(),
    })?;
    st.t = 0.0;
    Ok(st)
}
