use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn flock(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flock"));
    cmd.args(args)
        .env_remove("SF_SEED")
        .env_remove("SF_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn run_config(scenario: Value, integrator: Value) -> Value {
    json!({
        "scenario": scenario,
        "integrator": integrator,
        "outputs": {"trajectory": "traj.csv", "diagnostics": "diag.csv", "events": "events.csv"}
    })
}

fn pair(alpha: f64, w0: f64) -> Value {
    json!({"name": "pair", "N": 2, "d": 1, "alpha": alpha, "t_end": 3.0,
           "init": {"kind": "TwoBody", "r0": 1.0, "w0": w0}})
}

#[test]
fn simulate_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "run.json",
        &run_config(pair(1.0, -1.5), json!({})),
    );
    let out = flock(&["simulate", &cfg], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["exit_reason"], "Completed");
    assert_eq!(summary["t_final"], 3.0);
    assert!(summary["n_steps"].as_u64().unwrap() > 0);

    let diag = std::fs::read_to_string(dir.path().join("diag.csv")).unwrap();
    let header = diag.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "t,min_gap,max_speed,kinetic,dissipation_integral,L_beta,log_functional,vel_diam_inf,pos_diam_inf"
    );
    for key in [
        "# tool=flock ",
        "# seed=",
        "# alpha=1",
        "# delta=0",
        "# N=2",
        "# d=1",
        "# rel_tol=",
        "# abs_tol=",
    ] {
        assert!(diag.contains(key), "missing {key}");
    }

    let traj = dir.path().join("traj.csv");
    let out = flock(&["verify", traj.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(stdout_json(&out)["passed"], true);

    let diag_path = dir.path().join("diag.csv");
    let out = flock(
        &[
            "verify",
            traj.to_str().unwrap(),
            "--diagnostics",
            diag_path.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let rep = stdout_json(&out);
    let names: Vec<&str> = rep["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"energy_balance"));
}

#[test]
fn verify_flags_a_corrupted_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "run.json",
        &run_config(pair(2.0, -1.0), json!({})),
    );
    assert_eq!(code(&flock(&["simulate", &cfg], &[])), 0);
    let traj = dir.path().join("traj.csv");
    let text = std::fs::read_to_string(&traj).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let last = lines.len() - 1;
    let mut fields: Vec<String> = lines[last].split(',').map(str::to_string).collect();
    fields[3] = "9.0".into();
    lines[last] = fields.join(",");
    std::fs::write(&traj, lines.join("\n") + "\n").unwrap();
    let out = flock(&["verify", traj.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 4);
    assert_eq!(stdout_json(&out)["passed"], false);
}

#[test]
fn probe_reports_collision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "probe.json",
        &json!({"alpha": 0.5, "r0": 1.0, "w0": -4.0, "t_max": 5.0, "report": "probe_report.json"}),
    );
    let out = flock(&["probe", &cfg], &[]);
    assert_eq!(code(&out), 2);
    let rep = stdout_json(&out);
    assert_eq!(rep["collided"], true);
    assert_eq!(rep["kind"], "Collision");
    let t_oracle = rep["t_oracle"].as_f64().unwrap();
    assert!((t_oracle - (1.0 - 2f64.ln())).abs() < 1e-10);
    assert!(rep["time_rel_error"].as_f64().unwrap() <= 1e-4);
    let saved: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("probe_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(saved, rep);
}

#[test]
fn exit_codes_for_collision_and_step_floor() {
    let dir = tempfile::tempdir().unwrap();
    let mut collide = pair(0.5, -4.0);
    collide["t_end"] = json!(2.0);
    let cfg = write_json(dir.path(), "c.json", &run_config(collide, json!({})));
    let out = flock(&["simulate", &cfg], &[]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["exit_reason"], "Collision");
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert!(events.lines().last().unwrap().contains(",Collision,0,1,"));

    let cfg = write_json(
        dir.path(),
        "f.json",
        &run_config(pair(0.5, -4.0), json!({"dt_min": 1e-3})),
    );
    let out = flock(&["simulate", &cfg], &[]);
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)["exit_reason"], "StepFloor");
}

#[test]
fn config_errors_exit_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(
        &p,
        "{\n  \"scenario\": {\"name\": \"x\", \"N\": 2, \"d\": 1, \"alpha\": 1, \"t_end\": 1,\n   \"init\": {\"kind\": \"TwoBody\", \"r0\": 1, \"w0\": -1}, \"colour\": 3},\n  \"outputs\": {\"diagnostics\": \"d.csv\", \"events\": \"e.csv\"}\n}\n",
    )
    .unwrap();
    let out = flock(&["simulate", p.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3"), "{err}");
    assert!(err.contains("colour"), "{err}");

    let cfg = write_json(
        dir.path(),
        "neg.json",
        &run_config(pair(-1.0, -1.0), json!({})),
    );
    assert_eq!(code(&flock(&["simulate", &cfg], &[])), 1);
    assert_eq!(code(&flock(&["simulate", "/nonexistent/cfg.json"], &[])), 1);
    assert_eq!(code(&flock(&[], &[])), 1);
    assert_eq!(code(&flock(&["fly"], &[])), 1);
    assert_eq!(code(&flock(&["--help"], &[])), 0);
    let good = write_json(
        dir.path(),
        "ok.json",
        &run_config(pair(1.0, -1.0), json!({})),
    );
    assert_eq!(
        code(&flock(&["simulate", &good], &[("SF_THREADS", "zero")])),
        1
    );
    assert_eq!(code(&flock(&["simulate", &good], &[("SF_SEED", "x")])), 1);
}

fn cloud(n: usize, d: usize, alpha: f64, seed: u64) -> Value {
    json!({"name": "cloud", "N": n, "d": d, "alpha": alpha, "delta": 0.1, "t_end": 0.5,
           "seed": seed, "init": {"kind": "UniformBox", "side": 12.0}, "velocity_scale": 0.5})
}

fn output_files(dir: &Path) -> Vec<Vec<u8>> {
    ["diag.csv", "events.csv", "traj.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = run_config(cloud(80, 2, 2.0, 5), json!({}));
    let ca = write_json(a.path(), "run.json", &cfg);
    let cb = write_json(b.path(), "run.json", &cfg);
    assert_eq!(code(&flock(&["simulate", &ca], &[("SF_THREADS", "1")])), 0);
    assert_eq!(code(&flock(&["simulate", &cb], &[("SF_THREADS", "4")])), 0);
    assert_eq!(output_files(a.path()), output_files(b.path()));
}

#[test]
fn seed_override_changes_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = run_config(cloud(10, 3, 1.0, 5), json!({}));
    let ca = write_json(a.path(), "run.json", &cfg);
    let cb = write_json(b.path(), "run.json", &cfg);
    let cc = write_json(c.path(), "run.json", &cfg);
    assert_eq!(code(&flock(&["simulate", &ca], &[])), 0);
    assert_eq!(code(&flock(&["simulate", &cb], &[("SF_SEED", "6")])), 0);
    assert_eq!(code(&flock(&["simulate", &cc], &[("SF_SEED", "5")])), 0);
    assert_ne!(output_files(a.path()), output_files(b.path()));
    assert_eq!(output_files(a.path()), output_files(c.path()));
    let diag = std::fs::read_to_string(b.path().join("diag.csv")).unwrap();
    assert!(diag.contains("# seed=6\n"));
}

#[test]
fn flock_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut calm = cloud(8, 2, 2.0, 1);
    calm["init"] = json!({"kind": "Lattice", "spacing": 0.5});
    calm["velocity_scale"] = json!(0.05);
    let cfg = write_json(dir.path(), "calm.json", &calm);
    let out = flock(&["flock-check", &cfg], &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["holds"], true);

    calm["velocity_scale"] = json!(50.0);
    let cfg = write_json(dir.path(), "wild.json", &run_config(calm, json!({})));
    let out = flock(&["flock-check", &cfg], &[]);
    assert_eq!(code(&out), 4);
    assert_eq!(stdout_json(&out)["holds"], false);

    let cfg = write_json(dir.path(), "weak.json", &cloud(8, 2, 1.0, 1));
    let out = flock(&["flock-check", &cfg], &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["margin"], Value::Null);
}

#[test]
fn sweep_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = cloud(6, 2, 2.0, 3);
    base["t_end"] = json!(1.0);
    let cfg = write_json(
        dir.path(),
        "sweep.json",
        &json!({"sweep": {"base": base, "axis": "alpha", "values": [2.0, 3.0], "replicates": 2},
                "output": "rows.csv"}),
    );
    let out = flock(&["sweep", &cfg], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_json(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["status"] == "Completed"));
    assert!(
        rows[2]["sup_l_functional"].as_f64().unwrap() <= rows[2]["bound_rhs"].as_f64().unwrap()
    );
    let csv = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert!(csv.contains("# axis=alpha\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
}
