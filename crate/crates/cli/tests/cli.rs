use std::path::Path;
use std::process::{Command, Output};

use ddlab_cli::RunConfig;

fn ddlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlab")).args(args).env("DDLAB_OUTPUT_DIR", out).output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());

    assert_eq!(ddlab(&["validate", &cfg], &out).status.code(), Some(0));

    let o = ddlab(&["validate", &cfg, "--set", "system.energies=[1.0, 1.0]"], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.energies"));

    let o = ddlab(&["validate", &cfg, "--set", "dynamics.g=1"], &out);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("g‖Q‖MT = 1.6 > 1"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system\nlevels = 2").unwrap();
    assert_eq!(ddlab(&["validate", bad.to_str().unwrap()], &out).status.code(), Some(2));
    assert_eq!(ddlab(&["validate", "/nonexistent/run.toml"], &out).status.code(), Some(2));
    assert_eq!(ddlab(&["validate", &cfg, "--set", "dynamics.gg=1"], &out).status.code(), Some(2));
    assert!(!out.exists(), "validate writes nothing");
}

#[test]
fn verify_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());
    let o = ddlab(&["verify", &cfg], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("bound_report.json"));
    assert_eq!(r["status"], "pass");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(r["constants"]["M"], 16.0);
    assert_eq!(r["reports"].as_array().unwrap().len(), 3);
    let echoed = std::fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&echoed, &[]).unwrap(), RunConfig::default());
}

#[test]
fn verify_with_strong_coupling_exits_four_and_marks_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());
    let o = ddlab(&["verify", &cfg, "--set", "dynamics.g=1"], &out);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(json(&out.join("bound_report.json"))["status"], "hypotheses_failed");
}

#[test]
fn flag_output_directory_beats_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env");
    let flag_out = dir.path().join("flag");
    let cfg = write_config(dir.path(), &RunConfig::default());
    let o = ddlab(&["design", &cfg, "-o", flag_out.to_str().unwrap()], &env_out);
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_out.join("schedule.json").exists());
    assert!(!env_out.exists());
}

#[test]
fn design_output_is_a_loadable_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());
    assert_eq!(ddlab(&["design", &cfg], &out).status.code(), Some(0));
    let file: ddlab_core::control::ScheduleFile =
        serde_json::from_str(&std::fs::read_to_string(out.join("schedule.json")).unwrap()).unwrap();
    let s = file.into_schedule().unwrap();
    assert_eq!(s.period(), 0.1);
    let d = json(&out.join("decoupling.json"));
    assert_eq!(d["status"], "pass");
    assert!((d["decoupling"]["action"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn sweep_writes_one_row_per_grid_point_and_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());
    assert_eq!(ddlab(&["sweep", &cfg], &out).status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sweep_T.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,value,lhs,rhs_tight,rhs_simple,n,delta,cutoff_stable");
    assert_eq!(lines.len(), 6);
    let fit = json(&out.join("sweep_T.json"));
    assert!((fit["fit"]["slope"].as_f64().unwrap() - 1.0).abs() < 0.25);
}

#[test]
fn propcheck_without_coupling_is_trivially_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = RunConfig::default();
    cfg.reservoir.modes[0].re = 0.0;
    let path = write_config(dir.path(), &cfg);
    let o = ddlab(&["propcheck", &path], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(&out.join("propcheck.json"));
    assert_eq!(r["status"], "pass");
    assert_eq!(r["constants"]["M"], 0.0);
    for suite in r["suites"].as_array().unwrap() {
        let title = suite["title"].as_str().unwrap();
        if title.starts_with("weighted field") || title.starts_with("relative bounds") {
            for c in suite["checks"].as_array().unwrap() {
                let name = c["name"].as_str().unwrap();
                if name != "|H_f Theta^-1|" {
                    assert_eq!(c["measured"], 0.0, "{title}: {name}");
                }
            }
        }
    }
}

#[test]
fn simulate_and_propcheck_on_the_default_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &RunConfig::default());
    assert_eq!(ddlab(&["simulate", &cfg], &out).status.code(), Some(0));
    let s = json(&out.join("simulation.json"));
    assert_eq!(s["status"], "pass");
    assert_eq!(s["points"].as_array().unwrap().len(), 3);
    assert_eq!(ddlab(&["propcheck", &cfg], &out).status.code(), Some(0));
    assert_eq!(json(&out.join("propcheck.json"))["status"], "pass");
}

#[test]
fn optimized_control_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = RunConfig::default().to_toml();
    let cfg = write_config(dir.path(), &RunConfig::from_toml(&text, &[]).unwrap());
    let o = ddlab(
        &[
            "design",
            &cfg,
            "--set",
            "control={T = 1.0, kind = \"optimized\", segments = 3, penalty = 10.0, seed = 4, options = {restarts = 2, max_evals = 2000, stages = 4, quadrature_points = 16, feasibility_tol = 1e-6}}",
        ],
        &out,
    );
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    if code == Some(0) {
        let d = json(&out.join("decoupling.json"));
        assert!(d["decoupling"]["action"].as_f64().unwrap() >= 0.5 - 1e-3);
    }
}
