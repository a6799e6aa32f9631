use std::path::Path;
use std::process::{Command, Output};

fn otto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otto-battery")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"
mode = "custom"
cycles = 10
outputs = ["populations"]

[machine]
delta = 2.0
field_span = 12.0
work_time = "2pi"
therm_time = "2pi"
coupling = 0.5
level_spacing = 1.0
levels = 4
beta_hot = 0.05
beta_cold = 1.0
"#;

#[test]
fn run_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("out");
    let res = otto(&["run", "--config", path(&config), "--out", path(&out), "--monitoring", "per-cycle"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert!(lines.next().unwrap().starts_with("cycle,q_hot,q_cold,work,e_battery"));
    assert_eq!(lines.count(), 10);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().contains("n_star,n_hash"));
    assert!(summary.lines().nth(1).unwrap().starts_with("per_cycle,10,"));
}

#[test]
fn json_output_and_sequential_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let res = otto(&["--sequential", "run", "--config", path(&config), "--out", path(dir.path()), "--format", "json"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(dir.path().join("trajectory.json")).unwrap();
    assert!(text.contains("\"schema_version\""));
}

#[test]
fn sweep_config_requires_sweep_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    let grid = format!("{CONFIG}\n[[sweep]]\nparameter = \"coupling\"\nmin = 0.0\nmax = 1.0\ncount = 2\n");
    std::fs::write(&config, grid).unwrap();
    let out = dir.path().join("out");
    assert!(!otto(&["run", "--config", path(&config), "--out", path(&out)]).status.success());
    let res = otto(&["sweep", "--config", path(&config), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("coupling,cycle,"));
    assert_eq!(traj.lines().count(), 1 + 2 * 10);
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, CONFIG.replace("levels = 4", "levels = 0")).unwrap();
    let res = otto(&["run", "--config", path(&config), "--out", path(dir.path())]);
    assert!(!res.status.success());
    assert!(!res.stderr.is_empty());
    let missing = otto(&["run", "--config", path(&dir.path().join("absent.toml"))]);
    assert!(!missing.status.success());
}

#[test]
fn phase_portrait_grid() {
    let dir = tempfile::tempdir().unwrap();
    let res = otto(&["phase-portrait", "--alpha-points", "11", "--eta-points", "9", "--out", path(dir.path())]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(dir.path().join("phase_portrait.csv")).unwrap();
    assert!(text.starts_with("alpha,eta,x,mode,w,q_hot,q_cold"));
    assert_eq!(text.lines().count(), 1 + 11 * 9);
    assert!(text.contains(",engine,") && text.contains(",refrigerator,"));
}

#[test]
fn switching_series() {
    let dir = tempfile::tempdir().unwrap();
    let res = otto(&["switching", "--periods", "20", "--levels", "8", "--out", path(dir.path())]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(dir.path().join("switching.csv")).unwrap();
    assert!(text.starts_with("time,battery_energy,system_energy"));
    assert!(text.lines().count() > 20);
}
