use otto_battery::config::{ExperimentConfig, Monitoring};
use otto_battery::exec::Execution;
use otto_battery::output::{emit, read_json, write_summary_csv, write_trajectory_csv, Format, TRAJECTORY_COLUMNS};
use otto_battery::runner::{run_sweep, TrajectoryOutput};

const SMALL: &str = r#"
mode = "custom"
cycles = 25
monitoring = "unmeasured"
outputs = ["e_battery", "populations"]

[machine]
delta = 3.0
field_span = 20.0
work_time = "2pi"
therm_time = "2pi"
coupling = 1.0
level_spacing = 1.0
levels = 6
beta_hot = 0.05
beta_cold = 0.5

[[sweep]]
parameter = "work_time"
min = "pi"
max = "3pi"
count = 3
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

fn csv_bytes(outputs: &[TrajectoryOutput]) -> (Vec<u8>, Vec<u8>) {
    let mut traj = Vec::new();
    let mut summary = Vec::new();
    write_trajectory_csv(outputs, &mut traj).unwrap();
    write_summary_csv(outputs, &mut summary).unwrap();
    (traj, summary)
}

#[test]
fn sweep_writes_one_row_per_cycle_and_point() {
    let cfg = small();
    let outputs = run_sweep(&cfg, Execution::Parallel).unwrap();
    assert_eq!(outputs.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let paths = emit(&outputs, Format::Csv, dir.path()).unwrap();
    assert_eq!(paths.len(), 2);

    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[0], "work_time");
    assert_eq!(&header[1..1 + TRAJECTORY_COLUMNS.len()], TRAJECTORY_COLUMNS);
    assert_eq!(header.last().unwrap(), "pop_5");
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 25);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[1].parse::<usize>().unwrap(), i % 25 + 1);
        let pops: f64 = (0..6).map(|l| row[1 + TRAJECTORY_COLUMNS.len() + l].parse::<f64>().unwrap()).sum();
        assert!((pops - 1.0).abs() < 1e-10);
    }

    let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert!(header.contains(&"n_star".to_string()) && header.contains(&"n_hash".to_string()));
    assert_eq!(rdr.records().count(), 3);
}

#[test]
fn json_round_trip_is_exact() {
    let outputs = run_sweep(&small(), Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&outputs, Format::Json, dir.path()).unwrap();
    let doc = read_json(std::fs::File::open(dir.path().join("trajectory.json")).unwrap()).unwrap();
    assert_eq!(doc.trajectories.len(), outputs.len());
    for (a, b) in doc.trajectories.iter().zip(&outputs) {
        assert_eq!(a.records, b.records);
        assert_eq!(a.params, b.params);
        assert_eq!((a.n_star, a.n_hash), (b.n_star, b.n_hash));
    }
}

#[test]
fn output_is_deterministic_across_runs_and_execution_modes() {
    let cfg = small();
    let first = csv_bytes(&run_sweep(&cfg, Execution::Sequential).unwrap());
    let again = csv_bytes(&run_sweep(&cfg, Execution::Sequential).unwrap());
    let parallel = csv_bytes(&run_sweep(&cfg, Execution::Parallel).unwrap());
    assert_eq!(first, again);
    assert_eq!(first, parallel);
}

#[test]
fn uncoupled_cycles_repeat_exactly() {
    let mut cfg = small();
    cfg.machine.coupling = Some(0.0);
    cfg.sweep.clear();
    for monitoring in [Monitoring::Unmeasured, Monitoring::PerCycle] {
        cfg.monitoring = monitoring;
        let out = run_sweep(&cfg, Execution::Sequential).unwrap().remove(0);
        let r0 = &out.records[0];
        assert!(r0.work < 0.0 || r0.work > 0.0);
        for r in &out.records {
            assert!((r.work - r0.work).abs() < 1e-12);
            assert!((r.q_hot - r0.q_hot).abs() < 1e-12);
            assert!((r.q_cold - r0.q_cold).abs() < 1e-12);
            assert!(r.e_battery.abs() < 1e-12);
            assert!(r.ergotropy.abs() < 1e-12);
            assert!(r.coeff_var.is_none());
        }
    }
}

#[test]
fn measured_and_unmeasured_agree_on_the_first_cycle() {
    let mut cfg = small();
    cfg.sweep.clear();
    cfg.monitoring = Monitoring::Unmeasured;
    let a = run_sweep(&cfg, Execution::Sequential).unwrap().remove(0);
    cfg.monitoring = Monitoring::PerCycle;
    let b = run_sweep(&cfg, Execution::Sequential).unwrap().remove(0);
    let (ra, rb) = (&a.records[0], &b.records[0]);
    assert!((ra.work - rb.work).abs() < 1e-12);
    assert!((ra.e_battery - rb.e_battery).abs() < 1e-12);
    assert!(rb.erg_coherent.abs() < 1e-12);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("levels = 6", "levels = 0")).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("cycles = 25", "cycles = 0")).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("\"e_battery\"", "\"entropy\"")).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("delta = 3.0", "delta = 3.0\ncolour = 1")).is_err());
    assert!(ExperimentConfig::from_toml_str(&SMALL.replace("coupling = 1.0\n", "")).is_err());
}
