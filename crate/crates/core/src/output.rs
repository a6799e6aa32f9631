//! CSV and JSON serialization of trajectories, sweeps and grids.
//!
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! give byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::MachineClassification;
use crate::runner::TrajectoryOutput;
use crate::switching::SwitchingSeries;

pub const SCHEMA_VERSION: u32 = 1;

/// Fixed trajectory columns, before any populations.
pub const TRAJECTORY_COLUMNS: [&str; 12] = [
    "cycle",
    "q_hot",
    "q_cold",
    "work",
    "e_battery",
    "variance",
    "coeff_var",
    "ergotropy",
    "erg_incoherent",
    "erg_coherent",
    "speed_e",
    "speed_erg",
];

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "monitoring",
    "cycles",
    "n_star",
    "n_hash",
    "step_count",
    "convergence_residual",
];

pub const PHASE_PORTRAIT_COLUMNS: [&str; 7] = ["alpha", "eta", "x", "mode", "w", "q_hot", "q_cold"];

/// Written in place of `coeff_var` when the battery is uncharged.
pub const UNDEFINED: &str = "undefined";
/// Written when no critical cycle was found.
pub const NONE: &str = "none";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("trajectories disagree on {0}")]
    Ragged(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt<T: ToString>(x: Option<T>, missing: &str) -> String {
    x.map_or_else(|| missing.to_string(), |v| v.to_string())
}

/// Axis names shared by all trajectories, and the population count.
fn layout(outputs: &[TrajectoryOutput]) -> Result<(Vec<&'static str>, usize), OutputError> {
    let Some(first) = outputs.first() else {
        return Ok((Vec::new(), 0));
    };
    let axes: Vec<&'static str> = first.point.iter().map(|(a, _)| a.name()).collect();
    let pops = first.records.first().map_or(0, |r| r.populations.len());
    for o in outputs {
        if o.point.iter().map(|(a, _)| a.name()).ne(axes.iter().copied()) {
            return Err(OutputError::Ragged("sweep axes"));
        }
        if o.records.iter().any(|r| r.populations.len() != pops) {
            return Err(OutputError::Ragged("population columns"));
        }
    }
    Ok((axes, pops))
}

/// One row per cycle per grid point: sweep coordinates, the fixed columns,
/// then `pop_0..pop_{M−1}` when populations were kept.
pub fn write_trajectory_csv<W: Write>(outputs: &[TrajectoryOutput], w: W) -> Result<(), OutputError> {
    let (axes, pops) = layout(outputs)?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = axes.iter().map(|s| s.to_string()).collect();
    header.extend(TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()));
    header.extend((0..pops).map(|l| format!("pop_{l}")));
    wr.write_record(&header)?;
    for o in outputs {
        for r in &o.records {
            let mut row: Vec<String> = o.point.iter().map(|(_, v)| num(*v)).collect();
            row.push(r.cycle.to_string());
            row.extend(
                [r.q_hot, r.q_cold, r.work, r.e_battery, r.variance]
                    .into_iter()
                    .map(num),
            );
            row.push(r.coeff_var.map_or_else(|| UNDEFINED.to_string(), num));
            row.extend(
                [r.ergotropy, r.erg_incoherent, r.erg_coherent, r.speed_e, r.speed_erg]
                    .into_iter()
                    .map(num),
            );
            row.extend(r.populations.iter().copied().map(num));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// One row per grid point with the detected critical cycles.
pub fn write_summary_csv<W: Write>(outputs: &[TrajectoryOutput], w: W) -> Result<(), OutputError> {
    let (axes, _) = layout(outputs)?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = axes.iter().map(|s| s.to_string()).collect();
    header.extend(SUMMARY_COLUMNS.iter().map(|s| s.to_string()));
    wr.write_record(&header)?;
    for o in outputs {
        let mut row: Vec<String> = o.point.iter().map(|(_, v)| num(*v)).collect();
        row.push(o.monitoring.as_str().to_string());
        row.push(o.records.len().to_string());
        row.push(opt(o.n_star, NONE));
        row.push(opt(o.n_hash, NONE));
        row.push(o.step_count.to_string());
        row.push(num(o.convergence_residual));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub schema_version: u32,
    pub trajectories: Vec<TrajectoryOutput>,
}

pub fn write_json<W: Write>(outputs: &[TrajectoryOutput], w: W) -> Result<(), OutputError> {
    let doc = TrajectoryDocument {
        schema_version: SCHEMA_VERSION,
        trajectories: outputs.to_vec(),
    };
    serde_json::to_writer_pretty(w, &doc)?;
    Ok(())
}

pub fn read_json<R: std::io::Read>(r: R) -> Result<TrajectoryDocument, OutputError> {
    Ok(serde_json::from_reader(r)?)
}

pub fn write_phase_portrait_csv<W: Write>(grid: &[MachineClassification], w: W) -> Result<(), OutputError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(PHASE_PORTRAIT_COLUMNS)?;
    for c in grid {
        wr.write_record([
            num(c.alpha),
            num(c.eta),
            num(c.x),
            c.mode.as_str().to_string(),
            num(c.averages.work),
            num(c.averages.q_hot),
            num(c.averages.q_cold),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_switching_csv<W: Write>(series: &SwitchingSeries, w: W) -> Result<(), OutputError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time", "battery_energy", "system_energy"])?;
    for ((t, b), s) in series.time.iter().zip(&series.battery_energy).zip(&series.system_energy) {
        wr.write_record([num(*t), num(*b), num(*s)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `trajectory.csv` and `summary.csv`, or `trajectory.json`, into `dir`.
pub fn emit(outputs: &[TrajectoryOutput], format: Format, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<(PathBuf, std::io::BufWriter<std::fs::File>), OutputError> {
        let path = dir.join(name);
        Ok((path.clone(), std::io::BufWriter::new(std::fs::File::create(path)?)))
    };
    match format {
        Format::Csv => {
            let (a, wa) = create("trajectory.csv")?;
            write_trajectory_csv(outputs, wa)?;
            let (b, wb) = create("summary.csv")?;
            write_summary_csv(outputs, wb)?;
            Ok(vec![a, b])
        }
        Format::Json => {
            let (a, wa) = create("trajectory.json")?;
            write_json(outputs, wa)?;
            Ok(vec![a])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Monitoring, SweepParameter};
    use crate::metrics::{CycleRecord, MachineRole};
    use crate::model::MachineParams;

    fn record(cycle: usize, pops: usize) -> CycleRecord {
        CycleRecord {
            cycle,
            q_hot: 0.1 * cycle as f64,
            q_cold: -1.0 / 3.0,
            work: 1e-17,
            e_battery: 2.0,
            variance: 0.5,
            coeff_var: (cycle > 1).then_some(0.25),
            populations: vec![1.0 / pops.max(1) as f64; pops],
            ergotropy: std::f64::consts::PI,
            erg_incoherent: 1.0,
            erg_coherent: std::f64::consts::PI - 1.0,
            speed_e: 0.0,
            speed_erg: -0.125,
        }
    }

    fn output(point: Vec<(SweepParameter, f64)>, cycles: usize, pops: usize) -> TrajectoryOutput {
        TrajectoryOutput {
            point,
            params: MachineParams::engine_preset(),
            monitoring: Monitoring::PerCycle,
            role: Some(MachineRole::Engine),
            records: (1..=cycles).map(|n| record(n, pops)).collect(),
            n_star: Some(2),
            n_hash: None,
            step_count: 7,
            convergence_residual: 1e-13,
            max_balance_residual: 0.0,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let mut buf = Vec::new();
        write_trajectory_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", TRAJECTORY_COLUMNS.join(",")));
    }

    #[test]
    fn csv_layout() {
        let outs = vec![
            output(vec![(SweepParameter::WorkTime, 1.0)], 3, 2),
            output(vec![(SweepParameter::WorkTime, 2.5)], 2, 2),
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&outs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 5);
        assert!(lines[0].starts_with("work_time,cycle,q_hot"));
        assert!(lines[0].ends_with("speed_erg,pop_0,pop_1"));
        assert!(lines[1].starts_with("1,1,0.1,"));
        assert!(lines[1].contains(",undefined,"));
        assert!(lines[2].contains(",0.25,"));

        let mut parsed = csv::Reader::from_reader(text.as_bytes());
        for row in parsed.records() {
            let row = row.unwrap();
            assert_eq!(row.len(), 1 + 12 + 2);
            let q_cold: f64 = row[3].parse().unwrap();
            assert_eq!(q_cold, -1.0 / 3.0);
        }

        let mut buf = Vec::new();
        write_summary_csv(&outs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().collect::<Vec<_>>(),
            [
                "work_time,monitoring,cycles,n_star,n_hash,step_count,convergence_residual",
                "1,per_cycle,3,2,none,7,0.0000000000001",
                "2.5,per_cycle,2,2,none,7,0.0000000000001",
            ]
        );
    }

    #[test]
    fn ragged_outputs_are_rejected() {
        let outs = vec![output(Vec::new(), 1, 2), output(Vec::new(), 1, 3)];
        assert!(write_trajectory_csv(&outs, Vec::new()).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let outs = vec![output(vec![(SweepParameter::ThermTime, 0.1 + 0.2)], 4, 3)];
        let mut buf = Vec::new();
        write_json(&outs, &mut buf).unwrap();
        let doc = read_json(buf.as_slice()).unwrap();
        assert_eq!(doc.schema_version, SCHEMA_VERSION);
        assert_eq!(doc.trajectories, outs);
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let outs = vec![output(Vec::new(), 2, 0)];
        let csv = emit(&outs, Format::Csv, dir.path()).unwrap();
        assert_eq!(csv.len(), 2);
        let json = emit(&outs, Format::Json, dir.path()).unwrap();
        assert!(json[0].exists());
    }
}
