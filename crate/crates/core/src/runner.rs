//! Trajectory and sweep execution.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Monitoring, RunSpec, SweepParameter};
use crate::dynamics::{
    advance, stroke_propagator, CyclePropagators, DynamicsError, Integrator, PropagatorConfig, ProtocolState,
    StrokePropagator,
};
use crate::exec::Execution;
use crate::linalg::ComplexMatrix;
use crate::metrics::{critical_cycles, record_cycle, CycleRecord, MachineRole};
use crate::model::{MachineParams, Stroke};
use num_complex::Complex64;

/// Energy balance violations above this are reported.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("propagator cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Work-stroke propagators keyed by everything that enters `U`.
///
/// `T₂` and the bath temperatures do not enter `U`, so sweeps over them share
/// one entry. With a directory set, entries are also persisted to disk.
#[derive(Debug, Default)]
pub struct PropagatorCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<String, Arc<StrokePropagator>>>,
}

impl PropagatorCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            entries: Mutex::default(),
        }
    }

    pub fn key(p: &MachineParams, integrator: &Integrator) -> String {
        let bits = |x: f64| format!("{:016x}", x.to_bits());
        let integ = match integrator {
            Integrator::Taylor {
                step_radius,
                block_columns,
                check_columns,
            } => format!("taylor-{}-{block_columns}-{check_columns}", bits(*step_radius)),
            Integrator::Midpoint {
                initial_steps,
                max_doublings,
                tolerance,
            } => format!("midpoint-{initial_steps}-{max_doublings}-{}", bits(*tolerance)),
        };
        format!(
            "u-{}-{}-{}-{}-{}-{}-{integ}",
            bits(p.delta),
            bits(p.sweep_rate),
            bits(p.work_time),
            bits(p.coupling),
            bits(p.level_spacing),
            p.levels
        )
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the compression propagator, computing it at most once per key.
    pub fn get(&self, p: &MachineParams, cfg: &PropagatorConfig) -> Result<Arc<StrokePropagator>, RunError> {
        let key = Self::key(p, &cfg.integrator);
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{key}.bin")));
        let loaded = match &path {
            Some(path) if path.exists() => read_propagator(path, p.joint_dim())
                .map_err(|e| log::warn!("ignoring unreadable cache file {}: {e}", path.display()))
                .ok(),
            _ => None,
        };
        let sp = match loaded {
            Some(sp) => sp,
            None => {
                let sp = stroke_propagator(p, Stroke::Compression, cfg)?;
                if let Some(path) = &path {
                    write_propagator(path, &sp)?;
                }
                sp
            }
        };
        let sp = Arc::new(sp);
        self.entries.lock().expect("cache lock").insert(key, sp.clone());
        Ok(sp)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"OTTOU001";

fn write_propagator(path: &Path, sp: &StrokePropagator) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let n = sp.unitary.rows();
    let mut buf = Vec::with_capacity(32 + 16 * n * n);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(sp.step_count as u64).to_le_bytes());
    buf.extend_from_slice(&sp.convergence_residual.to_le_bytes());
    for z in sp.unitary.to_row_major() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    // Write then rename so concurrent readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(tmp, path)
}

fn read_propagator(path: &Path, dim: usize) -> std::io::Result<StrokePropagator> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    if buf.len() != 32 + 16 * dim * dim || &buf[..8] != CACHE_MAGIC {
        return Err(bad("unexpected size or header"));
    }
    let word = |i: usize| <[u8; 8]>::try_from(&buf[i..i + 8]).expect("8 bytes");
    if u64::from_le_bytes(word(8)) as usize != dim {
        return Err(bad("dimension mismatch"));
    }
    let step_count = u64::from_le_bytes(word(16)) as usize;
    let convergence_residual = f64::from_le_bytes(word(24));
    let data: Vec<Complex64> = (0..dim * dim)
        .map(|k| {
            let o = 32 + 16 * k;
            Complex64::new(f64::from_le_bytes(word(o)), f64::from_le_bytes(word(o + 8)))
        })
        .collect();
    Ok(StrokePropagator {
        unitary: ComplexMatrix::from_row_major(dim, dim, &data).map_err(|e| bad(&e.to_string()))?,
        step_count,
        convergence_residual,
    })
}

/// Result of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutput {
    /// Sweep coordinates, empty for a single run.
    pub point: Vec<(SweepParameter, f64)>,
    pub params: MachineParams,
    pub monitoring: Monitoring,
    pub role: Option<MachineRole>,
    pub records: Vec<CycleRecord>,
    pub n_star: Option<usize>,
    pub n_hash: Option<usize>,
    pub step_count: usize,
    pub convergence_residual: f64,
    /// Largest `|Q^h + Q^c + W − ΔE|` over the trajectory.
    pub max_balance_residual: f64,
    pub wall_time_s: f64,
}

/// Runs one trajectory from `τ_c ⊗ |0⟩⟨0|`.
pub fn run_trajectory(
    spec: &RunSpec,
    cache: &PropagatorCache,
    cfg: &PropagatorConfig,
) -> Result<TrajectoryOutput, RunError> {
    run_until(spec, cache, cfg, |_, _, _| false)
}

/// As [`run_trajectory`], but stops after the first cycle for which
/// `stop(previous, next, record)` holds, or after `spec.cycles` cycles.
pub fn run_until(
    spec: &RunSpec,
    cache: &PropagatorCache,
    cfg: &PropagatorConfig,
    mut stop: impl FnMut(&ProtocolState, &ProtocolState, &CycleRecord) -> bool,
) -> Result<TrajectoryOutput, RunError> {
    let start = Instant::now();
    let p = &spec.params;
    let stroke = cache.get(p, cfg)?;
    let cp = CyclePropagators::from_stroke(p, (*stroke).clone())?;
    let mut state = ProtocolState::initial(&cp, spec.monitoring.is_measured());
    let mut previous = (0.0, 0.0);
    let mut records = Vec::with_capacity(spec.cycles);
    let mut worst = 0.0f64;
    for _ in 0..spec.cycles {
        let (next, trace) = advance(&state, &cp)?;
        let rec = record_cycle(&trace, &next, previous, &cp, p, spec.keep_populations);
        let residual = (rec.q_hot + rec.q_cold + rec.work - rec.speed_e).abs();
        if residual > BALANCE_TOL {
            log::warn!("cycle {}: energy balance residual {residual:.3e}", rec.cycle);
        }
        worst = worst.max(residual);
        previous = (rec.e_battery, rec.ergotropy);
        let done = stop(&state, &next, &rec);
        records.push(rec);
        state = next;
        if done {
            break;
        }
    }
    let role = spec
        .role
        .or_else(|| records.first().and_then(|r| MachineRole::from_signs(r.q_hot, r.q_cold, r.work)));
    let critical = role.map(|r| critical_cycles(&records, r)).unwrap_or_default();
    Ok(TrajectoryOutput {
        point: spec.point.clone(),
        params: p.clone(),
        monitoring: spec.monitoring,
        role,
        records,
        n_star: critical.n_star,
        n_hash: critical.n_hash,
        step_count: stroke.step_count,
        convergence_residual: stroke.convergence_residual,
        max_balance_residual: worst,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every grid point of `cfg`, in grid order.
///
/// Points run concurrently under [`Execution::Parallel`]; each trajectory is
/// itself sequential in the cycle number, so results do not depend on the mode.
pub fn run_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<TrajectoryOutput>, RunError> {
    let runs = cfg.runs()?;
    let cache = PropagatorCache::new(cfg.cache_dir.clone());
    let pcfg = PropagatorConfig {
        integrator: cfg.integrator,
        execution: exec,
    };
    // Build each distinct propagator once before fanning out.
    for spec in &runs {
        cache.get(&spec.params, &pcfg)?;
    }
    exec.try_map(runs.len(), |i| run_trajectory(&runs[i], &cache, &pcfg))
}
