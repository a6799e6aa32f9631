//! Closed-form cycle averages of the isolated machine and its operating modes.
//!
//! With `y = 1 − 2α`, `x = ε_h/ε_c` and `η = tanh(β_hε_h)/tanh(β_cε_c)`, the
//! averages in units of `ε_c tanh(β_cε_c)` are
//!
//! ```text
//! w  = 1 + xη − y(x + η)
//! qh = x(y − η)
//! qc = yη − 1
//! ```
//!
//! so the operating mode depends on `(α, x, η)` only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inequality form disagrees with the sign triple at alpha={alpha}, x={x}, eta={eta}")]
    Inconsistent { alpha: f64, x: f64, eta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolatedCycleAverages {
    pub work: f64,
    pub q_hot: f64,
    pub q_cold: f64,
}

/// Per-cycle work and heats of the machine without a battery.
pub fn isolated_cycle_averages(
    alpha: f64,
    eps_c: f64,
    eps_h: f64,
    beta_c: f64,
    beta_h: f64,
) -> Result<IsolatedCycleAverages, AnalyticError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AnalyticError::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(eps_c > 0.0 && eps_h >= eps_c) {
        return Err(AnalyticError::InvalidArgument("need eps_h >= eps_c > 0".into()));
    }
    if !(beta_h > 0.0 && beta_c >= beta_h) {
        return Err(AnalyticError::InvalidArgument("need beta_c >= beta_h > 0".into()));
    }
    let y = 1.0 - 2.0 * alpha;
    let tc = (beta_c * eps_c).tanh();
    let th = (beta_h * eps_h).tanh();
    Ok(IsolatedCycleAverages {
        work: -(y * eps_h - eps_c) * tc - (y * eps_c - eps_h) * th,
        q_hot: eps_h * (y * tc - th),
        q_cold: eps_c * (y * th - tc),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineMode {
    /// `W < 0`, `Q^h > 0`, `Q^c < 0`.
    Engine,
    /// `W > 0`, `Q^h < 0`, `Q^c > 0`.
    Refrigerator,
    /// `W > 0`, `Q^h > 0`, `Q^c < 0`.
    FailEmitCold,
    /// `W > 0`, `Q^h < 0`, `Q^c < 0`.
    FailEmitBoth,
    /// At least one of the three averages vanishes.
    Boundary,
}

impl MachineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MachineMode::Engine => "engine",
            MachineMode::Refrigerator => "refrigerator",
            MachineMode::FailEmitCold => "fail_emit_cold",
            MachineMode::FailEmitBoth => "fail_emit_both",
            MachineMode::Boundary => "boundary",
        }
    }
}

impl std::fmt::Display for MachineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cycle averages in units of `ε_c tanh(β_cε_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAverages {
    pub work: f64,
    pub q_hot: f64,
    pub q_cold: f64,
}

pub fn normalized_averages(alpha: f64, x: f64, eta: f64) -> NormalizedAverages {
    let y = 1.0 - 2.0 * alpha;
    NormalizedAverages {
        work: 1.0 + x * eta - y * (x + eta),
        q_hot: x * (y - eta),
        q_cold: y * eta - 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineClassification {
    pub mode: MachineMode,
    pub x: f64,
    pub eta: f64,
    pub alpha: f64,
    pub averages: NormalizedAverages,
}

/// Upper α bound for negative work (engine side, `η < 1`).
pub fn work_threshold(x: f64, eta: f64) -> f64 {
    0.5 * (1.0 - (x * eta + 1.0) / (eta + x))
}

/// α at which `Q^h` vanishes.
pub fn hot_heat_threshold(eta: f64) -> f64 {
    0.5 * (1.0 - eta)
}

/// α at which `Q^c` vanishes.
pub fn cold_heat_threshold(eta: f64) -> f64 {
    (eta - 1.0) / (2.0 * eta)
}

/// Operating mode from the sign triple, cross-checked against the α inequalities.
pub fn classify(alpha: f64, x: f64, eta: f64) -> Result<MachineClassification, AnalyticError> {
    if !(x > 1.0 && x.is_finite()) {
        return Err(AnalyticError::InvalidArgument(format!("compression factor {x} must exceed 1")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AnalyticError::InvalidArgument(format!("eta {eta} must be positive")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AnalyticError::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let avg = normalized_averages(alpha, x, eta);
    let tol = 1e-12 * (1.0 + x) * (1.0 + eta);
    let sign = |v: f64| if v.abs() <= tol { 0 } else if v > 0.0 { 1 } else { -1 };
    let triple = (sign(avg.work), sign(avg.q_hot), sign(avg.q_cold));
    let mode = match triple {
        (-1, 1, -1) => MachineMode::Engine,
        (1, -1, 1) => MachineMode::Refrigerator,
        (1, 1, -1) => MachineMode::FailEmitCold,
        (1, -1, -1) => MachineMode::FailEmitBoth,
        (w, h, c) if w == 0 || h == 0 || c == 0 => MachineMode::Boundary,
        _ => return Err(AnalyticError::Inconsistent { alpha, x, eta }),
    };

    let engine_ineq = alpha < work_threshold(x, eta) && alpha < hot_heat_threshold(eta) && alpha > cold_heat_threshold(eta);
    let fridge_ineq = alpha > work_threshold(x, eta) && alpha > hot_heat_threshold(eta) && alpha < cold_heat_threshold(eta);
    let consistent = match mode {
        MachineMode::Engine => engine_ineq && eta < 1.0,
        MachineMode::Refrigerator => fridge_ineq && eta > 1.0 && alpha < 0.5,
        MachineMode::FailEmitCold | MachineMode::FailEmitBoth => !engine_ineq && !fridge_ineq,
        MachineMode::Boundary => true,
    };
    if !consistent {
        return Err(AnalyticError::Inconsistent { alpha, x, eta });
    }
    Ok(MachineClassification {
        mode,
        x,
        eta,
        alpha,
        averages: avg,
    })
}

/// `(x, η)` of a parameter set.
pub fn compression_and_eta(eps_c: f64, eps_h: f64, beta_c: f64, beta_h: f64) -> (f64, f64) {
    (eps_h / eps_c, (beta_h * eps_h).tanh() / (beta_c * eps_c).tanh())
}

/// Inclusive uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Classification over an `(α, η)` grid at fixed `x`, α-major.
pub fn phase_portrait(
    alpha: GridAxis,
    eta: GridAxis,
    x: f64,
    exec: Execution,
) -> Result<Vec<MachineClassification>, AnalyticError> {
    let alphas = alpha.values();
    let etas = eta.values();
    let ne = etas.len();
    exec.try_map(alphas.len() * ne, |i| classify(alphas[i / ne], x, etas[i % ne]))
}
