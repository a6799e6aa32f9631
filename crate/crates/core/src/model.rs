//! Hamiltonians, Gibbs states and Landau–Zener data of the machine–battery model.
//!
//! Units: ħ = k_B = 1 and the battery level spacing ω is the energy unit in all
//! presets. Work strokes use stroke-local time `t ∈ [0, T₁]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{herm_eig, kron, pauli, ComplexMatrix, DensityMatrix, HermitianEigen, LinalgError, MACHINE_DIM};

/// Largest joint dimension `2M` the model will build.
pub const MAX_JOINT_DIM: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid machine parameters: {0}")]
    InvalidParams(String),
    #[error("stroke time {t} outside [0, {work_time}]")]
    TimeOutOfRange { t: f64, work_time: f64 },
    #[error("joint dimension {dim} exceeds the configured maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Physical parameters of one machine–battery configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Tunnel splitting Δ.
    pub delta: f64,
    /// Sweep rate v of the longitudinal field ξ(t) = v t.
    pub sweep_rate: f64,
    /// Work-stroke duration T₁.
    pub work_time: f64,
    /// Heat-stroke duration T₂ (battery evolves freely meanwhile).
    pub therm_time: f64,
    /// Machine–battery coupling g.
    pub coupling: f64,
    /// Battery level spacing ω.
    pub level_spacing: f64,
    /// Number of battery levels M.
    pub levels: usize,
    pub beta_hot: f64,
    pub beta_cold: f64,
}

impl MachineParams {
    /// Engine parameter set: ε_c = Δ = 30ω, vT₁ = 200ω, g = ω, β_h⁻¹ = 200ω,
    /// β_c⁻¹ = 20ω, M = 300, T₁ = 40π/ω, instantaneous heat strokes.
    pub fn engine_preset() -> Self {
        Self::with_field_span(30.0, 200.0, 40.0 * PI, 1.0, 300, 1.0 / 200.0, 1.0 / 20.0)
    }

    /// Refrigerator parameter set: ε_c = Δ = 10ω, vT₁ = 300ω, T₁ = 10π/ω, other
    /// values as in [`MachineParams::engine_preset`].
    pub fn refrigerator_preset() -> Self {
        Self::with_field_span(10.0, 300.0, 10.0 * PI, 1.0, 300, 1.0 / 200.0, 1.0 / 20.0)
    }

    /// Parameters with the final field `vT₁` fixed instead of the rate.
    pub fn with_field_span(
        delta: f64,
        field_span: f64,
        work_time: f64,
        coupling: f64,
        levels: usize,
        beta_hot: f64,
        beta_cold: f64,
    ) -> Self {
        Self {
            delta,
            sweep_rate: field_span / work_time,
            work_time,
            therm_time: 0.0,
            coupling,
            level_spacing: 1.0,
            levels,
            beta_hot,
            beta_cold,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidParams(msg.to_string()));
        let finite = [
            self.delta,
            self.sweep_rate,
            self.work_time,
            self.therm_time,
            self.coupling,
            self.level_spacing,
            self.beta_hot,
            self.beta_cold,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return bad("all parameters must be finite");
        }
        if self.delta <= 0.0 {
            return bad("delta must be positive");
        }
        if self.sweep_rate <= 0.0 {
            return bad("sweep_rate must be positive");
        }
        if self.work_time <= 0.0 {
            return bad("work_time must be positive");
        }
        if self.therm_time < 0.0 {
            return bad("therm_time must be non-negative");
        }
        if self.coupling < 0.0 {
            return bad("coupling must be non-negative");
        }
        if self.level_spacing <= 0.0 {
            return bad("level_spacing must be positive");
        }
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if !(self.beta_hot > 0.0 && self.beta_cold > self.beta_hot) {
            return bad("need beta_cold > beta_hot > 0");
        }
        if MACHINE_DIM * self.levels > MAX_JOINT_DIM {
            return Err(ModelError::DimensionTooLarge {
                dim: MACHINE_DIM * self.levels,
                max: MAX_JOINT_DIM,
            });
        }
        Ok(())
    }

    /// Final longitudinal field vT₁.
    pub fn field_span(&self) -> f64 {
        self.sweep_rate * self.work_time
    }

    /// Half gap at the cold end of the strokes, ε_c = Δ.
    pub fn eps_cold(&self) -> f64 {
        self.delta
    }

    /// Half gap at the hot end, ε_h = √(Δ² + v²T₁²).
    pub fn eps_hot(&self) -> f64 {
        self.delta.hypot(self.field_span())
    }

    pub fn joint_dim(&self) -> usize {
        MACHINE_DIM * self.levels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stroke {
    Compression,
    Expansion,
}

/// Longitudinal field ξ at stroke-local time `t`.
pub fn field(t: f64, p: &MachineParams, stroke: Stroke) -> Result<f64, ModelError> {
    let slack = 1e-12 * p.work_time;
    if !(t >= -slack && t <= p.work_time + slack) {
        return Err(ModelError::TimeOutOfRange { t, work_time: p.work_time });
    }
    let t = t.clamp(0.0, p.work_time);
    Ok(match stroke {
        Stroke::Compression => p.sweep_rate * t,
        Stroke::Expansion => p.sweep_rate * (p.work_time - t),
    })
}

/// `H_M(t) = Δσ_x + ξ(t)σ_z`.
pub fn machine_hamiltonian(t: f64, p: &MachineParams, stroke: Stroke) -> Result<ComplexMatrix, ModelError> {
    let xi = field(t, p, stroke)?;
    Ok(machine_hamiltonian_at_field(p.delta, xi))
}

pub fn machine_hamiltonian_at_field(delta: f64, xi: f64) -> ComplexMatrix {
    ComplexMatrix::from_real_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => xi,
        (1, 1) => -xi,
        _ => delta,
    })
}

/// Machine Hamiltonian at the cold end (ξ = 0) of the work strokes.
pub fn machine_hamiltonian_cold(p: &MachineParams) -> ComplexMatrix {
    machine_hamiltonian_at_field(p.delta, 0.0)
}

/// Machine Hamiltonian at the hot end (ξ = vT₁).
pub fn machine_hamiltonian_hot(p: &MachineParams) -> ComplexMatrix {
    machine_hamiltonian_at_field(p.delta, p.field_span())
}

/// Battery energies `l ω`, `l = 0..M`.
pub fn battery_levels(p: &MachineParams) -> Vec<f64> {
    (0..p.levels).map(|l| l as f64 * p.level_spacing).collect()
}

/// `H_B = ω Σ l |l⟩⟨l|`.
pub fn battery_hamiltonian(p: &MachineParams) -> ComplexMatrix {
    ComplexMatrix::from_real_diagonal(&battery_levels(p))
}

/// Off-diagonal of the position operator: entry `l` couples `|l⟩` and `|l+1⟩`.
pub fn position_offdiagonal(levels: usize) -> Vec<f64> {
    (0..levels.saturating_sub(1)).map(|l| ((l + 1) as f64).sqrt()).collect()
}

/// `q = Σ_{l=0}^{M−2} √(l+1) (|l⟩⟨l+1| + h.c.)`
pub fn position_operator(levels: usize) -> ComplexMatrix {
    let off = position_offdiagonal(levels);
    ComplexMatrix::from_real_fn(levels, levels, |i, j| {
        if j == i + 1 {
            off[i]
        } else if i == j + 1 {
            off[j]
        } else {
            0.0
        }
    })
}

/// `H(t) = H_M(t) ⊗ I + I ⊗ H_B + g σ_x ⊗ q`, the coupling term only when `coupling_on`.
pub fn total_hamiltonian(
    t: f64,
    p: &MachineParams,
    stroke: Stroke,
    coupling_on: bool,
) -> Result<ComplexMatrix, ModelError> {
    if p.joint_dim() > MAX_JOINT_DIM {
        return Err(ModelError::DimensionTooLarge {
            dim: p.joint_dim(),
            max: MAX_JOINT_DIM,
        });
    }
    let hm = machine_hamiltonian(t, p, stroke)?;
    Ok(joint_hamiltonian(&hm, p, if coupling_on { p.coupling } else { 0.0 }))
}

/// `hm ⊗ I + I ⊗ H_B + g σ_x ⊗ q` for an arbitrary 2×2 machine Hamiltonian.
pub fn joint_hamiltonian(hm: &ComplexMatrix, p: &MachineParams, coupling: f64) -> ComplexMatrix {
    let m = p.levels;
    let mut h = &kron(hm, &ComplexMatrix::identity(m)) + &kron(&ComplexMatrix::identity(2), &battery_hamiltonian(p));
    if coupling != 0.0 {
        h = &h + &kron(&pauli::sigma_x(), &position_operator(m)).scale_real(coupling);
    }
    h
}

/// Canonical state `exp(−βh) / Tr exp(−βh)`, evaluated in the eigenbasis of `h`.
pub fn gibbs_state(h: &ComplexMatrix, beta: f64) -> Result<DensityMatrix, ModelError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(ModelError::InvalidParams(format!("inverse temperature {beta} must be positive")));
    }
    let eig = herm_eig(h)?;
    let ground = eig.values[0];
    let boltzmann: Vec<f64> = eig.values.iter().map(|&e| (-beta * (e - ground)).exp()).collect();
    let z: f64 = boltzmann.iter().sum();
    let weights: Vec<f64> = boltzmann.iter().map(|w| w / z).collect();
    Ok(DensityMatrix::new(eig.reconstruct_with(&weights).hermitian_part())?)
}

/// Landau–Zener data of the work stroke: α = exp(−2πδ), φ, δ = Δ²/2v.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandauZenerData {
    pub alpha: f64,
    pub phase: f64,
    pub delta_param: f64,
}

impl LandauZenerData {
    /// From the adiabaticity parameter δ ≥ 0.
    pub fn from_adiabaticity(delta_param: f64) -> Self {
        assert!(delta_param >= 0.0, "adiabaticity parameter must be non-negative");
        let alpha = (-2.0 * PI * delta_param).exp();
        let phase = if delta_param == 0.0 {
            PI / 4.0
        } else {
            let arg_gamma = ln_gamma(Complex64::new(1.0, -delta_param)).im;
            PI / 4.0 - delta_param * (delta_param.ln() - 1.0) - arg_gamma
        };
        Self {
            alpha,
            phase,
            delta_param,
        }
    }
}

pub fn landau_zener(p: &MachineParams) -> LandauZenerData {
    assert!(p.sweep_rate > 0.0, "sweep rate must be positive");
    LandauZenerData::from_adiabaticity(p.delta * p.delta / (2.0 * p.sweep_rate))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex log-gamma (Lanczos, g = 7), reflected for `Re z < 1/2`.
///
/// The imaginary part is determined modulo 2π.
pub fn ln_gamma(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        let pi = Complex64::new(PI, 0.0);
        return pi.ln() - (pi * z).sin().ln() - ln_gamma(Complex64::new(1.0, 0.0) - z);
    }
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS_COEFFS[0], 0.0);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// Eigenbasis of a 2×2 machine Hamiltonian: column 0 is `|−⟩`, column 1 is `|+⟩`.
pub fn machine_eigenbasis(hm: &ComplexMatrix) -> Result<HermitianEigen, ModelError> {
    Ok(herm_eig(hm)?)
}

/// Closed-form compression propagator
/// `√(1−α)(e^{−iφ}|+_h⟩⟨+_c| + e^{iφ}|−_h⟩⟨−_c|) − √α(|+_h⟩⟨−_c| − |−_h⟩⟨+_c|)`.
pub fn analytic_machine_unitary(lz: &LandauZenerData, cold: &HermitianEigen, hot: &HermitianEigen) -> ComplexMatrix {
    let plus_c = cold.vector(1);
    let minus_c = cold.vector(0);
    let plus_h = hot.vector(1);
    let minus_h = hot.vector(0);
    let ket_bra = |ket: &[Complex64], bra: &[Complex64]| ComplexMatrix::from_fn(2, 2, |i, j| ket[i] * bra[j].conj());
    let keep = (1.0 - lz.alpha).max(0.0).sqrt();
    let flip = lz.alpha.sqrt();
    let e_minus = Complex64::from_polar(1.0, -lz.phase);
    let e_plus = Complex64::from_polar(1.0, lz.phase);
    let adiabatic = &ket_bra(&plus_h, &plus_c).scale(e_minus * keep) + &ket_bra(&minus_h, &minus_c).scale(e_plus * keep);
    let swap = &ket_bra(&plus_h, &minus_c) - &ket_bra(&minus_h, &plus_c);
    &adiabatic - &swap.scale_real(flip)
}
