//! A static two-level system coupled to the battery by a periodically switched
//! interaction. Used to show that switching alone does not charge the battery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expm_unitary, kron, pauli, ComplexMatrix, DensityMatrix, LinalgError, MACHINE_DIM};
use crate::model::{gibbs_state, machine_hamiltonian_at_field, position_operator, ModelError, MAX_JOINT_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchingError {
    #[error("invalid switching parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingParams {
    pub delta: f64,
    /// Static longitudinal field ε.
    pub field: f64,
    pub coupling: f64,
    /// Duration τ₁ of each coupled segment.
    pub on_time: f64,
    /// Duration τ₂ of each uncoupled segment, appended after τ₁.
    pub off_time: f64,
    pub levels: usize,
    /// Inverse temperature of the initial two-level state.
    pub beta: f64,
    pub periods: usize,
    #[serde(default = "unit_spacing")]
    pub level_spacing: f64,
}

fn unit_spacing() -> f64 {
    1.0
}

impl Default for SwitchingParams {
    /// Δ = 30ω, ε = 200ω, g = ω, M = 30, τ₁ = τ₂ = ω⁻¹, β⁻¹ = 20ω, 10³ periods.
    fn default() -> Self {
        Self {
            delta: 30.0,
            field: 200.0,
            coupling: 1.0,
            on_time: 1.0,
            off_time: 1.0,
            levels: 30,
            beta: 1.0 / 20.0,
            periods: 1000,
            level_spacing: 1.0,
        }
    }
}

impl SwitchingParams {
    pub fn validate(&self) -> Result<(), SwitchingError> {
        let positive = [self.delta, self.field, self.on_time, self.off_time, self.beta, self.level_spacing]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(SwitchingError::InvalidParams("energies and times must be positive".into()));
        }
        if self.levels < 2 {
            return Err(SwitchingError::InvalidParams("need at least two battery levels".into()));
        }
        if MACHINE_DIM * self.levels > MAX_JOINT_DIM {
            return Err(ModelError::DimensionTooLarge {
                dim: MACHINE_DIM * self.levels,
                max: MAX_JOINT_DIM,
            }
            .into());
        }
        Ok(())
    }
}

/// Energies sampled at `t = 0` and at every switch instant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSeries {
    pub time: Vec<f64>,
    pub battery_energy: Vec<f64>,
    pub system_energy: Vec<f64>,
    /// Largest relative change of the segment Hamiltonian's expectation across a segment.
    pub max_segment_energy_error: f64,
}

/// Runs the switching protocol with coupling `g σ_x ⊗ q`.
pub fn simulate_switching(p: &SwitchingParams) -> Result<SwitchingSeries, SwitchingError> {
    simulate_switching_with(p, &pauli::sigma_x(), &position_operator(p.levels))
}

/// Runs the switching protocol with coupling `g A ⊗ B`.
pub fn simulate_switching_with(
    p: &SwitchingParams,
    system_op: &ComplexMatrix,
    battery_op: &ComplexMatrix,
) -> Result<SwitchingSeries, SwitchingError> {
    p.validate()?;
    let m = p.levels;
    let h_sys = machine_hamiltonian_at_field(p.delta, p.field);
    let h_b = ComplexMatrix::from_real_diagonal(&(0..m).map(|l| l as f64 * p.level_spacing).collect::<Vec<_>>());
    let sys_ext = kron(&h_sys, &ComplexMatrix::identity(m));
    let bat_ext = kron(&ComplexMatrix::identity(MACHINE_DIM), &h_b);
    let h_off = &sys_ext + &bat_ext;
    let h_on = &h_off + &kron(system_op, battery_op).scale_real(p.coupling);
    let u_on = expm_unitary(&h_on, p.on_time)?;
    let u_off = expm_unitary(&h_off, p.off_time)?;

    let initial_sys = gibbs_state(&pauli::sigma_x().scale_real(p.delta), p.beta)?;
    let mut rho = kron(initial_sys.matrix(), DensityMatrix::basis_state(m, 0).matrix());

    let mut series = SwitchingSeries::default();
    let mut t = 0.0;
    let sample = |rho: &ComplexMatrix, t: f64, s: &mut SwitchingSeries| {
        s.time.push(t);
        s.battery_energy.push(rho.trace_product(&bat_ext).re);
        s.system_energy.push(rho.trace_product(&sys_ext).re);
    };
    sample(&rho, t, &mut series);
    let mut worst = 0.0f64;
    for _ in 0..p.periods {
        for (u, h, dt) in [(&u_on, &h_on, p.on_time), (&u_off, &h_off, p.off_time)] {
            let before = rho.trace_product(h).re;
            rho = rho.conjugate_by(u).hermitian_part();
            let after = rho.trace_product(h).re;
            worst = worst.max((after - before).abs() / before.abs().max(1.0));
            t += dt;
            sample(&rho, t, &mut series);
        }
    }
    series.max_segment_energy_error = worst;
    Ok(series)
}

/// Ordinary least-squares line with the standard error of its slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Some(LinearFit {
        slope,
        intercept,
        slope_stderr: (ssr / (nf - 2.0) / sxx).sqrt(),
    })
}

/// Range of the second half of `values` divided by the range of the first half.
pub fn half_range_ratio(values: &[f64]) -> Option<f64> {
    if values.len() < 4 {
        return None;
    }
    let range = |s: &[f64]| {
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        hi - lo
    };
    let (a, b) = values.split_at(values.len() / 2);
    let ra = range(a);
    (ra > 0.0).then(|| range(b) / ra)
}
