//! Work-stroke propagators, thermalization maps and the cycle channel.
//!
//! At every cycle boundary the joint state is a product `μ ⊗ σ`: the heat
//! strokes reset the machine to a Gibbs state. [`advance`] exploits this. It
//! applies each work stroke to the battery as a Kraus channel built from the
//! `M×M` blocks of the propagator, so a cycle costs a handful of `M×M` products
//! rather than `2M×2M` sandwiches. [`cycle_map`] is the literal joint-state
//! map and serves as the reference for it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{
    expm_unitary, herm_eig, herm_eigenvalues, kron, trace_out_battery, trace_out_machine, ComplexMatrix, DensityMatrix,
    LinalgError, MACHINE_DIM,
};
use crate::model::{
    battery_levels, gibbs_state, joint_hamiltonian, machine_hamiltonian, machine_hamiltonian_cold,
    machine_hamiltonian_hot, MachineParams, ModelError, Stroke,
};

/// Unitarity residual above which a propagator is re-orthonormalised.
pub const REUNITARIZE_THRESHOLD: f64 = 5e-10;
/// Largest accepted unitarity residual of a finished propagator.
pub const UNITARITY_TOL: f64 = 1e-9;
/// States with a most negative eigenvalue in `[PSD_ABORT, -PSD_TOL)` are clipped.
pub const PSD_ABORT: f64 = -1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("propagator did not converge: residual {residual:.3e} after {steps} steps")]
    NonConvergence { steps: usize, residual: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// Time-stepping scheme for the work-stroke propagator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    /// Exact-ODE Taylor series on uniform steps, evolved in column blocks.
    Taylor {
        /// Step size times a bound on the spectral radius.
        step_radius: f64,
        /// Columns of `U` evolved together.
        block_columns: usize,
        /// Columns re-evolved at half the step to estimate the error; 0 disables.
        check_columns: usize,
    },
    /// Midpoint exponential product, refined by step doubling.
    Midpoint {
        initial_steps: usize,
        max_doublings: u32,
        tolerance: f64,
    },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Taylor {
            step_radius: 5.0,
            block_columns: 16,
            check_columns: 16,
        }
    }
}

impl Integrator {
    pub fn midpoint() -> Self {
        Integrator::Midpoint {
            initial_steps: 64,
            max_doublings: 16,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    pub integrator: Integrator,
    pub execution: Execution,
}

/// A work-stroke unitary with its integrator diagnostics.
#[derive(Clone, Debug)]
pub struct StrokePropagator {
    pub unitary: ComplexMatrix,
    pub step_count: usize,
    pub convergence_residual: f64,
}

/// Compression propagator `U` with the default integrator.
pub fn compression_propagator(p: &MachineParams) -> Result<ComplexMatrix, DynamicsError> {
    Ok(stroke_propagator(p, Stroke::Compression, &PropagatorConfig::default())?.unitary)
}

/// Time-ordered propagator of a work stroke with the coupling switched on.
pub fn stroke_propagator(
    p: &MachineParams,
    stroke: Stroke,
    cfg: &PropagatorConfig,
) -> Result<StrokePropagator, DynamicsError> {
    p.validate()?;
    let mut out = match cfg.integrator {
        Integrator::Taylor {
            step_radius,
            block_columns,
            check_columns,
        } => taylor_propagator(p, stroke, step_radius, block_columns, check_columns, cfg.execution)?,
        Integrator::Midpoint {
            initial_steps,
            max_doublings,
            tolerance,
        } => midpoint_propagator(p, stroke, initial_steps, max_doublings, tolerance, cfg.execution)?,
    };
    let residual = out.unitary.unitarity_residual();
    if residual > REUNITARIZE_THRESHOLD {
        log::warn!("re-unitarizing propagator, residual {residual:.3e}");
        out.unitary = polar_unitary(&out.unitary)?;
    }
    let residual = out.unitary.unitarity_residual();
    if residual > UNITARITY_TOL {
        return Err(DynamicsError::InvariantViolation(format!("propagator unitarity residual {residual:.3e}")));
    }
    Ok(out)
}

/// `Ũ = C U† C` with `C` complex conjugation in the standard product basis, i.e. `Uᵀ`.
pub fn reversed_propagator(u: &ComplexMatrix) -> ComplexMatrix {
    u.transpose()
}

/// Closest unitary `U (U†U)^{-1/2}`.
fn polar_unitary(u: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let gram = u.adjoint().matmul(u);
    let inv_sqrt = herm_eig(&gram.hermitian_part())?.apply_fn(|l| Complex64::new(l.max(f64::MIN_POSITIVE).powf(-0.5), 0.0));
    Ok(u.matmul(&inv_sqrt))
}

/// Field at stroke start and its slope.
fn field_line(p: &MachineParams, stroke: Stroke) -> (f64, f64) {
    match stroke {
        Stroke::Compression => (0.0, p.sweep_rate),
        Stroke::Expansion => (p.field_span(), -p.sweep_rate),
    }
}

/// Real sparse form of `H(t) = H₀ + (t − t₀) ξ' σ_z ⊗ I`, shifted by a constant.
struct SparseJoint {
    levels: usize,
    delta: f64,
    omega: f64,
    /// `g √(l+1)` couples battery levels `l` and `l+1`.
    offdiag: Vec<f64>,
    xi0: f64,
    slope: f64,
    shift: f64,
    radius: f64,
}

impl SparseJoint {
    fn new(p: &MachineParams, stroke: Stroke) -> Self {
        let m = p.levels;
        let (xi0, slope) = field_line(p, stroke);
        let offdiag: Vec<f64> = (0..m.saturating_sub(1)).map(|l| p.coupling * ((l + 1) as f64).sqrt()).collect();
        let shift = 0.5 * p.level_spacing * (m - 1) as f64;
        let xi_max = xi0.abs().max((xi0 + slope * p.work_time).abs());
        let row_off = (0..m)
            .map(|l| {
                let below = if l > 0 { offdiag[l - 1] } else { 0.0 };
                let above = if l + 1 < m { offdiag[l] } else { 0.0 };
                below + above
            })
            .fold(0.0, f64::max);
        let radius = xi_max + shift + p.delta + row_off;
        Self {
            levels: m,
            delta: p.delta,
            omega: p.level_spacing,
            offdiag,
            xi0,
            slope,
            shift,
            radius,
        }
    }

    fn dim(&self) -> usize {
        MACHINE_DIM * self.levels
    }

    /// Shifted diagonal of `H` at field `xi`.
    fn diagonal(&self, xi: f64, out: &mut [f64]) {
        let m = self.levels;
        for l in 0..m {
            let e = self.omega * l as f64 - self.shift;
            out[l] = e + xi;
            out[m + l] = e - xi;
        }
    }

    /// `y = (D a + O a + κ Z b) · scale`, applied to one real plane of a `k`-column block.
    #[allow(clippy::too_many_arguments)]
    fn apply(&self, diag: &[f64], kappa: f64, scale: f64, a: &[f64], b: &[f64], y: &mut [f64], k: usize) -> f64 {
        let m = self.levels;
        let mut max_abs = 0.0f64;
        for mach in 0..2 {
            let z = if mach == 0 { kappa } else { -kappa };
            let other = (1 - mach) * m;
            for l in 0..m {
                let r = mach * m + l;
                let d = diag[r];
                let row = &a[r * k..(r + 1) * k];
                let prev = &b[r * k..(r + 1) * k];
                let mirror = &a[(other + l) * k..(other + l + 1) * k];
                let out = &mut y[r * k..(r + 1) * k];
                for j in 0..k {
                    out[j] = d * row[j] + self.delta * mirror[j] + z * prev[j];
                }
                if l > 0 {
                    let c = self.offdiag[l - 1];
                    let nb = &a[(other + l - 1) * k..(other + l) * k];
                    for j in 0..k {
                        out[j] += c * nb[j];
                    }
                }
                if l + 1 < m {
                    let c = self.offdiag[l];
                    let nb = &a[(other + l + 1) * k..(other + l + 2) * k];
                    for j in 0..k {
                        out[j] += c * nb[j];
                    }
                }
                for v in out.iter_mut() {
                    *v *= scale;
                    max_abs = max_abs.max(v.abs());
                }
            }
        }
        max_abs
    }

    /// Evolves the basis columns `cols` over `steps` uniform steps of size `h`.
    /// Returns the real and imaginary planes, row-major with `cols.len()` columns.
    fn evolve(&self, cols: &[usize], steps: usize, h: f64) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
        const TERM_TOL: f64 = 1e-17;
        const MAX_TERMS: usize = 400;
        let n = self.dim();
        let k = cols.len();
        let mut psi_re = vec![0.0; n * k];
        let mut psi_im = vec![0.0; n * k];
        for (j, &c) in cols.iter().enumerate() {
            psi_re[c * k + j] = 1.0;
        }
        let mut diag = vec![0.0; n];
        let mut prev_re = vec![0.0; n * k];
        let mut prev_im = vec![0.0; n * k];
        let mut cur_re = vec![0.0; n * k];
        let mut cur_im = vec![0.0; n * k];
        let mut next_re = vec![0.0; n * k];
        let mut next_im = vec![0.0; n * k];
        let kappa = h * self.slope;
        for s in 0..steps {
            self.diagonal(self.xi0 + self.slope * h * s as f64, &mut diag);
            cur_re.copy_from_slice(&psi_re);
            cur_im.copy_from_slice(&psi_im);
            prev_re.fill(0.0);
            prev_im.fill(0.0);
            let mut last_max = f64::INFINITY;
            let mut order = 0;
            loop {
                let scale = h / (order + 1) as f64;
                // a_{n+1} = -i scale (H a_n + κ Z a_{n-1})
                let m_im = self.apply(&diag, kappa, -scale, &cur_re, &prev_re, &mut next_im, k);
                let m_re = self.apply(&diag, kappa, scale, &cur_im, &prev_im, &mut next_re, k);
                for (p, v) in psi_re.iter_mut().zip(&next_re) {
                    *p += v;
                }
                for (p, v) in psi_im.iter_mut().zip(&next_im) {
                    *p += v;
                }
                let this_max = m_re.max(m_im);
                order += 1;
                if this_max <= TERM_TOL && last_max <= TERM_TOL {
                    break;
                }
                if order >= MAX_TERMS || !this_max.is_finite() {
                    return Err(DynamicsError::NonConvergence {
                        steps,
                        residual: this_max,
                    });
                }
                last_max = this_max;
                std::mem::swap(&mut prev_re, &mut cur_re);
                std::mem::swap(&mut prev_im, &mut cur_im);
                std::mem::swap(&mut cur_re, &mut next_re);
                std::mem::swap(&mut cur_im, &mut next_im);
            }
        }
        // Undo the constant spectral shift: exp(-i shift T).
        let phase = Complex64::from_polar(1.0, -self.shift * h * steps as f64);
        for (re, im) in psi_re.iter_mut().zip(psi_im.iter_mut()) {
            let z = Complex64::new(*re, *im) * phase;
            *re = z.re;
            *im = z.im;
        }
        Ok((psi_re, psi_im))
    }
}

fn taylor_propagator(
    p: &MachineParams,
    stroke: Stroke,
    step_radius: f64,
    block_columns: usize,
    check_columns: usize,
    exec: Execution,
) -> Result<StrokePropagator, DynamicsError> {
    if !(step_radius > 0.0 && step_radius.is_finite()) || block_columns == 0 {
        return Err(ModelError::InvalidParams("taylor integrator needs step_radius > 0 and block_columns ≥ 1".into()).into());
    }
    let op = SparseJoint::new(p, stroke);
    let n = op.dim();
    let steps = ((p.work_time * op.radius / step_radius).ceil() as usize).max(1);
    let h = p.work_time / steps as f64;
    let blocks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(block_columns).map(|c| c.to_vec()).collect();
    log::debug!("taylor propagator: dim {n}, {steps} steps, {} blocks", blocks.len());

    let evolved = exec.try_map(blocks.len(), |b| op.evolve(&blocks[b], steps, h))?;
    let mut u = ComplexMatrix::zeros(n, n);
    for (cols, (re, im)) in blocks.iter().zip(&evolved) {
        let k = cols.len();
        for r in 0..n {
            for (j, &c) in cols.iter().enumerate() {
                u[(r, c)] = Complex64::new(re[r * k + j], im[r * k + j]);
            }
        }
    }

    let convergence_residual = if check_columns > 0 {
        let count = check_columns.min(n);
        let cols: Vec<usize> = (0..count).map(|i| i * n / count).collect();
        let (re, im) = op.evolve(&cols, 2 * steps, h / 2.0)?;
        let mut worst = 0.0f64;
        for r in 0..n {
            for (j, &c) in cols.iter().enumerate() {
                let fine = Complex64::new(re[r * count + j], im[r * count + j]);
                worst = worst.max((fine - u[(r, c)]).norm());
            }
        }
        worst
    } else {
        0.0
    };
    Ok(StrokePropagator {
        unitary: u,
        step_count: steps,
        convergence_residual,
    })
}

/// `∏ exp(−i H(t_k + dt/2) dt)` over `steps` steps, later steps on the left.
fn midpoint_product(p: &MachineParams, stroke: Stroke, steps: usize, exec: Execution) -> Result<ComplexMatrix, DynamicsError> {
    const CHUNK: usize = 32;
    let dt = p.work_time / steps as f64;
    let chunks = steps.div_ceil(CHUNK);
    let partial = exec.try_map(chunks, |c| -> Result<ComplexMatrix, DynamicsError> {
        let mut acc = ComplexMatrix::identity(p.joint_dim());
        for s in c * CHUNK..((c + 1) * CHUNK).min(steps) {
            let hm = machine_hamiltonian((s as f64 + 0.5) * dt, p, stroke)?;
            let step = expm_unitary(&joint_hamiltonian(&hm, p, p.coupling), dt)?;
            acc = step.matmul(&acc);
        }
        Ok(acc)
    })?;
    Ok(partial
        .into_iter()
        .fold(ComplexMatrix::identity(p.joint_dim()), |acc, chunk| chunk.matmul(&acc)))
}

fn midpoint_propagator(
    p: &MachineParams,
    stroke: Stroke,
    initial_steps: usize,
    max_doublings: u32,
    tolerance: f64,
    exec: Execution,
) -> Result<StrokePropagator, DynamicsError> {
    let mut steps = initial_steps.max(1);
    let mut coarse = midpoint_product(p, stroke, steps, exec)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_doublings {
        steps *= 2;
        let fine = midpoint_product(p, stroke, steps, exec)?;
        residual = fine.max_abs_diff(&coarse);
        coarse = fine;
        log::debug!("midpoint propagator: {steps} steps, residual {residual:.3e}");
        if residual < tolerance {
            return Ok(StrokePropagator {
                unitary: coarse,
                step_count: steps,
                convergence_residual: residual,
            });
        }
    }
    Err(DynamicsError::NonConvergence { steps, residual })
}

/// Free battery evolution over the heat stroke, `exp(−i H_B T₂)`.
///
/// Returns `None` when it is the identity: `T₂ = 0` or `ωT₂` a multiple of 2π.
pub fn battery_free_phases(p: &MachineParams) -> Option<Vec<Complex64>> {
    let turns = p.level_spacing * p.therm_time / (2.0 * PI);
    if (turns - turns.round()).abs() <= 1e-12 * turns.abs().max(1.0) {
        return None;
    }
    let frac = turns - turns.floor();
    Some(
        (0..p.levels)
            .map(|l| Complex64::from_polar(1.0, -2.0 * PI * (l as f64 * frac).fract()))
            .collect(),
    )
}

/// `σ ↦ D σ D†` for diagonal `D`.
fn rotate_diagonal(sigma: &ComplexMatrix, phases: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(sigma.rows(), sigma.cols(), |i, j| phases[i] * sigma[(i, j)] * phases[j].conj())
}

/// Everything a cycle needs that does not depend on the cycle number.
#[derive(Clone, Debug)]
pub struct CyclePropagators {
    pub u_comp: ComplexMatrix,
    pub u_exp: ComplexMatrix,
    pub battery_free: ComplexMatrix,
    pub tau_hot: DensityMatrix,
    pub tau_cold: DensityMatrix,
    pub step_count: usize,
    pub convergence_residual: f64,
    battery_phases: Option<Vec<Complex64>>,
    levels: usize,
    level_spacing: f64,
}

impl CyclePropagators {
    pub fn build(p: &MachineParams, cfg: &PropagatorConfig) -> Result<Self, DynamicsError> {
        let comp = stroke_propagator(p, Stroke::Compression, cfg)?;
        Self::from_stroke(p, comp)
    }

    /// Reuses an already computed compression propagator.
    pub fn from_stroke(p: &MachineParams, comp: StrokePropagator) -> Result<Self, DynamicsError> {
        p.validate()?;
        let dim = p.joint_dim();
        if comp.unitary.rows() != dim || comp.unitary.cols() != dim {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{dim}x{dim}"),
                found: format!("{}x{}", comp.unitary.rows(), comp.unitary.cols()),
            }
            .into());
        }
        let battery_phases = battery_free_phases(p);
        let battery_free = match &battery_phases {
            Some(ph) => ComplexMatrix::from_diagonal(ph),
            None => ComplexMatrix::identity(p.levels),
        };
        Ok(Self {
            u_exp: reversed_propagator(&comp.unitary),
            u_comp: comp.unitary,
            battery_free,
            tau_hot: gibbs_state(&machine_hamiltonian_hot(p), p.beta_hot)?,
            tau_cold: gibbs_state(&machine_hamiltonian_cold(p), p.beta_cold)?,
            step_count: comp.step_count,
            convergence_residual: comp.convergence_residual,
            battery_phases,
            levels: p.levels,
            level_spacing: p.level_spacing,
        })
    }

    /// Same work strokes with a different heat-stroke duration or bath temperatures.
    pub fn with_heat_strokes(&self, p: &MachineParams) -> Result<Self, DynamicsError> {
        Self::from_stroke(
            p,
            StrokePropagator {
                unitary: self.u_comp.clone(),
                step_count: self.step_count,
                convergence_residual: self.convergence_residual,
            },
        )
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Whether `U_B` is exactly the identity.
    pub fn battery_free_is_identity(&self) -> bool {
        self.battery_phases.is_none()
    }

    fn free_battery(&self, sigma: ComplexMatrix) -> ComplexMatrix {
        match &self.battery_phases {
            Some(ph) => rotate_diagonal(&sigma, ph),
            None => sigma,
        }
    }
}

/// `Φ(ρ) = τ ⊗ U_B Tr_M[ρ] U_B†`.
pub fn thermal_map(rho: &DensityMatrix, tau: &DensityMatrix, battery_free: &ComplexMatrix) -> Result<DensityMatrix, DynamicsError> {
    let m = battery_free.rows();
    if tau.dim() != MACHINE_DIM || rho.dim() != MACHINE_DIM * m {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("2x2 bath state and {}-dim joint state", MACHINE_DIM * m),
            found: format!("{} and {}", tau.dim(), rho.dim()),
        }
        .into());
    }
    let sigma = trace_out_machine(rho.matrix(), m)?.conjugate_by(battery_free);
    Ok(DensityMatrix::from_hermitian_part(&kron(tau.matrix(), &sigma))?)
}

/// One full cycle `G(ρ) = Φ^c(Ũ Φ^h(U ρ U†) Ũ†)` on the joint state.
pub fn cycle_map(rho: &DensityMatrix, cp: &CyclePropagators) -> Result<DensityMatrix, DynamicsError> {
    let after_comp = DensityMatrix::from_hermitian_part(&rho.matrix().conjugate_by(&cp.u_comp))?;
    let hot = thermal_map(&after_comp, &cp.tau_hot, &cp.battery_free)?;
    let after_exp = DensityMatrix::from_hermitian_part(&hot.matrix().conjugate_by(&cp.u_exp))?;
    let out = thermal_map(&after_exp, &cp.tau_cold, &cp.battery_free)?;
    let min = out.min_eigenvalue()?;
    if min < PSD_ABORT {
        return Err(DynamicsError::InvariantViolation(format!("cycle output eigenvalue {min:.3e}")));
    }
    Ok(out)
}

/// Dephasing `Σ_l (I₂⊗Π_l) ρ (I₂⊗Π_l)` in the battery energy basis.
pub fn measure_battery(rho: &DensityMatrix, battery_dim: usize) -> Result<DensityMatrix, DynamicsError> {
    if rho.dim() != MACHINE_DIM * battery_dim {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("{}", MACHINE_DIM * battery_dim),
            found: format!("{}", rho.dim()),
        }
        .into());
    }
    let m = rho.matrix();
    let out = ComplexMatrix::from_fn(m.rows(), m.cols(), |i, j| {
        if i % battery_dim == j % battery_dim {
            m[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(DensityMatrix::new(out)?)
}

/// Battery-only dephasing: keeps the diagonal.
pub fn dephase(sigma: &DensityMatrix) -> DensityMatrix {
    DensityMatrix::diagonal(&sigma.populations()).expect("diagonal of a density matrix is a density matrix")
}

/// Joint state at a cycle boundary, stored in product form `machine ⊗ battery`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    pub machine: DensityMatrix,
    pub battery: DensityMatrix,
    pub cycle_index: usize,
    pub measured_mode: bool,
}

impl ProtocolState {
    /// `τ_c ⊗ |0⟩⟨0|` before the first cycle.
    pub fn initial(cp: &CyclePropagators, measured_mode: bool) -> Self {
        Self {
            machine: cp.tau_cold.clone(),
            battery: DensityMatrix::basis_state(cp.levels, 0),
            cycle_index: 0,
            measured_mode,
        }
    }

    pub fn joint(&self) -> DensityMatrix {
        DensityMatrix::new(kron(self.machine.matrix(), self.battery.matrix())).expect("product of density matrices")
    }
}

/// Intermediate quantities of one cycle, enough to evaluate all energetics.
#[derive(Clone, Debug)]
pub struct CycleTrace {
    /// Machine state entering the compression stroke.
    pub machine_start: DensityMatrix,
    pub battery_energy_start: f64,
    /// Reduced machine state at the end of compression.
    pub machine_after_compression: ComplexMatrix,
    pub battery_energy_after_compression: f64,
    /// Reduced machine state at the end of expansion.
    pub machine_after_expansion: ComplexMatrix,
    pub battery_energy_after_expansion: f64,
    /// Ascending eigenvalues of the new battery state.
    pub battery_spectrum: Vec<f64>,
    /// Most negative eigenvalue clipped by the positivity repair, if any.
    pub repaired_eigenvalue: Option<f64>,
}

/// Reduced states after a work stroke acting on `machine ⊗ battery`.
struct StrokeOutcome {
    machine: ComplexMatrix,
    battery: ComplexMatrix,
}

/// `M×M` block `(c, a)` of a joint operator.
fn block(u: &ComplexMatrix, c: usize, a: usize, m: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(m, m, |i, j| u[(c * m + i, a * m + j)])
}

/// Reduced states of `U (μ ⊗ σ) U†` via the Kraus operators
/// `K_{ca} = Σ_{a'} ⟨a'|a⟩ U_{(c,a')}` over the eigenbasis `{p_a, |a⟩}` of `μ`.
fn apply_stroke(u: &ComplexMatrix, machine: &DensityMatrix, sigma: &ComplexMatrix, m: usize) -> Result<StrokeOutcome, DynamicsError> {
    let eig = herm_eig(machine.matrix())?;
    let blocks = [[block(u, 0, 0, m), block(u, 0, 1, m)], [block(u, 1, 0, m), block(u, 1, 1, m)]];
    let mut battery = ComplexMatrix::zeros(m, m);
    let mut mu = ComplexMatrix::zeros(MACHINE_DIM, MACHINE_DIM);
    for a in 0..MACHINE_DIM {
        let weight = eig.values[a];
        if weight <= 0.0 {
            continue;
        }
        let v = eig.vector(a);
        let kraus: Vec<ComplexMatrix> = (0..MACHINE_DIM)
            .map(|c| &blocks[c][0].scale(v[0]) + &blocks[c][1].scale(v[1]))
            .collect();
        let left: Vec<ComplexMatrix> = kraus.iter().map(|k| k.matmul(sigma)).collect();
        for c in 0..MACHINE_DIM {
            battery = &battery + &left[c].matmul_adjoint(&kraus[c]).scale_real(weight);
            for c2 in 0..MACHINE_DIM {
                mu[(c, c2)] += left[c].trace_product(&kraus[c2].adjoint()) * weight;
            }
        }
    }
    Ok(StrokeOutcome { machine: mu, battery })
}

fn battery_energy_of(sigma: &ComplexMatrix, levels: &[f64]) -> f64 {
    levels.iter().enumerate().map(|(l, e)| e * sigma[(l, l)].re).sum()
}

/// Applies one cycle (and the measurement in measured mode) to a product state.
pub fn advance(state: &ProtocolState, cp: &CyclePropagators) -> Result<(ProtocolState, CycleTrace), DynamicsError> {
    let m = cp.levels;
    if state.battery.dim() != m || state.machine.dim() != MACHINE_DIM {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("2x2 machine and {m}x{m} battery"),
            found: format!("{} and {}", state.machine.dim(), state.battery.dim()),
        }
        .into());
    }
    let levels: Vec<f64> = (0..m).map(|l| l as f64 * cp.level_spacing).collect();
    let energy = |s: &ComplexMatrix| battery_energy_of(s, &levels);

    let comp = apply_stroke(&cp.u_comp, &state.machine, state.battery.matrix(), m)?;
    let sigma_hot = cp.free_battery(comp.battery.hermitian_part());
    let exp = apply_stroke(&cp.u_exp, &cp.tau_hot, &sigma_hot, m)?;
    let sigma_end = cp.free_battery(exp.battery.hermitian_part());

    let tr = sigma_end.trace().re;
    if (tr - 1.0).abs() > 1e-8 {
        return Err(DynamicsError::InvariantViolation(format!("battery trace drifted to {tr}")));
    }
    let mut battery = DensityMatrix::new(sigma_end.scale_real(1.0 / tr))?;
    if state.measured_mode {
        battery = dephase(&battery);
    }
    let (battery, spectrum, repaired) = check_positivity(battery, state.measured_mode)?;

    let trace = CycleTrace {
        machine_start: state.machine.clone(),
        battery_energy_start: energy(state.battery.matrix()),
        machine_after_compression: comp.machine,
        battery_energy_after_compression: energy(&comp.battery),
        machine_after_expansion: exp.machine,
        battery_energy_after_expansion: energy(battery.matrix()),
        battery_spectrum: spectrum,
        repaired_eigenvalue: repaired,
    };
    let next = ProtocolState {
        machine: cp.tau_cold.clone(),
        battery,
        cycle_index: state.cycle_index + 1,
        measured_mode: state.measured_mode,
    };
    Ok((next, trace))
}

/// Eigenvalue check with clipping of roundoff-size negatives.
fn check_positivity(battery: DensityMatrix, diagonal: bool) -> Result<(DensityMatrix, Vec<f64>, Option<f64>), DynamicsError> {
    let mut spectrum = if diagonal {
        let mut d = battery.populations();
        d.sort_by(f64::total_cmp);
        d
    } else {
        herm_eigenvalues(battery.matrix())?
    };
    let min = spectrum.first().copied().unwrap_or(0.0);
    if min >= -crate::linalg::PSD_TOL {
        return Ok((battery, spectrum, None));
    }
    if min < PSD_ABORT {
        return Err(DynamicsError::InvariantViolation(format!("battery eigenvalue {min:.3e}")));
    }
    log::warn!("clipping battery eigenvalue {min:.3e}");
    let (fixed, _) = battery.repair_psd(PSD_ABORT)?;
    spectrum = herm_eigenvalues(fixed.matrix())?;
    Ok((fixed, spectrum, Some(min)))
}

/// Reduced machine states and battery energies of a cycle computed on the joint state.
///
/// Slow reference for [`advance`]; also accepts correlated input states.
pub fn trace_joint_cycle(rho: &DensityMatrix, cp: &CyclePropagators, p: &MachineParams) -> Result<(DensityMatrix, JointCycleTrace), DynamicsError> {
    let m = p.levels;
    let h_b: Vec<f64> = battery_levels(p);
    let after_comp = DensityMatrix::from_hermitian_part(&rho.matrix().conjugate_by(&cp.u_comp))?;
    let hot = thermal_map(&after_comp, &cp.tau_hot, &cp.battery_free)?;
    let after_exp = DensityMatrix::from_hermitian_part(&hot.matrix().conjugate_by(&cp.u_exp))?;
    let out = thermal_map(&after_exp, &cp.tau_cold, &cp.battery_free)?;
    let e = |r: &DensityMatrix| -> Result<f64, DynamicsError> { Ok(battery_energy_of(&trace_out_machine(r.matrix(), m)?, &h_b)) };
    let trace = JointCycleTrace {
        machine_start: trace_out_battery(rho.matrix(), m)?,
        battery_energy_start: e(rho)?,
        machine_after_compression: trace_out_battery(after_comp.matrix(), m)?,
        battery_energy_after_compression: e(&after_comp)?,
        machine_after_expansion: trace_out_battery(after_exp.matrix(), m)?,
        battery_energy_after_expansion: e(&after_exp)?,
        battery_energy_end: e(&out)?,
    };
    Ok((out, trace))
}

/// Boundary data of a joint-state cycle.
#[derive(Clone, Debug)]
pub struct JointCycleTrace {
    pub machine_start: ComplexMatrix,
    pub battery_energy_start: f64,
    pub machine_after_compression: ComplexMatrix,
    pub battery_energy_after_compression: f64,
    pub machine_after_expansion: ComplexMatrix,
    pub battery_energy_after_expansion: f64,
    pub battery_energy_end: f64,
}
