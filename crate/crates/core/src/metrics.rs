//! Per-cycle observables: heats, work, battery energy statistics, ergotropy and
//! the critical cycle numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{advance, CyclePropagators, CycleTrace, DynamicsError, JointCycleTrace, ProtocolState};
use crate::linalg::{herm_eigenvalues, ComplexMatrix, DensityMatrix, LinalgError};
use crate::model::{battery_levels, machine_hamiltonian_cold, machine_hamiltonian_hot, MachineParams};

/// Battery energies below this (in units of ω) leave `C_N` undefined.
pub const UNCHARGED_ENERGY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least {needed} records, got {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("{0} is undefined")]
    Undefined(&'static str),
}

/// Work and heats of one cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEnergetics {
    pub q_hot: f64,
    pub q_cold: f64,
    pub work: f64,
    /// `E_N − E_{N−1}`.
    pub delta_e: f64,
}

impl CycleEnergetics {
    /// `|Q^h + Q^c + W − ΔE|`.
    pub fn balance_residual(&self) -> f64 {
        (self.q_hot + self.q_cold + self.work - self.delta_e).abs()
    }
}

/// Boundary energies shared by the Kraus and joint cycle traces.
struct Boundary<'a> {
    machine_start: &'a ComplexMatrix,
    e0: f64,
    mu_comp: &'a ComplexMatrix,
    e1: f64,
    mu_exp: &'a ComplexMatrix,
    e3: f64,
}

fn energetics_from(b: Boundary<'_>, cp: &CyclePropagators, p: &MachineParams) -> CycleEnergetics {
    let hot = machine_hamiltonian_hot(p);
    let cold = machine_hamiltonian_cold(p);
    let hot_tau = cp.tau_hot.expectation(&hot);
    let cold_tau = cp.tau_cold.expectation(&cold);
    let hot_comp = b.mu_comp.trace_product(&hot).re;
    let cold_exp = b.mu_exp.trace_product(&cold).re;
    let cold_start = b.machine_start.trace_product(&cold).re;
    // The free battery evolution during the hot stroke conserves E, so the
    // battery energy entering expansion equals e1.
    let work = (hot_comp + b.e1 - cold_start - b.e0) + (cold_exp + b.e3 - hot_tau - b.e1);
    CycleEnergetics {
        q_hot: hot_tau - hot_comp,
        q_cold: cold_tau - cold_exp,
        work,
        delta_e: b.e3 - b.e0,
    }
}

/// Energetics of a cycle advanced in product form.
pub fn cycle_energetics(trace: &CycleTrace, cp: &CyclePropagators, p: &MachineParams) -> CycleEnergetics {
    energetics_from(
        Boundary {
            machine_start: trace.machine_start.matrix(),
            e0: trace.battery_energy_start,
            mu_comp: &trace.machine_after_compression,
            e1: trace.battery_energy_after_compression,
            mu_exp: &trace.machine_after_expansion,
            e3: trace.battery_energy_after_expansion,
        },
        cp,
        p,
    )
}

/// Energetics of a cycle evaluated on the joint state.
pub fn joint_cycle_energetics(trace: &JointCycleTrace, cp: &CyclePropagators, p: &MachineParams) -> CycleEnergetics {
    energetics_from(
        Boundary {
            machine_start: &trace.machine_start,
            e0: trace.battery_energy_start,
            mu_comp: &trace.machine_after_compression,
            e1: trace.battery_energy_after_compression,
            mu_exp: &trace.machine_after_expansion,
            e3: trace.battery_energy_end,
        },
        cp,
        p,
    )
}

/// `(⟨Q^h⟩, ⟨Q^c⟩)` of the cycle starting from `state_pre`.
pub fn heats(state_pre: &ProtocolState, cp: &CyclePropagators, p: &MachineParams) -> Result<(f64, f64), MetricsError> {
    let (_, trace) = advance(state_pre, cp)?;
    let e = cycle_energetics(&trace, cp, p);
    Ok((e.q_hot, e.q_cold))
}

/// `⟨W⟩` of the cycle starting from `state_pre`, boundary Hamiltonians at zero coupling.
pub fn total_work(state_pre: &ProtocolState, cp: &CyclePropagators, p: &MachineParams) -> Result<f64, MetricsError> {
    let (_, trace) = advance(state_pre, cp)?;
    Ok(cycle_energetics(&trace, cp, p).work)
}

/// `Tr[H_B σ]` for a battery state with level spacing `omega`.
pub fn battery_energy(sigma: &DensityMatrix, omega: f64) -> f64 {
    sigma
        .populations()
        .iter()
        .enumerate()
        .map(|(l, p)| l as f64 * omega * p)
        .sum()
}

/// `⟨H_B²⟩ − ⟨H_B⟩²`.
pub fn energy_variance(sigma: &DensityMatrix, omega: f64) -> f64 {
    variance_of(&sigma.populations(), omega)
}

fn variance_of(populations: &[f64], omega: f64) -> f64 {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (l, p) in populations.iter().enumerate() {
        let e = l as f64 * omega;
        m1 += e * p;
        m2 += e * e * p;
    }
    (m2 - m1 * m1).max(0.0)
}

/// `σ_E / E`, `None` for an uncharged battery.
pub fn coeff_variation(sigma: &DensityMatrix, omega: f64) -> Option<f64> {
    coeff_of(battery_energy(sigma, omega), energy_variance(sigma, omega), omega)
}

fn coeff_of(energy: f64, variance: f64, omega: f64) -> Option<f64> {
    (energy >= UNCHARGED_ENERGY * omega).then(|| variance.sqrt() / energy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgotropyBreakdown {
    pub total: f64,
    pub incoherent: f64,
    pub coherent: f64,
    /// Eigenvalues in descending order, i.e. the passive state's populations.
    pub passive_populations: Vec<f64>,
}

/// Ergotropy of `sigma` for ascending battery `levels`.
pub fn ergotropy(sigma: &DensityMatrix, levels: &[f64]) -> Result<ErgotropyBreakdown, MetricsError> {
    let spectrum = herm_eigenvalues(sigma.matrix())?;
    Ok(ergotropy_with_spectrum(sigma, &spectrum, levels))
}

/// As [`ergotropy`] with precomputed eigenvalues (any order).
pub fn ergotropy_with_spectrum(sigma: &DensityMatrix, spectrum: &[f64], levels: &[f64]) -> ErgotropyBreakdown {
    assert_eq!(levels.len(), sigma.dim(), "one energy per battery level");
    assert_eq!(spectrum.len(), sigma.dim(), "one eigenvalue per battery level");
    let populations = sigma.populations();
    let energy: f64 = populations.iter().zip(levels).map(|(p, e)| p * e).sum();
    let passive_energy = |values: &[f64]| -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.iter().zip(levels).map(|(p, e)| p * e).sum()
    };
    let total = (energy - passive_energy(spectrum)).max(0.0);
    let incoherent = (energy - passive_energy(&populations)).max(0.0);
    let mut passive = spectrum.to_vec();
    passive.sort_by(|a, b| b.total_cmp(a));
    ErgotropyBreakdown {
        total,
        incoherent,
        coherent: total - incoherent,
        passive_populations: passive,
    }
}

/// One row of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub q_hot: f64,
    pub q_cold: f64,
    pub work: f64,
    pub e_battery: f64,
    pub variance: f64,
    /// `None` when the battery is uncharged.
    pub coeff_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub populations: Vec<f64>,
    pub ergotropy: f64,
    pub erg_incoherent: f64,
    pub erg_coherent: f64,
    pub speed_e: f64,
    pub speed_erg: f64,
}

/// Builds a [`CycleRecord`] from a cycle's trace and the state it produced.
///
/// `previous` holds `(E_{N−1}, W_erg(ρ_{N−1}))`.
pub fn record_cycle(
    trace: &CycleTrace,
    state: &ProtocolState,
    previous: (f64, f64),
    cp: &CyclePropagators,
    p: &MachineParams,
    keep_populations: bool,
) -> CycleRecord {
    let energetics = cycle_energetics(trace, cp, p);
    let populations = state.battery.populations();
    let omega = p.level_spacing;
    let e_battery = trace.battery_energy_after_expansion;
    let variance = variance_of(&populations, omega);
    let erg = ergotropy_with_spectrum(&state.battery, &trace.battery_spectrum, &battery_levels(p));
    CycleRecord {
        cycle: state.cycle_index,
        q_hot: energetics.q_hot,
        q_cold: energetics.q_cold,
        work: energetics.work,
        e_battery,
        variance,
        coeff_var: coeff_of(e_battery, variance, omega),
        populations: if keep_populations { populations } else { Vec::new() },
        ergotropy: erg.total,
        erg_incoherent: erg.incoherent,
        erg_coherent: erg.coherent,
        speed_e: e_battery - previous.0,
        speed_erg: erg.total - previous.1,
    }
}

/// First differences `(Δ_N E, Δ_N W_erg)` for `N = 2..`.
pub fn charging_speed(records: &[CycleRecord]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if records.len() < 2 {
        return Err(MetricsError::TooFewRecords {
            needed: 2,
            found: records.len(),
        });
    }
    Ok(records
        .windows(2)
        .map(|w| (w[1].e_battery - w[0].e_battery, w[1].ergotropy - w[0].ergotropy))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies {
    pub eta_engine: f64,
    pub eta_charge: f64,
    pub heat_ratio: f64,
}

/// `η^e = −W/Q^h`, `η^c = ΔE/Q^h`, `r = Q^c/Q^h`.
pub fn efficiencies(record: &CycleRecord) -> Result<Efficiencies, MetricsError> {
    if record.q_hot == 0.0 {
        return Err(MetricsError::Undefined("efficiency at zero hot heat"));
    }
    Ok(Efficiencies {
        eta_engine: -record.work / record.q_hot,
        eta_charge: record.speed_e / record.q_hot,
        heat_ratio: record.q_cold / record.q_hot,
    })
}

/// Which task defines failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineRole {
    Engine,
    Refrigerator,
}

impl MachineRole {
    /// Role implied by the sign pattern of a cycle, if it is an engine or refrigerator.
    pub fn from_signs(q_hot: f64, q_cold: f64, work: f64) -> Option<Self> {
        if work < 0.0 && q_hot > 0.0 && q_cold < 0.0 {
            Some(MachineRole::Engine)
        } else if work > 0.0 && q_hot < 0.0 && q_cold > 0.0 {
            Some(MachineRole::Refrigerator)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalCycles {
    pub n_star: Option<usize>,
    pub n_hash: Option<usize>,
}

/// Engine: `N*` is the first cycle with `W ≥ 0`, `N#` the first with `Q^h ≤ 0`.
/// Refrigerator: `N*` is the first cycle with `Q^c ≤ 0`.
pub fn critical_cycles(records: &[CycleRecord], role: MachineRole) -> CriticalCycles {
    let first = |pred: &dyn Fn(&CycleRecord) -> bool| records.iter().find(|r| pred(r)).map(|r| r.cycle);
    match role {
        MachineRole::Engine => CriticalCycles {
            n_star: first(&|r| r.work >= 0.0),
            n_hash: first(&|r| r.q_hot <= 0.0),
        },
        MachineRole::Refrigerator => CriticalCycles {
            n_star: first(&|r| r.q_cold <= 0.0),
            n_hash: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn levels(m: usize) -> Vec<f64> {
        (0..m).map(|l| l as f64).collect()
    }

    #[test]
    fn energy_cases() {
        assert_eq!(battery_energy(&DensityMatrix::basis_state(5, 0), 1.0), 0.0);
        assert_eq!(battery_energy(&DensityMatrix::basis_state(5, 4), 1.0), 4.0);
        assert!((battery_energy(&DensityMatrix::maximally_mixed(3), 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(battery_energy(&DensityMatrix::basis_state(5, 4), 0.5), 2.0);
    }

    #[test]
    fn variance_cases() {
        assert_eq!(energy_variance(&DensityMatrix::basis_state(4, 2), 1.0), 0.0);
        let mix = DensityMatrix::diagonal(&[0.5, 0.0, 0.5, 0.0]).unwrap();
        assert!((energy_variance(&mix, 1.0) - 1.0).abs() < 1e-15);
        assert!((coeff_variation(&mix, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(coeff_variation(&DensityMatrix::basis_state(4, 0), 1.0), None);
    }

    #[test]
    fn ergotropy_cases() {
        let g = ergotropy(&DensityMatrix::basis_state(3, 0), &levels(3)).unwrap();
        assert_eq!((g.total, g.incoherent, g.coherent), (0.0, 0.0, 0.0));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrix::pure(&[Complex64::new(s, 0.0), Complex64::new(s, 0.0)]).unwrap();
        let e = ergotropy(&plus, &levels(2)).unwrap();
        assert!((e.total - 0.5).abs() < 1e-14);
        assert!(e.incoherent.abs() < 1e-14);
        assert!((e.coherent - 0.5).abs() < 1e-14);

        for beta in [0.1, 1.0, 5.0] {
            let w: Vec<f64> = (0..6).map(|l| (-beta * l as f64).exp()).collect();
            let z: f64 = w.iter().sum();
            let thermal = DensityMatrix::diagonal(&w.iter().map(|x| x / z).collect::<Vec<_>>()).unwrap();
            assert!(ergotropy(&thermal, &levels(6)).unwrap().total.abs() < 1e-14);
        }

        let top = ergotropy(&DensityMatrix::basis_state(4, 3), &levels(4)).unwrap();
        assert!((top.total - 3.0).abs() < 1e-14);
        assert_eq!(top.passive_populations[0], 1.0);
    }

    /// Largest energy drop over all assignments of eigenvectors to levels.
    fn brute_force_ergotropy(sigma: &DensityMatrix, levels: &[f64]) -> f64 {
        let n = levels.len();
        let spectrum = herm_eigenvalues(sigma.matrix()).unwrap();
        let energy: f64 = sigma.populations().iter().zip(levels).map(|(p, e)| p * e).sum();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::NEG_INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let e: f64 = p.iter().enumerate().map(|(j, &i)| spectrum[j] * levels[i]).sum();
            best = best.max(energy - e);
        });
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn ergotropy_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 2..=5 {
            for _ in 0..20 {
                let sigma = crate::linalg::tests::random_state(&mut rng, dim);
                let lv: Vec<f64> = (0..dim).map(|l| l as f64 * rng.gen_range(0.5..2.0)).collect();
                let mut lv_sorted = lv.clone();
                lv_sorted.sort_by(f64::total_cmp);
                let e = ergotropy(&sigma, &lv_sorted).unwrap();
                assert!((e.total - brute_force_ergotropy(&sigma, &lv_sorted)).abs() < 1e-10);
                assert!((e.total - e.incoherent - e.coherent).abs() < 1e-10);
                assert!(e.incoherent >= 0.0 && e.coherent >= -1e-10);
            }
        }
    }

    fn record(cycle: usize, work: f64, q_hot: f64, q_cold: f64, e: f64) -> CycleRecord {
        CycleRecord {
            cycle,
            q_hot,
            q_cold,
            work,
            e_battery: e,
            variance: 0.0,
            coeff_var: None,
            populations: Vec::new(),
            ergotropy: 0.0,
            erg_incoherent: 0.0,
            erg_coherent: 0.0,
            speed_e: 0.0,
            speed_erg: 0.0,
        }
    }

    #[test]
    fn critical_cycle_detection() {
        let rows = vec![
            record(1, -3.0, 5.0, -1.0, 1.0),
            record(2, -1.0, 2.0, -0.5, 2.0),
            record(3, 0.0, 1.0, -1.0, 2.5),
            record(4, 1.0, -0.1, -0.9, 2.6),
        ];
        let c = critical_cycles(&rows, MachineRole::Engine);
        assert_eq!(c, CriticalCycles { n_star: Some(3), n_hash: Some(4) });
        let fridge = vec![record(1, 2.0, -3.0, 1.0, 0.0), record(2, 2.0, -2.1, 0.1, 0.0), record(3, 2.0, -2.0, 0.0, 0.0)];
        assert_eq!(critical_cycles(&fridge, MachineRole::Refrigerator).n_star, Some(3));
        assert_eq!(critical_cycles(&rows[..2], MachineRole::Engine), CriticalCycles::default());
        assert_eq!(MachineRole::from_signs(5.0, -1.0, -3.0), Some(MachineRole::Engine));
        assert_eq!(MachineRole::from_signs(-3.0, 1.0, 2.0), Some(MachineRole::Refrigerator));
        assert_eq!(MachineRole::from_signs(1.0, -3.0, 2.0), None);
    }

    #[test]
    fn speeds_and_efficiencies() {
        let rows = vec![record(1, -3.0, 5.0, -1.0, 1.0), record(2, -3.0, 5.0, -1.0, 1.0)];
        assert_eq!(charging_speed(&rows).unwrap(), vec![(0.0, 0.0)]);
        assert!(charging_speed(&rows[..1]).is_err());
        let mut r = record(1, -3.0, 5.0, -1.0, 1.0);
        r.speed_e = 1.0;
        let eff = efficiencies(&r).unwrap();
        assert!((eff.eta_engine + eff.eta_charge - 1.0 - eff.heat_ratio).abs() < 1e-15);
        assert!(eff.heat_ratio > -1.0 && eff.heat_ratio < 0.0);
        r.q_hot = 0.0;
        assert!(efficiencies(&r).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn ergotropy_bounds(seed in any::<u64>(), dim in 2usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sigma = crate::linalg::tests::random_state(&mut rng, dim);
                let e = ergotropy(&sigma, &levels(dim)).unwrap();
                let energy = battery_energy(&sigma, 1.0);
                prop_assert!(e.total >= 0.0 && e.total <= energy + 1e-12);
                prop_assert!((e.total - e.incoherent - e.coherent).abs() < 1e-10);
                prop_assert!(e.coherent >= -1e-10);
            }

            #[test]
            fn diagonal_phase_rotation_keeps_ergotropy(seed in any::<u64>(), dim in 2usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
                let z: f64 = raw.iter().sum();
                let sigma = DensityMatrix::diagonal(&raw.iter().map(|x| x / z).collect::<Vec<_>>()).unwrap();
                let phases: Vec<Complex64> = (0..dim).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..6.3))).collect();
                let rotated = DensityMatrix::new(sigma.matrix().conjugate_by(&ComplexMatrix::from_diagonal(&phases))).unwrap();
                let a = ergotropy(&sigma, &levels(dim)).unwrap();
                let b = ergotropy(&rotated, &levels(dim)).unwrap();
                prop_assert!((a.total - b.total).abs() < 1e-12);
                prop_assert!(b.coherent.abs() < 1e-12);
            }
        }
    }
}
