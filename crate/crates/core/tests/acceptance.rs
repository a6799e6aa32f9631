//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Full-scale propagators (2M = 600) are cached under the cargo target
//! directory, so only the first run pays for building them.

use std::path::PathBuf;
use std::time::Instant;

use otto_battery::config::{Monitoring, RunSpec};
use otto_battery::dynamics::PropagatorConfig;
use otto_battery::metrics::MachineRole;
use otto_battery::model::MachineParams;
use otto_battery::runner::{run_trajectory, PropagatorCache, TrajectoryOutput};
use otto_battery::switching::SwitchingParams;
use otto_battery::validation::{
    analytic_oracle, commensurability, critical_cycles_match, desk_scale_charging, efficiency_identity,
    energy_balance, ergotropy_oracle, heat_plateau, landau_zener_preset, measurement_neutrality,
    phase_portrait_check, switching_null, CheckOutcome,
};

const ENGINE_CYCLES: usize = 400;
const FRIDGE_CYCLES: usize = 700;

fn spec(params: MachineParams, monitoring: Monitoring, cycles: usize, role: MachineRole) -> RunSpec {
    RunSpec {
        point: Vec::new(),
        params,
        monitoring,
        cycles,
        keep_populations: false,
        role: Some(role),
    }
}

fn progress(start: &Instant, what: &str) {
    eprintln!("  [{:7.1}s] {what}", start.elapsed().as_secs_f64());
}

fn main() {
    let start = Instant::now();
    let cache = PropagatorCache::new(Some(PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("propagators")));
    let cfg = PropagatorConfig::default();
    let mut trajectories: Vec<TrajectoryOutput> = Vec::new();

    progress(&start, "uncoupled oracle runs");
    let (oracle, runs) = analytic_oracle(24, 7, &cfg).expect("oracle runs");
    trajectories.extend(runs);

    progress(&start, "reduced-scale charging (M = 30)");
    let (desk, runs) = desk_scale_charging(30, 3000, &cache, &cfg).expect("desk-scale runs");
    trajectories.extend(runs);

    progress(&start, "engine preset, unmeasured, T2 in {0, 2pi, pi} (builds U on first run)");
    let (comm, runs) = commensurability(&MachineParams::engine_preset(), ENGINE_CYCLES, &cache, &cfg).expect("engine runs");
    let engine_unmeasured = runs[0].clone();
    trajectories.extend(runs);

    progress(&start, "engine preset, measured");
    let engine_measured = run_trajectory(
        &spec(MachineParams::engine_preset(), Monitoring::PerCycle, ENGINE_CYCLES, MachineRole::Engine),
        &cache,
        &cfg,
    )
    .expect("engine measured run");

    progress(&start, "refrigerator preset, both schemes (builds U on first run)");
    let fridge: Vec<TrajectoryOutput> = [Monitoring::Unmeasured, Monitoring::PerCycle]
        .into_iter()
        .map(|m| {
            run_trajectory(
                &spec(MachineParams::refrigerator_preset(), m, FRIDGE_CYCLES, MachineRole::Refrigerator),
                &cache,
                &cfg,
            )
            .expect("refrigerator run")
        })
        .collect();
    progress(&start, "trajectories done");

    let critical = critical_cycles_match(
        &[
            ("engine unmeasured", &engine_unmeasured, 338),
            ("engine measured", &engine_measured, 152),
            ("refrigerator unmeasured", &fridge[0], 664),
            ("refrigerator measured", &fridge[1], 265),
        ],
        5,
    );
    let plateau = heat_plateau(&engine_unmeasured, 7.0, 0.15);
    trajectories.push(engine_measured);
    trajectories.extend(fridge);

    let all: Vec<&TrajectoryOutput> = trajectories.iter().collect();
    let measured: Vec<&TrajectoryOutput> = trajectories.iter().filter(|t| t.monitoring.is_measured()).collect();
    let outcomes: Vec<CheckOutcome> = vec![
        oracle,
        landau_zener_preset(),
        energy_balance(&all),
        efficiency_identity(&all),
        critical,
        plateau,
        ergotropy_oracle(11, &measured),
        measurement_neutrality(13, 100),
        comm,
        desk,
        switching_null(&SwitchingParams::default()),
        phase_portrait_check(17, 2.0),
    ];

    println!();
    for o in &outcomes {
        println!("{o}");
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if passed != outcomes.len() {
        std::process::exit(1);
    }
}
