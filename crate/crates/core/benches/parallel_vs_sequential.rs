use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use otto_battery::analytic::{phase_portrait, GridAxis};
use otto_battery::dynamics::{stroke_propagator, Integrator, PropagatorConfig};
use otto_battery::exec::Execution;
use otto_battery::model::{MachineParams, Stroke};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn work_stroke(c: &mut Criterion) {
    let mut group = c.benchmark_group("work_stroke_propagator");
    group.sample_size(10);
    let p = MachineParams {
        levels: 40,
        work_time: 4.0 * std::f64::consts::PI,
        ..MachineParams::engine_preset()
    };
    for (name, execution) in MODES {
        let cfg = PropagatorConfig {
            integrator: Integrator::default(),
            execution,
        };
        group.bench_with_input(BenchmarkId::new(name, p.levels), &cfg, |b, cfg| {
            b.iter(|| stroke_propagator(&p, Stroke::Compression, cfg).unwrap())
        });
    }
    group.finish();
}

fn portrait(c: &mut Criterion) {
    let mut group = c.benchmark_group("phase_portrait");
    for (name, execution) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| phase_portrait(GridAxis::new(0.0, 1.0, 401), GridAxis::new(0.01, 1.99, 400), 2.0, execution).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, work_stroke, portrait);
criterion_main!(benches);
