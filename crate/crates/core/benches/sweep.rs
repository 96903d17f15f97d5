use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ntl_core::grid::PerUnitBase;
use ntl_core::pipeline::{analyze, AnalysisOptions};
use ntl_core::powerflow::{solve_series_with, LoadSnapshot, SolverConfig};
use ntl_core::synth::{generate_baseline_loads, pilot_network, synthesize_on, SynthConfig, POWER_FACTOR};
use ntl_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Auto)];

fn load_flow(c: &mut Criterion) {
    let net = pilot_network(1).unwrap();
    let loads = generate_baseline_loads(&net, 7, 1).unwrap();
    let snaps: Vec<LoadSnapshot> = (0..loads.n_hours).map(|h| loads.snapshot(h, POWER_FACTOR)).collect();
    let pu = net.to_per_unit(PerUnitBase::default()).unwrap();
    let cfg = SolverConfig::default();

    let mut group = c.benchmark_group("solve_series_168h_pilot");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solve_series_with(&pu, &snaps, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let cfg = SynthConfig { seed: 1, n_days: 7, ..SynthConfig::default() };
    let ds = synthesize_on(pilot_network(1).unwrap(), &cfg, Execution::Auto).unwrap();
    let (energy, voltage) = (ds.measurements.energy_csv(), ds.measurements.voltage_csv());
    let options = AnalysisOptions::default();

    let mut group = c.benchmark_group("analyze_7d_pilot");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| analyze(&ds.network, &energy, &voltage, &options, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, load_flow, pipeline);
criterion_main!(benches);
