use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dritc_core::data::{BalanceSpec, Estimand};
use dritc_core::estimators::Battery;
use dritc_core::inference::{bootstrap_battery, BootstrapConfig};
use dritc_core::simlab::{generate, run_study, true_estimand, Dgm, Scenario, StudyConfig};
use dritc_core::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bootstrap(c: &mut Criterion) {
    let data = generate(&Dgm::new(Scenario::Ks1), 1000, 1, 0).unwrap().data;
    let battery = Battery::full(Estimand::Atc, BalanceSpec::main_effects(4));
    let config = BootstrapConfig {
        b: 64,
        seed: 1,
        ..BootstrapConfig::default()
    };
    let mut g = c.benchmark_group("bootstrap_battery_n1000_b64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bootstrap_battery(&data, &battery, None, &config, exec).unwrap())
        });
    }
    g.finish();
}

fn study(c: &mut Criterion) {
    let config = StudyConfig::new(Scenario::Ks2, 500, 16, 20, 3);
    let mut g = c.benchmark_group("study_ks2_n500_r16_b20");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_study(&config, 1.215, exec).unwrap())
        });
    }
    g.finish();
}

fn truth(c: &mut Criterion) {
    let dgm = Dgm::new(Scenario::Ks4);
    let mut g = c.benchmark_group("truth_ks4_1m_draws");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| true_estimand(&dgm, 1 << 20, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bootstrap, study, truth);
criterion_main!(benches);
