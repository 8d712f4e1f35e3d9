use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffnet::pipeline::{run_differential, Estimator};
use diffnet::simulation::{default_graph, generate_replicate, EtaSetting, SimScenario};
use diffnet::{BasisSpec, EstimatorConfig, Execution};

fn bench_pipeline(c: &mut Criterion) {
    let graph = default_graph(12, 3).expect("graph");
    let scen = SimScenario {
        n: 120,
        p: 12,
        setting: EtaSetting::LinearEta,
        replicate_seed: 9,
    };
    let (a, b) = generate_replicate(&scen, &graph).expect("replicate");
    let basis = BasisSpec::linear(2);
    let mut group = c.benchmark_group("group_lasso_pipeline");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let cfg = EstimatorConfig {
            execution: exec,
            n_lambda: 20,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |bch, cfg| {
            bch.iter(|| run_differential(&a, &b, &basis, Estimator::NeighborhoodGl, cfg, 0.05).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
