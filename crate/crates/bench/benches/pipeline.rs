use criterion::{black_box, criterion_group, criterion_main, Criterion};
use expdesign_bench::{benchmark_prior, benchmark_problem};
use expdesign_core::design::{naive_design, solve_exploration_sdp};
use expdesign_core::plant::simulate_nonlinear_benchmark;
use expdesign_core::plant::BenchmarkPlantParams;
use expdesign_core::plant::DisturbanceConvention;
use expdesign_core::setmem::{build_regressors, nonfalsified_set};
use expdesign_core::spectral::{transfer_blocks, FrequencyGrid};
use expdesign_core::uncertainty::{scenario_gamma_bounds, ScenarioConfig};

fn spectral(c: &mut Criterion) {
    let (_, nominal, prior) = benchmark_prior(1e5);
    let grid = FrequencyGrid::equally_spaced(20, 100).unwrap();
    c.bench_function("transfer_blocks L=20", |b| b.iter(|| transfer_blocks(black_box(&nominal), &grid).unwrap()));
    let cfg = ScenarioConfig { sample_count: 50, ..Default::default() };
    c.bench_function("scenario caps N=50", |b| b.iter(|| scenario_gamma_bounds(&prior, &nominal, &grid, &cfg).unwrap()));
}

fn identification(c: &mut Criterion) {
    let plant = BenchmarkPlantParams::reference().with_gamma_w(1.0, 100, DisturbanceConvention::Sampled).unwrap();
    let grid = FrequencyGrid::equally_spaced(20, 100).unwrap();
    let inputs = naive_design(10.0, &grid, 1).unwrap().input_sequence();
    let x0 = expdesign_core::linalg::RVec::zeros(4);
    c.bench_function("simulate + identify T=100", |b| {
        b.iter(|| {
            let traj = simulate_nonlinear_benchmark(&plant, black_box(&inputs), &x0).unwrap();
            nonfalsified_set(&build_regressors(&traj).unwrap(), 1.0).unwrap()
        })
    });
}

fn design(c: &mut Criterion) {
    let prob = benchmark_problem(1e5, 1.0, 20, 10, 20);
    let mut g = c.benchmark_group("design");
    g.sample_size(10);
    g.bench_function("exploration SDP T=20 L=10", |b| b.iter(|| solve_exploration_sdp(black_box(&prob)).unwrap()));
    g.finish();
}

criterion_group!(benches, spectral, identification, design);
criterion_main!(benches);
