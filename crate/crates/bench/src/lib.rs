//! Benchmark fixtures shared by the criterion benches.

use expdesign_core::design::ExplorationProblem;
use expdesign_core::linalg::RMat;
use expdesign_core::plant::{discretize_benchmark, BenchmarkPlantParams, LinearModel};
use expdesign_core::setmem::ParameterEllipsoid;
use expdesign_core::spectral::{FrequencyGrid, ZLineConvention};
use expdesign_core::uncertainty::{noise_level_bounds, scenario_gamma_bounds, ScenarioConfig};

/// Benchmark plant, boundary-offset initial estimate and prior `D_0 = d0·I`.
pub fn benchmark_prior(d0: f64) -> (LinearModel, LinearModel, ParameterEllipsoid) {
    let truth = discretize_benchmark(&BenchmarkPlantParams::reference()).expect("reference plant");
    let th = truth.theta();
    let theta0 = &th + &th * (d0.powf(-0.5) / th.norm());
    let nominal = LinearModel::from_theta(&theta0, 4, 1).expect("nominal model");
    let prior = ParameterEllipsoid::prior(theta0, &(RMat::identity(5, 5) * d0), 4).expect("prior");
    (truth, nominal, prior)
}

/// Exploration problem on the benchmark with horizon `t`, `l` equally spaced frequencies
/// and `samples` scenario samples.
pub fn benchmark_problem(d0: f64, gamma_w: f64, t: usize, l: usize, samples: usize) -> ExplorationProblem {
    let (_, nominal, prior) = benchmark_prior(d0);
    let grid = FrequencyGrid::equally_spaced(l, t).expect("grid");
    let cfg = ScenarioConfig { sample_count: samples, ..Default::default() };
    let caps = scenario_gamma_bounds(&prior, &nominal, &grid, &cfg).expect("caps");
    let d_des = RMat::identity(5, 5);
    let bounds = noise_level_bounds(&caps, gamma_w, t, &d_des).expect("noise bounds");
    ExplorationProblem::new(&nominal, prior, grid, bounds, d_des, 0.5, gamma_w, ZLineConvention::default(), None).expect("problem")
}
