//! Time the benchmark exploration design.
//!
//! Usage: `cargo run --release --example solve_benchmark [D0] [gamma_w]` (defaults 1e5, 1).

use expdesign_core::design::{certify_design_report, iterate_design, ExplorationProblem};
use expdesign_core::linalg::RMat;
use expdesign_core::plant::{discretize_benchmark, BenchmarkPlantParams, LinearModel};
use expdesign_core::setmem::ParameterEllipsoid;
use expdesign_core::spectral::{FrequencyGrid, ZLineConvention};
use expdesign_core::uncertainty::{noise_level_bounds, scenario_gamma_bounds, ScenarioConfig};

fn main() -> expdesign_core::Result<()> {
    env_logger::init();
    let arg = |i: usize, default: f64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (d0, gamma_w) = (arg(1, 1e5), arg(2, 1.0));
    let truth = discretize_benchmark(&BenchmarkPlantParams::reference())?;
    let th = truth.theta();
    let theta0 = &th + &th * (d0.powf(-0.5) / th.norm());
    let nominal = LinearModel::from_theta(&theta0, 4, 1)?;
    let prior = ParameterEllipsoid::prior(theta0, &(RMat::identity(5, 5) * d0), 4)?;
    let grid = FrequencyGrid::equally_spaced(20, 100)?;
    let t0 = std::time::Instant::now();
    let caps = scenario_gamma_bounds(&prior, &nominal, &grid, &ScenarioConfig::default())?;
    let d_des = RMat::identity(5, 5);
    let bounds = noise_level_bounds(&caps, gamma_w, 100, &d_des)?;
    println!("bounds {} ({:.2}s)", bounds.summary(), t0.elapsed().as_secs_f64());
    let prob = ExplorationProblem::new(&nominal, prior, grid, bounds, d_des, 0.5, gamma_w, ZLineConvention::default(), None)?;
    let t1 = std::time::Instant::now();
    let d = iterate_design(&prob, 1e-3, 20)?;
    println!(
        "design: gamma_e={:.6} iters={} converged={} history={:?} ({:.2}s)",
        d.gamma_e,
        d.iterations,
        d.converged,
        d.history,
        t1.elapsed().as_secs_f64()
    );
    println!("lmi mins {:?}", d.lmi_min_eigenvalues);
    println!("certify {:?}", certify_design_report(&d, &prob, 100, 7)?);
    Ok(())
}
