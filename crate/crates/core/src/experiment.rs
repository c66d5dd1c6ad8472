//! Configuration-driven end-to-end pipeline and the parameter studies.
//!
//! [`run_pipeline`] executes the whole procedure for one configuration: build the plant,
//! form the prior around the initial estimate, bound the transfer-matrix uncertainty by
//! sampling, design the minimum-energy exploration input, certify it on prior samples, apply
//! it to the nonlinear plant, identify the non-falsified set and evaluate the a-posteriori
//! error certificate. [`run_study`] sweeps one parameter and writes a tidy CSV plus an SVG.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{
    certify_design_report, iterate_design_with, naive_design, CertificationReport, DesignOptions, ExplorationDesign, ExplorationProblem,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::linalg::{RMat, RVec};
use crate::plant::{
    discretize_benchmark, disturbance_energy, periodic_initial_state, simulate_nonlinear_benchmark, BenchmarkPlantParams,
    DisturbanceConvention, LinearModel, Trajectory,
};
use crate::plot::{five_numbers, BoxPlot, Series, SeriesStyle, XyPlot};
use crate::setmem::{build_regressors, goal_value, nonfalsified_set, posterior_error_certificate, ParameterEllipsoid};
use crate::spectral::{ExplorationInputSpec, FrequencyGrid, ZLineConvention};
use crate::uncertainty::{noise_level_bounds, scenario_gamma_bounds, ScenarioConfig};

/// Version of the configuration schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;
/// Names accepted by [`run_study`].
pub const STUDY_NAMES: [&str; 5] = ["energy-vs-gammaw", "posterior-vs-D0", "targeted-vs-naive", "sensitivity-theta0", "energy-vs-Ddes"];
/// Cap scales tried, in order, when the design at full caps is infeasible.
pub const FALLBACK_CAP_SCALES: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];
/// Relative slack for the realized-disturbance check `Σ‖w_k‖² ≤ γ_w`.
pub const ENERGY_SLACK: f64 = 1e-9;

/// Frequency grid specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// `ω_i = i/L`, `i = 0..L−1` (requires `T` divisible by `L`).
    EquallySpaced { count: usize },
    /// Explicit on-grid frequencies (multiples of `1/T`).
    Explicit { omegas: Vec<f64> },
}

impl GridSpec {
    pub fn build(&self, horizon: usize) -> Result<FrequencyGrid> {
        match self {
            GridSpec::EquallySpaced { count } => FrequencyGrid::equally_spaced(*count, horizon),
            GridSpec::Explicit { omegas } => FrequencyGrid::from_omegas(omegas, horizon),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridSpec::EquallySpaced { count } => *count,
            GridSpec::Explicit { omegas } => omegas.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keyword form of [`GammaW`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaWKeyword {
    /// Use the friction magnitudes of the plant: `γ_w` is their worst-case energy.
    #[serde(rename = "from-beta")]
    FromBeta,
}

/// Disturbance energy bound: a number (the friction magnitudes are then chosen to make it
/// tight) or `"from-beta"` (the bound implied by the configured friction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaW {
    Value(f64),
    Keyword(GammaWKeyword),
}

/// Rule for the initial estimate `θ̂_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorRecipe {
    /// `θ̂_0 = θ_tr + (‖D_0⁻¹‖^{1/2}/‖θ_tr‖)·θ_tr`: the true parameters on the boundary of `Θ_0`.
    #[default]
    BoundaryOffset,
    /// Explicit `θ̂_0 = vec([Â B̂])` (column-major, length `n_x n_φ`).
    Explicit { theta: Vec<f64> },
    /// Uniform in the ellipsoid `(θ̂_0 − θ_tr)ᵀ(D_0 ⊗ I)(θ̂_0 − θ_tr) ≤ 1`.
    Random { seed: u64 },
}

/// Prior: the initial estimate recipe and the scalar level `D_0 = d0·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub d0: f64,
    #[serde(default)]
    pub recipe: PriorRecipe,
}

/// Initial plant state of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Zero,
    /// The state that makes the friction-free response to the input `T`-periodic.
    Periodic,
}

/// Sweep lists and trial counts of the studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    /// Trials per sweep point for posterior-vs-D0, targeted-vs-naive and sensitivity-theta0.
    pub trials: usize,
    /// Trials per sweep point for the energy sweeps (energy-vs-gammaw, energy-vs-Ddes).
    pub sweep_trials: usize,
    pub gamma_w_values: Vec<f64>,
    pub d0_values: Vec<f64>,
    pub d_des_values: Vec<f64>,
    /// Run trials concurrently (results are merged in sweep order either way).
    pub parallel: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            trials: 10,
            sweep_trials: 1,
            gamma_w_values: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            d0_values: vec![1e4, 1e5, 1e6],
            d_des_values: vec![1e-2, 1e-1, 1.0, 10.0],
            parallel: true,
        }
    }
}

/// Complete experiment configuration (TOML, see [`ExperimentConfig::from_toml_str`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed. Trial `t` of a run uses `seed + t` for the scenario sampling (offset by
    /// `scenario.seed`), the certification samples and (with [`PriorRecipe::Random`], offset
    /// by its own seed) the initial estimate.
    pub seed: u64,
    pub plant: BenchmarkPlantParams,
    pub horizon: usize,
    pub grid: GridSpec,
    pub epsilon: f64,
    pub gamma_w: GammaW,
    pub convention: DisturbanceConvention,
    pub prior: PriorSpec,
    /// `D_des = d_des·I`; the exploration goal is `‖G·P‖ ≤ 1/d_des`.
    pub d_des: f64,
    pub scenario: ScenarioConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub initial_state: InitialState,
    /// Prior samples used to certify the design.
    pub certify_samples: usize,
    /// Smallest cap scale tried when the design at full caps is infeasible (0 disables the
    /// fallback).
    pub min_cap_scale: f64,
    pub study: StudySettings,
    /// Default output directory (the CLI `--out` flag takes precedence).
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    /// The benchmark setting: `T = 100`, 20 equally spaced frequencies, `ε = 0.5`, `γ_w = 1`,
    /// `D_0 = 1e5·I` with the boundary-offset estimate, `D_des = I`.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            plant: BenchmarkPlantParams::reference(),
            horizon: 100,
            grid: GridSpec::EquallySpaced { count: 20 },
            epsilon: 0.5,
            gamma_w: GammaW::Value(1.0),
            convention: DisturbanceConvention::Sampled,
            prior: PriorSpec { d0: 1e5, recipe: PriorRecipe::BoundaryOffset },
            d_des: 1.0,
            scenario: ScenarioConfig::default(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            initial_state: InitialState::Zero,
            certify_samples: 100,
            min_cap_scale: 0.0625,
            study: StudySettings::default(),
            output_dir: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Parse and validate a TOML configuration. `schema_version` is required; every other
    /// key defaults to the benchmark setting.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        match value.get("schema_version") {
            None => return Err(config_err("missing required key 'schema_version'")),
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(config_err(format!("unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"))),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse and validate a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// SHA-256 (first 16 hex digits) of the canonical TOML form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: None, ..self.clone() };
        let text = toml::to_string(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }

    /// Check all invariants: schema version, horizon, `L ≥ n_φ`, `ε ∈ (0,1)`, positive
    /// (SPD) levels `D_0`, `D_des`, a non-negative `γ_w`, and solver settings.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!("unsupported schema_version {} (this build reads {SCHEMA_VERSION})", self.schema_version)));
        }
        self.plant.validate().map_err(|e| config_err(format!("plant: {e}")))?;
        if self.horizon == 0 {
            return Err(config_err("horizon must be positive"));
        }
        let (nx, nu) = (4usize, 1usize);
        let nphi = nx + nu;
        if self.grid.len() < nphi {
            return Err(config_err(format!("grid has L = {} frequencies; at least n_phi = {nphi} are required", self.grid.len())));
        }
        let grid = self.grid.build(self.horizon).map_err(|e| config_err(format!("grid: {e}")))?;
        grid.validate_for(nx, nu).map_err(|e| config_err(format!("grid: {e}")))?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(config_err(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if let GammaW::Value(g) = self.gamma_w {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(config_err(format!("gamma_w must be a non-negative number, got {g}")));
            }
        }
        if !(self.prior.d0 > 0.0 && self.prior.d0.is_finite()) {
            return Err(config_err(format!("prior.d0 must be positive (D_0 = d0·I must be SPD), got {}", self.prior.d0)));
        }
        if !(self.d_des > 0.0 && self.d_des.is_finite()) {
            return Err(config_err(format!("d_des must be positive (D_des = d_des·I must be SPD), got {}", self.d_des)));
        }
        if let PriorRecipe::Explicit { theta } = &self.prior.recipe {
            if theta.len() != nx * nphi {
                return Err(config_err(format!("prior.recipe.theta has length {}, expected {}", theta.len(), nx * nphi)));
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(config_err("prior.recipe.theta must be finite"));
            }
        }
        self.scenario.validate().map_err(|e| config_err(format!("scenario: {e}")))?;
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(config_err(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(config_err("max_iter must be at least 1"));
        }
        if self.certify_samples == 0 {
            return Err(config_err("certify_samples must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.min_cap_scale) {
            return Err(config_err(format!("min_cap_scale must lie in [0,1], got {}", self.min_cap_scale)));
        }
        let s = &self.study;
        if s.trials == 0 || s.sweep_trials == 0 {
            return Err(config_err("study trial counts must be at least 1"));
        }
        for (name, list) in [("gamma_w_values", &s.gamma_w_values), ("d0_values", &s.d0_values), ("d_des_values", &s.d_des_values)] {
            if list.is_empty() {
                return Err(config_err(format!("study.{name} must not be empty")));
            }
            let nonneg_ok = name == "gamma_w_values";
            if list.iter().any(|&v| !(v.is_finite() && (v > 0.0 || (nonneg_ok && v == 0.0)))) {
                return Err(config_err(format!("study.{name} must contain positive finite values")));
            }
        }
        Ok(())
    }

    /// The configuration used for trial `t`: all derived seeds shifted by `t`.
    pub fn for_trial(&self, t: u64) -> Self {
        let mut c = self.clone();
        c.seed = self.seed.wrapping_add(t);
        if let PriorRecipe::Random { seed } = &mut c.prior.recipe {
            *seed = seed.wrapping_add(t);
        }
        c
    }

    /// Seed used for the scenario sampling: the master seed offset by `scenario.seed`.
    pub fn scenario_seed(&self) -> u64 {
        self.seed.wrapping_add(self.scenario.seed)
    }

    /// Seed used for the certification samples (distinct from the scenario samples).
    pub fn certify_seed(&self) -> u64 {
        self.seed.wrapping_add(0x5eed_0046)
    }
}

/// Everything the design and experiment stages need, derived from a configuration.
#[derive(Debug, Clone)]
pub struct PipelineSetup {
    pub config: ExperimentConfig,
    /// Plant with the friction magnitudes matching `γ_w`.
    pub plant: BenchmarkPlantParams,
    pub gamma_w: f64,
    pub truth: LinearModel,
    pub theta0: RVec,
    pub prior: ParameterEllipsoid,
    pub d_des: RMat,
    pub problem: ExplorationProblem,
}

/// Initial estimate from the recipe.
pub fn initial_estimate(recipe: &PriorRecipe, truth: &LinearModel, d0: f64) -> Result<RVec> {
    let th = truth.theta();
    let radius = d0.powf(-0.5);
    match recipe {
        PriorRecipe::BoundaryOffset => Ok(&th + &th * (radius / th.norm())),
        PriorRecipe::Explicit { theta } => {
            if theta.len() != th.len() {
                return Err(Error::DimensionMismatch(format!("explicit theta has length {}, expected {}", theta.len(), th.len())));
            }
            Ok(RVec::from_column_slice(theta))
        }
        PriorRecipe::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let n = th.len();
            let dir = RVec::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let u: f64 = Uniform::new(0.0, 1.0).sample(&mut rng);
            let r = radius * u.powf(1.0 / n as f64);
            let scale = r / dir.norm();
            Ok(&th + dir * scale)
        }
    }
}

/// Build the plant, prior, scenario caps, noise bounds and the exploration problem.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PipelineSetup> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let (plant, gamma_w) = match cfg.gamma_w {
        GammaW::Value(g) => (cfg.plant.with_gamma_w(g, cfg.horizon, cfg.convention).map_err(|e| e.in_stage("plant"))?, g),
        GammaW::Keyword(GammaWKeyword::FromBeta) => (cfg.plant.clone(), cfg.plant.gamma_w_bound(cfg.horizon, cfg.convention)),
    };
    let truth = discretize_benchmark(&plant).map_err(|e| e.in_stage("plant"))?;
    let (nx, nu) = (truth.nx(), truth.nu());
    let nphi = nx + nu;
    let theta0 = initial_estimate(&cfg.prior.recipe, &truth, cfg.prior.d0).map_err(|e| e.in_stage("prior"))?;
    let nominal = LinearModel::from_theta(&theta0, nx, nu).map_err(|e| e.in_stage("prior"))?;
    let prior =
        ParameterEllipsoid::prior(theta0.clone(), &(RMat::identity(nphi, nphi) * cfg.prior.d0), nx).map_err(|e| e.in_stage("prior"))?;
    let grid = cfg.grid.build(cfg.horizon).map_err(|e| e.in_stage("config"))?;
    let scenario = ScenarioConfig { seed: cfg.scenario_seed(), ..cfg.scenario.clone() };
    let caps = scenario_gamma_bounds(&prior, &nominal, &grid, &scenario).map_err(|e| e.in_stage("scenario"))?;
    let d_des = RMat::identity(nphi, nphi) * cfg.d_des;
    let bounds = noise_level_bounds(&caps, gamma_w, cfg.horizon, &d_des).map_err(|e| e.in_stage("scenario"))?;
    let problem = ExplorationProblem::new(
        &nominal,
        prior.clone(),
        grid,
        bounds,
        d_des.clone(),
        cfg.epsilon,
        gamma_w,
        ZLineConvention::default(),
        None,
    )
    .map_err(|e| e.in_stage("design"))?;
    Ok(PipelineSetup { config: cfg.clone(), plant, gamma_w, truth, theta0, prior, d_des, problem })
}

/// Design together with how it was obtained and its sampled certificate.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub design: ExplorationDesign,
    /// Factor applied to the transfer-uncertainty caps (1 unless the fallback was used).
    pub cap_scale: f64,
    pub certification: CertificationReport,
    pub seconds: f64,
}

impl DesignOutcome {
    /// Designed at full caps and certified on the prior samples.
    pub fn certified(&self) -> bool {
        self.cap_scale == 1.0 && self.certification.passed
    }
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e.root(), Error::Infeasible { .. } | Error::SolverFailure(_))
}

/// Solve the design at full caps; when that is infeasible, retry with the caps scaled by
/// [`FALLBACK_CAP_SCALES`] down to `min_cap_scale`. A fallback design is never reported as
/// certified, but its certificate on the prior samples is still evaluated.
pub fn design_stage(setup: &PipelineSetup) -> Result<DesignOutcome> {
    let cfg = &setup.config;
    let opts = DesignOptions::default();
    let start = Instant::now();
    let mut scales = vec![1.0];
    if cfg.min_cap_scale > 0.0 {
        scales.extend(FALLBACK_CAP_SCALES.iter().copied().filter(|&s| s >= cfg.min_cap_scale));
    }
    let mut last_err = None;
    for &s in &scales {
        let prob = setup.problem.with_scaled_caps(s);
        match iterate_design_with(&prob, cfg.tol, cfg.max_iter, &opts) {
            Ok(design) => {
                if s < 1.0 {
                    log::warn!("design infeasible at full caps; using caps scaled by {s}");
                }
                let certification = certify_design_report(&design, &setup.problem, cfg.certify_samples, cfg.certify_seed())
                    .map_err(|e| e.in_stage("certify"))?;
                return Ok(DesignOutcome { design, cap_scale: s, certification, seconds: start.elapsed().as_secs_f64() });
            }
            Err(e) if is_infeasible(&e) => {
                log::info!("design at cap scale {s} failed: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e.in_stage("design")),
        }
    }
    Err(last_err.expect("at least one scale was tried").in_stage("design"))
}

/// Outcome of applying an input to the plant and identifying from the data.
#[derive(Debug, Clone)]
pub struct Identification {
    pub trajectory: Trajectory,
    pub ellipsoid: ParameterEllipsoid,
    /// Radius `G` of the non-falsified set.
    pub g: f64,
    /// A-posteriori certificate `‖G·P‖`.
    pub gp_norm: f64,
    /// `‖θ̂_T − θ_tr‖²`-type goal value `(θ̂_T − θ_tr)ᵀ(D_des ⊗ I)(θ̂_T − θ_tr)`.
    pub true_goal_value: f64,
    pub theta_in_set: bool,
    pub disturbance_energy: f64,
}

/// Apply `spec` to the nonlinear plant and identify the parameter set.
pub fn experiment_stage(setup: &PipelineSetup, spec: &ExplorationInputSpec) -> Result<Identification> {
    let inputs = spec.input_sequence();
    let nx = setup.truth.nx();
    let x0 = match setup.config.initial_state {
        InitialState::Zero => RVec::zeros(nx),
        InitialState::Periodic => {
            let zeros = vec![RVec::zeros(nx); inputs.len()];
            periodic_initial_state(&setup.truth, &inputs, &zeros).map_err(|e| e.in_stage("simulate"))?
        }
    };
    let trajectory = simulate_nonlinear_benchmark(&setup.plant, &inputs, &x0).map_err(|e| e.in_stage("simulate"))?;
    let reg = build_regressors(&trajectory).map_err(|e| e.in_stage("identify"))?;
    let ellipsoid = nonfalsified_set(&reg, setup.gamma_w).map_err(|e| e.in_stage("identify"))?;
    let theta_true = setup.truth.theta();
    let theta_in_set = ellipsoid.contains(&theta_true).map_err(|e| e.in_stage("identify"))?;
    let true_goal_value = goal_value(&theta_true, &ellipsoid.center, &setup.d_des, nx).map_err(|e| e.in_stage("identify"))?;
    Ok(Identification {
        g: ellipsoid.radius,
        gp_norm: posterior_error_certificate(&ellipsoid),
        true_goal_value,
        theta_in_set,
        disturbance_energy: disturbance_energy(&trajectory),
        trajectory,
        ellipsoid,
    })
}

/// Summary of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub gamma_w: f64,
    pub d0: f64,
    pub d_des: f64,
    pub gamma_e: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cap_scale: f64,
    /// Designed at full caps and certified on `certify_samples` prior samples.
    pub certified: bool,
    pub certify_samples_checked: usize,
    pub certify_worst_margins: [f64; 3],
    /// Radius `G` of the non-falsified set.
    pub g: f64,
    /// A-posteriori certificate `‖G·P‖`.
    pub gp_norm: f64,
    /// `‖D_des⁻¹‖ = 1/d_des`.
    pub goal_bound: f64,
    /// `‖G·P‖ ≤ ‖D_des⁻¹‖`.
    pub goal_satisfied: bool,
    pub true_goal_value: f64,
    pub theta_in_set: bool,
    pub disturbance_energy: f64,
    pub disturbance_within_bound: bool,
    pub design_seconds: f64,
    pub csv_paths: Vec<PathBuf>,
}

impl RunReport {
    /// Every guarantee of the run holds: certified design at full caps, goal met, true
    /// parameters in the identified set, realized disturbance within its bound.
    pub fn all_guarantees_hold(&self) -> bool {
        self.certified && self.goal_satisfied && self.theta_in_set && self.disturbance_within_bound
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "yes" } else { "no" };
        writeln!(f, "RunReport")?;
        writeln!(f, "  config hash            {}", self.config_hash)?;
        writeln!(f, "  seed                   {}", self.seed)?;
        writeln!(f, "  gamma_w                {:e}", self.gamma_w)?;
        writeln!(f, "  D_0 level              {:e}", self.d0)?;
        writeln!(f, "  D_des level            {:e}", self.d_des)?;
        writeln!(f, "design")?;
        writeln!(f, "  gamma_e                {:.6e}", self.gamma_e)?;
        writeln!(f, "  input energy gamma_e^2 {:.6e}", self.gamma_e * self.gamma_e)?;
        writeln!(f, "  iterations             {}", self.iterations)?;
        writeln!(f, "  converged              {}", yn(self.converged))?;
        writeln!(f, "  cap scale              {}", self.cap_scale)?;
        writeln!(
            f,
            "  certified              {} ({} samples, worst margins {:.3e} {:.3e} {:.3e})",
            yn(self.certified),
            self.certify_samples_checked,
            self.certify_worst_margins[0],
            self.certify_worst_margins[1],
            self.certify_worst_margins[2]
        )?;
        writeln!(f, "  design time            {:.1} s", self.design_seconds)?;
        writeln!(f, "identification")?;
        writeln!(f, "  G                      {:.6e}", self.g)?;
        writeln!(f, "  ||G P||                {:.6e}", self.gp_norm)?;
        writeln!(f, "  goal bound ||D_des^-1|| {:.6e}", self.goal_bound)?;
        writeln!(f, "  goal satisfied         {}", yn(self.goal_satisfied))?;
        writeln!(f, "  true goal value        {:.6e}", self.true_goal_value)?;
        writeln!(f, "  theta_tr in set        {}", yn(self.theta_in_set))?;
        writeln!(
            f,
            "  disturbance energy     {:.6e} (bound {:.6e}, {})",
            self.disturbance_energy,
            self.gamma_w,
            if self.disturbance_within_bound { "within" } else { "EXCEEDED" }
        )?;
        for p in &self.csv_paths {
            writeln!(f, "  output                 {}", p.display())?;
        }
        write!(f, "all guarantees hold     {}", yn(self.all_guarantees_hold()))
    }
}

/// Full result of a pipeline run, with the intermediate objects.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub setup: PipelineSetup,
    pub design: DesignOutcome,
    pub identification: Identification,
    pub report: RunReport,
}

/// Run the full pipeline without writing files.
pub fn execute_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    let setup = prepare(cfg)?;
    let design = design_stage(&setup)?;
    let identification = experiment_stage(&setup, &design.design.spec)?;
    let report = build_report(&setup, &design, &identification);
    Ok(PipelineRun { setup, design, identification, report })
}

fn build_report(setup: &PipelineSetup, design: &DesignOutcome, id: &Identification) -> RunReport {
    let cfg = &setup.config;
    let goal_bound = 1.0 / cfg.d_des;
    RunReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        gamma_w: setup.gamma_w,
        d0: cfg.prior.d0,
        d_des: cfg.d_des,
        gamma_e: design.design.gamma_e,
        iterations: design.design.iterations,
        converged: design.design.converged,
        cap_scale: design.cap_scale,
        certified: design.certified(),
        certify_samples_checked: design.certification.samples_checked,
        certify_worst_margins: design.certification.worst_margins,
        g: id.g,
        gp_norm: id.gp_norm,
        goal_bound,
        goal_satisfied: id.gp_norm <= goal_bound,
        true_goal_value: id.true_goal_value,
        theta_in_set: id.theta_in_set,
        disturbance_energy: id.disturbance_energy,
        disturbance_within_bound: id.disturbance_energy <= setup.gamma_w * (1.0 + ENERGY_SLACK) + ENERGY_SLACK,
        design_seconds: design.seconds,
        csv_paths: Vec::new(),
    }
}

/// Run the full pipeline. With an output directory, write `design.toml`, `trajectory.csv`,
/// `ellipsoid.toml` and `report.txt` there and list the CSVs in the report.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    let mut run = execute_pipeline(cfg)?;
    if let Some(dir) = out_dir {
        write_run_artifacts(&mut run, dir)?;
    }
    Ok(run.report)
}

/// Write the artifacts of a run into `dir` and record the CSV paths in its report.
pub fn write_run_artifacts(run: &mut PipelineRun, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let meta = Metadata::for_config(&run.setup.config, 1);
    write_text(&dir.join("design.toml"), &run.design.design.to_toml()?)?;
    write_text(&dir.join("ellipsoid.toml"), &run.identification.ellipsoid.to_record())?;
    let traj_path = dir.join("trajectory.csv");
    write_trajectory_csv(&traj_path, &run.identification.trajectory, &meta)?;
    run.report.csv_paths = vec![traj_path];
    write_text(&dir.join("report.txt"), &format!("{}\n", run.report))?;
    Ok(())
}

/// Metadata written as the first CSV row: config hash, seeds and trial counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub fields: Vec<(String, String)>,
}

impl Metadata {
    pub fn for_config(cfg: &ExperimentConfig, trials_per_point: usize) -> Self {
        let seeds = if trials_per_point <= 1 {
            cfg.seed.to_string()
        } else {
            format!("{}..{}", cfg.seed, cfg.seed.wrapping_add(trials_per_point as u64 - 1))
        };
        Self {
            fields: vec![
                ("config_hash".into(), cfg.hash()),
                ("schema_version".into(), SCHEMA_VERSION.to_string()),
                ("seeds".into(), seeds),
                ("trials_per_point".into(), trials_per_point.to_string()),
                ("scenario_samples".into(), cfg.scenario.sample_count.to_string()),
                ("certify_samples".into(), cfg.certify_samples.to_string()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.fields.push((key.into(), value.into()));
        self
    }

    /// The metadata record: `#meta` followed by `key=value` fields.
    pub fn record(&self) -> Vec<String> {
        std::iter::once("#meta".to_string()).chain(self.fields.iter().map(|(k, v)| format!("{k}={v}"))).collect()
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display())).in_stage("output")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Write a CSV with the metadata row, a header row and the data rows (RFC-4180 quoting).
pub fn write_csv(path: &Path, meta: &Metadata, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(meta.record()).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read the rows of a CSV written by [`write_csv`], skipping the metadata row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| config_err(e.to_string()))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()).map_err(|e| config_err(e.to_string())))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Trajectory CSV (`k,x1..xn,u1..um,w1..wn`) preceded by the metadata row.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, meta: &Metadata) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut buf);
        w.write_record(meta.record()).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    traj.write_csv(&mut buf).map_err(|e| io_err(path, e))?;
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// One trial of a study (one CSV row).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub study: String,
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub gamma_w: f64,
    pub d0: f64,
    pub d_des: f64,
    pub recipe: String,
    pub gamma_e: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cap_scale: f64,
    pub certified: bool,
    pub g: f64,
    pub gp_norm: f64,
    pub goal_bound: f64,
    pub goal_satisfied: bool,
    pub theta_in_set: bool,
    pub disturbance_energy: f64,
    /// `‖G·P‖` of the uniform design with the same energy (targeted-vs-naive only).
    pub naive_gp_norm: Option<f64>,
    /// Stage error of the trial, if it failed.
    pub error: Option<String>,
    /// Wall-clock time of the trial (not written to the CSV, which must be reproducible).
    pub seconds: f64,
}

/// CSV columns of [`TrialRecord`].
pub const TRIAL_COLUMNS: [&str; 23] = [
    "study",
    "point",
    "trial",
    "seed",
    "gamma_w",
    "d0",
    "d_des",
    "theta0_recipe",
    "gamma_e",
    "gamma_e_sq",
    "iterations",
    "converged",
    "cap_scale",
    "certified",
    "G",
    "gp_norm",
    "goal_bound",
    "goal_satisfied",
    "theta_in_set",
    "disturbance_energy",
    "naive_gp_norm",
    "gp_ratio",
    "error",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

impl TrialRecord {
    pub fn energy(&self) -> f64 {
        self.gamma_e * self.gamma_e
    }

    /// Targeted over naive `‖G·P‖`.
    pub fn gp_ratio(&self) -> Option<f64> {
        self.naive_gp_norm.map(|n| self.gp_norm / n)
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn row(&self) -> Vec<String> {
        vec![
            self.study.clone(),
            self.point.to_string(),
            self.trial.to_string(),
            self.seed.to_string(),
            num(self.gamma_w),
            num(self.d0),
            num(self.d_des),
            self.recipe.clone(),
            num(self.gamma_e),
            num(self.energy()),
            self.iterations.to_string(),
            self.converged.to_string(),
            num(self.cap_scale),
            self.certified.to_string(),
            num(self.g),
            num(self.gp_norm),
            num(self.goal_bound),
            self.goal_satisfied.to_string(),
            self.theta_in_set.to_string(),
            num(self.disturbance_energy),
            self.naive_gp_norm.map(num).unwrap_or_default(),
            self.gp_ratio().map(num).unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

fn recipe_name(r: &PriorRecipe) -> &'static str {
    match r {
        PriorRecipe::BoundaryOffset => "boundary-offset",
        PriorRecipe::Explicit { .. } => "explicit",
        PriorRecipe::Random { .. } => "random",
    }
}

/// Run one trial: the pipeline, plus the naive comparison when `with_naive`.
pub fn run_trial(study: &str, point: usize, trial: usize, cfg: &ExperimentConfig, with_naive: bool) -> TrialRecord {
    let start = Instant::now();
    let gamma_w = match cfg.gamma_w {
        GammaW::Value(g) => g,
        GammaW::Keyword(_) => cfg.plant.gamma_w_bound(cfg.horizon, cfg.convention),
    };
    let mut rec = TrialRecord {
        study: study.into(),
        point,
        trial,
        seed: cfg.seed,
        gamma_w,
        d0: cfg.prior.d0,
        d_des: cfg.d_des,
        recipe: recipe_name(&cfg.prior.recipe).into(),
        gamma_e: f64::NAN,
        iterations: 0,
        converged: false,
        cap_scale: f64::NAN,
        certified: false,
        g: f64::NAN,
        gp_norm: f64::NAN,
        goal_bound: 1.0 / cfg.d_des,
        goal_satisfied: false,
        theta_in_set: false,
        disturbance_energy: f64::NAN,
        naive_gp_norm: None,
        error: None,
        seconds: 0.0,
    };
    let result = (|| -> Result<()> {
        let run = execute_pipeline(cfg)?;
        let r = &run.report;
        rec.gamma_e = r.gamma_e;
        rec.iterations = r.iterations;
        rec.converged = r.converged;
        rec.cap_scale = r.cap_scale;
        rec.certified = r.certified;
        rec.g = r.g;
        rec.gp_norm = r.gp_norm;
        rec.goal_satisfied = r.goal_satisfied;
        rec.theta_in_set = r.theta_in_set;
        rec.disturbance_energy = r.disturbance_energy;
        if with_naive {
            let naive = naive_design(r.gamma_e, &run.setup.problem.grid, run.setup.truth.nu()).map_err(|e| e.in_stage("naive"))?;
            let id = experiment_stage(&run.setup, &naive).map_err(|e| e.in_stage("naive"))?;
            rec.naive_gp_norm = Some(id.gp_norm);
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{study} point {point} trial {trial} failed: {e}");
        rec.error = Some(e.to_string());
    }
    rec.seconds = start.elapsed().as_secs_f64();
    rec
}

/// Output of a study.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub name: String,
    pub records: Vec<TrialRecord>,
    pub csv_path: Option<PathBuf>,
    pub svg_path: Option<PathBuf>,
    /// Per-level spread statistics (sensitivity-theta0 only).
    pub summary_csv_path: Option<PathBuf>,
}

impl StudyResult {
    /// Every trial ran and met all guarantees.
    pub fn all_guarantees_hold(&self) -> bool {
        self.records.iter().all(|r| r.ok() && r.certified && r.goal_satisfied && r.theta_in_set)
    }
}

struct Sweep {
    label: &'static str,
    values: Vec<f64>,
    trials: usize,
    with_naive: bool,
    apply: fn(&mut ExperimentConfig, f64),
}

fn sweep_for(name: &str, cfg: &ExperimentConfig) -> Result<Sweep> {
    let s = &cfg.study;
    Ok(match name {
        "energy-vs-gammaw" => Sweep {
            label: "gamma_w",
            values: s.gamma_w_values.clone(),
            trials: s.sweep_trials,
            with_naive: false,
            apply: |c, v| c.gamma_w = GammaW::Value(v),
        },
        "posterior-vs-D0" => {
            Sweep { label: "D0", values: s.d0_values.clone(), trials: s.trials, with_naive: false, apply: |c, v| c.prior.d0 = v }
        }
        "targeted-vs-naive" => {
            Sweep { label: "D0", values: s.d0_values.clone(), trials: s.trials, with_naive: true, apply: |c, v| c.prior.d0 = v }
        }
        "sensitivity-theta0" => Sweep {
            label: "D0",
            values: s.d0_values.clone(),
            trials: s.trials,
            with_naive: false,
            apply: |c, v| {
                c.prior.d0 = v;
                if !matches!(c.prior.recipe, PriorRecipe::Random { .. }) {
                    c.prior.recipe = PriorRecipe::Random { seed: c.seed };
                }
            },
        },
        "energy-vs-Ddes" => {
            Sweep { label: "D_des", values: s.d_des_values.clone(), trials: s.sweep_trials, with_naive: false, apply: |c, v| c.d_des = v }
        }
        other => return Err(Error::UnknownStudy(other.to_string())),
    })
}

/// Run a study; with an output directory, write `<name>.csv` and `<name>.svg` there.
pub fn run_study(name: &str, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<StudyResult> {
    let sweep = sweep_for(name, cfg)?;
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let jobs: Vec<(usize, usize, ExperimentConfig)> = sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(p, &v)| {
            let mut c = cfg.clone();
            (sweep.apply)(&mut c, v);
            (0..sweep.trials).map(move |t| (p, t, c.for_trial(t as u64)))
        })
        .collect();
    let run = |(p, t, c): &(usize, usize, ExperimentConfig)| {
        let rec = run_trial(name, *p, *t, c, sweep.with_naive);
        log::info!("{name}: point {p} trial {t} done in {:.1}s (gamma_e = {:.4e}, ||GP|| = {:.4e})", rec.seconds, rec.gamma_e, rec.gp_norm);
        rec
    };
    // Ordered collect: the merge is by sweep index regardless of completion order.
    let records: Vec<TrialRecord> = if cfg.study.parallel { jobs.par_iter().map(run).collect() } else { jobs.iter().map(run).collect() };
    let mut result = StudyResult { name: name.into(), records, csv_path: None, svg_path: None, summary_csv_path: None };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let meta = Metadata::for_config(cfg, sweep.trials).with("study", name).with("sweep", sweep.label);
        let csv_path = dir.join(format!("{name}.csv"));
        let rows: Vec<Vec<String>> = result.records.iter().map(TrialRecord::row).collect();
        write_csv(&csv_path, &meta, &TRIAL_COLUMNS, &rows)?;
        let svg_path = dir.join(format!("{name}.svg"));
        write_text(&svg_path, &study_svg(name, &sweep, &result.records))?;
        if name == "sensitivity-theta0" {
            let path = dir.join(format!("{name}_summary.csv"));
            let rows = spread_rows(&sweep.values, &result.records);
            write_csv(&path, &meta, &["d0", "n", "min", "q1", "median", "q3", "max"], &rows)?;
            result.summary_csv_path = Some(path);
        }
        result.csv_path = Some(csv_path);
        result.svg_path = Some(svg_path);
    }
    Ok(result)
}

/// Alias of [`run_study`] writing into `out_dir`; returns the CSV path.
pub fn reproduce_study(name: &str, cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let r = run_study(name, cfg, Some(out_dir))?;
    Ok(r.csv_path.expect("written"))
}

fn spread_rows(levels: &[f64], records: &[TrialRecord]) -> Vec<Vec<String>> {
    levels
        .iter()
        .enumerate()
        .map(|(p, &d0)| {
            let e: Vec<f64> = records.iter().filter(|r| r.point == p && r.ok()).map(TrialRecord::energy).collect();
            let f = five_numbers(&e);
            let mut row = vec![num(d0), e.len().to_string()];
            row.extend(f.iter().map(|&v| num(v)));
            row
        })
        .collect()
}

fn by_point(records: &[TrialRecord], p: usize) -> impl Iterator<Item = &TrialRecord> {
    records.iter().filter(move |r| r.point == p && r.ok())
}

fn study_svg(name: &str, sweep: &Sweep, records: &[TrialRecord]) -> String {
    let points = |f: &dyn Fn(&TrialRecord) -> f64| -> Vec<(f64, f64)> {
        sweep.values.iter().enumerate().flat_map(|(p, &v)| by_point(records, p).map(move |r| (v, f(r)))).collect::<Vec<_>>()
    };
    match name {
        "energy-vs-gammaw" | "energy-vs-Ddes" => XyPlot {
            title: format!("Input energy vs {}", sweep.label),
            x_label: sweep.label.into(),
            y_label: "gamma_e^2".into(),
            x_log: true,
            y_log: true,
            series: vec![Series { name: "gamma_e^2".into(), points: points(&|r| r.energy()), style: SeriesStyle::LineMarkers }],
            reference_lines: vec![],
        }
        .to_svg(),
        "posterior-vs-D0" => {
            let bound = records.first().map_or(1.0, |r| r.goal_bound);
            XyPlot {
                title: "A-posteriori error bound vs prior level".into(),
                x_label: "D0".into(),
                y_label: "||G P||".into(),
                x_log: true,
                y_log: true,
                series: vec![Series { name: "||G P||".into(), points: points(&|r| r.gp_norm), style: SeriesStyle::Markers }],
                reference_lines: vec![(bound, "||D_des^-1||".into())],
            }
            .to_svg()
        }
        "targeted-vs-naive" => XyPlot {
            title: "Targeted vs naive exploration (equal energy)".into(),
            x_label: "D0".into(),
            y_label: "||G P||".into(),
            x_log: true,
            y_log: true,
            series: vec![
                Series { name: "targeted".into(), points: points(&|r| r.gp_norm), style: SeriesStyle::Markers },
                Series { name: "naive".into(), points: points(&|r| r.naive_gp_norm.unwrap_or(f64::NAN)), style: SeriesStyle::Markers },
            ],
            reference_lines: vec![],
        }
        .to_svg(),
        _ => BoxPlot {
            title: "Input energy over random initial estimates".into(),
            x_label: sweep.label.into(),
            y_label: "gamma_e^2".into(),
            y_log: true,
            categories: sweep
                .values
                .iter()
                .enumerate()
                .map(|(p, &v)| (format!("{v:e}"), by_point(records, p).map(TrialRecord::energy).collect()))
                .collect(),
        }
        .to_svg(),
    }
}

/// Least-squares slope of `log y` against `log x` over the positive pairs.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            horizon: 40,
            grid: GridSpec::EquallySpaced { count: 8 },
            prior: PriorSpec { d0: 1e6, recipe: PriorRecipe::BoundaryOffset },
            scenario: ScenarioConfig { sample_count: 20, ..Default::default() },
            certify_samples: 20,
            gamma_w: GammaW::Value(1e-2),
            ..Default::default()
        }
    }

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("schema_version = 1"));
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "schema_version = 1\ngamma_w = \"from-beta\"\n[prior]\nd0 = 1e4\n[prior.recipe]\nkind = \"random\"\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.gamma_w, GammaW::Keyword(GammaWKeyword::FromBeta));
        assert_eq!(cfg.prior.recipe, PriorRecipe::Random { seed: 3 });
        assert_eq!(cfg.horizon, 100);
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let bad = |edit: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            edit(&mut c);
            matches!(c.validate(), Err(Error::Config(_)))
        };
        assert!(bad(|c| c.grid = GridSpec::EquallySpaced { count: 4 }));
        assert!(bad(|c| c.epsilon = 1.0));
        assert!(bad(|c| c.epsilon = 0.0));
        assert!(bad(|c| c.prior.d0 = 0.0));
        assert!(bad(|c| c.d_des = -1.0));
        assert!(bad(|c| c.gamma_w = GammaW::Value(-1.0)));
        assert!(bad(|c| c.schema_version = 2));
        assert!(bad(|c| c.prior.recipe = PriorRecipe::Explicit { theta: vec![0.0; 3] }));
        assert!(matches!(ExperimentConfig::from_toml_str("horizon = 100"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("schema_version = 1\nbogus = 3"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("schema_version = 1\ngamma_w = \"beta\""), Err(Error::Config(_))));
    }

    #[test]
    fn prior_recipes_place_truth_in_prior() {
        let truth = discretize_benchmark(&BenchmarkPlantParams::reference()).unwrap();
        for recipe in [PriorRecipe::BoundaryOffset, PriorRecipe::Random { seed: 1 }, PriorRecipe::Random { seed: 2 }] {
            let th0 = initial_estimate(&recipe, &truth, 1e4).unwrap();
            let prior = ParameterEllipsoid::prior(th0, &(RMat::identity(5, 5) * 1e4), 4).unwrap();
            let q = prior.quadratic_form(&truth.theta()).unwrap();
            assert!(q <= 1.0 + 1e-9, "{recipe:?}: {q}");
            if recipe == PriorRecipe::BoundaryOffset {
                assert!((q - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unknown_study_is_error() {
        let r = run_study("bogus", &ExperimentConfig::default(), None);
        assert!(matches!(r, Err(Error::UnknownStudy(_))));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1e-3, 1e-2, 1e-1].iter().map(|&x: &f64| (x, 3.0 * x.powf(0.9))).collect();
        assert!((log_log_slope(&pts).unwrap() - 0.9).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn pipeline_errors_carry_stage_tags() {
        let mut cfg = small_cfg();
        cfg.epsilon = 2.0;
        let e = execute_pipeline(&cfg).unwrap_err();
        assert!(matches!(e, Error::Stage { stage: "config", .. }));
    }

    #[test]
    fn small_pipeline_runs_and_is_deterministic() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let a = run_pipeline(&cfg, Some(&dir.path().join("a"))).unwrap();
        let b = run_pipeline(&cfg, Some(&dir.path().join("b"))).unwrap();
        assert!(a.gamma_e > 0.0);
        assert!(a.disturbance_within_bound && a.theta_in_set);
        assert!(!a.goal_satisfied || a.gp_norm <= a.goal_bound);
        let ta = std::fs::read(&a.csv_paths[0]).unwrap();
        let tb = std::fs::read(&b.csv_paths[0]).unwrap();
        assert_eq!(ta, tb);
        let text = String::from_utf8(ta).unwrap();
        assert!(text.starts_with("#meta,config_hash="));
        assert!(text.lines().nth(1).unwrap().starts_with("k,x1,x2,x3,x4,u1,w1,w2,w3,w4"));
        let traj = Trajectory::read_csv(&text).unwrap();
        assert_eq!(traj.horizon(), 40);
        let report = std::fs::read_to_string(dir.path().join("a/report.txt")).unwrap();
        assert!(report.contains("||G P||"));
    }

    #[test]
    fn noiseless_plant_needs_no_energy_and_identifies_exactly() {
        let mut cfg = small_cfg();
        cfg.gamma_w = GammaW::Value(0.0);
        let setup = prepare(&cfg).unwrap();
        let design = design_stage(&setup).unwrap();
        assert!(design.design.gamma_e < 1e-6, "gamma_e = {}", design.design.gamma_e);
        // Any exciting input then identifies the plant exactly.
        let probe = naive_design(1e-3, &setup.problem.grid, 1).unwrap();
        let id = experiment_stage(&setup, &probe).unwrap();
        assert_eq!(id.disturbance_energy, 0.0);
        assert!(id.g.abs() < 1e-12);
        assert!((&id.ellipsoid.center - setup.truth.theta()).norm() < 1e-8);
    }
}
