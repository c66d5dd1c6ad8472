//! Linear models, the two-mass spring-damper benchmark, and trajectory simulation.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, RMat, RVec};

/// Tolerance on the unit-circle boundary used by [`LinearModel::is_schur_stable`].
pub const SCHUR_TOLERANCE: f64 = 1e-9;

/// Real discrete-time state-space pair `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    a: RMat,
    b: RMat,
}

impl LinearModel {
    /// Build a model, checking that `A` is square and `B` has matching rows.
    pub fn new(a: RMat, b: RMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!("A is {}x{}, expected square", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!("B has {} rows, A has {}", b.nrows(), a.nrows())));
        }
        Ok(Self { a, b })
    }

    /// Rebuild a model from `θ = vec([A B])` (column-major stacking).
    pub fn from_theta(theta: &RVec, nx: usize, nu: usize) -> Result<Self> {
        if theta.len() != nx * (nx + nu) {
            return Err(Error::DimensionMismatch(format!("θ has length {}, expected n_x·(n_x+n_u) = {}", theta.len(), nx * (nx + nu))));
        }
        let ab = RMat::from_column_slice(nx, nx + nu, theta.as_slice());
        Self::new(ab.columns(0, nx).into_owned(), ab.columns(nx, nu).into_owned())
    }

    /// `θ = vec([A B])`, so that `(φᵀ ⊗ I_{n_x}) θ = A x + B u` for `φ = [x; u]`.
    pub fn theta(&self) -> RVec {
        let mut ab = RMat::zeros(self.nx(), self.nx() + self.nu());
        ab.columns_mut(0, self.nx()).copy_from(&self.a);
        ab.columns_mut(self.nx(), self.nu()).copy_from(&self.b);
        RVec::from_column_slice(ab.as_slice())
    }

    pub fn a(&self) -> &RMat {
        &self.a
    }

    pub fn b(&self) -> &RMat {
        &self.b
    }

    /// State dimension `n_x`.
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `n_u`.
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// Regressor dimension `n_φ = n_x + n_u`.
    pub fn nphi(&self) -> usize {
        self.nx() + self.nu()
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// All eigenvalues of `A` lie strictly inside the unit circle (with margin [`SCHUR_TOLERANCE`]).
    pub fn is_schur_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - SCHUR_TOLERANCE
    }

    /// One step `A x + B u + w`; shared by both simulators so they agree bit-for-bit.
    fn step(&self, x: &RVec, u: &RVec, w: &RVec) -> RVec {
        &self.a * x + &self.b * u + w
    }
}

/// How the disturbance energy bound γ_w relates to the friction magnitudes β_i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceConvention {
    /// `γ_w = T·Ts²·(β1²/m1² + β2²/m2²)`: the exact worst case of the Euler-discretized
    /// friction disturbance that the simulator produces.
    #[default]
    Sampled,
    /// `γ_w = T·(β1²/m1² + β2²/m2²)`: the formula without the sampling period (conservative
    /// by the factor `1/Ts²` for the simulated plant).
    Literal,
}

/// Physical parameters of the two-mass spring-damper chain with Coulomb-like friction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlantParams {
    /// Mass 1 (kg).
    pub m1: f64,
    /// Mass 2 (kg).
    pub m2: f64,
    /// Spring between wall and mass 1 (N/m).
    pub k1: f64,
    /// Spring between the masses (N/m).
    pub k2: f64,
    /// Damper between wall and mass 1 (N·s/m).
    pub d1: f64,
    /// Damper between the masses (N·s/m).
    pub d2: f64,
    /// Friction slope of mass 1 (s/m).
    pub alpha1: f64,
    /// Friction slope of mass 2 (s/m).
    pub alpha2: f64,
    /// Friction magnitude on mass 1 (N).
    pub beta1: f64,
    /// Friction magnitude on mass 2 (N).
    pub beta2: f64,
    /// Sampling period (s).
    pub ts: f64,
}

impl Default for BenchmarkPlantParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl BenchmarkPlantParams {
    /// The reference benchmark: m=(1,2), k=(1,1.5), d=(0.5,1.1), α=(1,1), Ts=0.5, no friction yet.
    pub fn reference() -> Self {
        Self { m1: 1.0, m2: 2.0, k1: 1.0, k2: 1.5, d1: 0.5, d2: 1.1, alpha1: 1.0, alpha2: 1.0, beta1: 0.0, beta2: 0.0, ts: 0.5 }
    }

    /// Check the physical admissibility of the parameters.
    pub fn validate(&self) -> Result<()> {
        let positive = [("m1", self.m1), ("m2", self.m2), ("ts", self.ts)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Worst-case disturbance energy `Σ‖w_k‖²` over `T` steps under the given convention.
    pub fn gamma_w_bound(&self, horizon: usize, convention: DisturbanceConvention) -> f64 {
        let per_step = (self.beta1 / self.m1).powi(2) + (self.beta2 / self.m2).powi(2);
        let ts2 = match convention {
            DisturbanceConvention::Sampled => self.ts * self.ts,
            DisturbanceConvention::Literal => 1.0,
        };
        horizon as f64 * ts2 * per_step
    }

    /// Copy of the parameters with `β1 = β2 = β` chosen so that
    /// [`gamma_w_bound`](Self::gamma_w_bound) equals `gamma_w`.
    pub fn with_gamma_w(&self, gamma_w: f64, horizon: usize, convention: DisturbanceConvention) -> Result<Self> {
        if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma_w must be non-negative, got {gamma_w}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        self.validate()?;
        let ts = match convention {
            DisturbanceConvention::Sampled => self.ts,
            DisturbanceConvention::Literal => 1.0,
        };
        let beta = self.m1 * self.m2 * gamma_w.sqrt() / (ts * (horizon as f64 * (self.m1 * self.m1 + self.m2 * self.m2)).sqrt());
        Ok(Self { beta1: beta, beta2: beta, ..self.clone() })
    }

    /// Friction-induced disturbance `w(x)` of the Euler-discretized plant.
    pub fn disturbance(&self, x: &RVec) -> RVec {
        let mut w = RVec::zeros(4);
        w[1] = self.ts * self.beta1 * (self.alpha1 * x[1]).tanh() / self.m1;
        w[3] = self.ts * self.beta2 * (self.alpha2 * x[3]).tanh() / self.m2;
        w
    }
}

/// Forward-Euler discretization of the linear part of the benchmark, state `[p1, ṗ1, p2, ṗ2]`,
/// force input on mass 2.
pub fn discretize_benchmark(p: &BenchmarkPlantParams) -> Result<LinearModel> {
    p.validate()?;
    let ts = p.ts;
    let a = RMat::from_row_slice(
        4,
        4,
        &[
            1.0,
            ts,
            0.0,
            0.0,
            -ts * (p.k1 + p.k2) / p.m1,
            1.0 - ts * (p.d1 + p.d2) / p.m1,
            ts * p.k2 / p.m1,
            ts * p.d2 / p.m1,
            0.0,
            0.0,
            1.0,
            ts,
            ts * p.k2 / p.m2,
            ts * p.d2 / p.m2,
            -ts * p.k2 / p.m2,
            1.0 - ts * p.d2 / p.m2,
        ],
    );
    let b = RMat::from_column_slice(4, 1, &[0.0, 0.0, 0.0, ts / p.m2]);
    LinearModel::new(a, b)
}

/// State, input and disturbance sequences of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 … x_T`.
    pub states: Vec<RVec>,
    /// `u_0 … u_{T−1}`.
    pub inputs: Vec<RVec>,
    /// `w_0 … w_{T−1}`.
    pub disturbances: Vec<RVec>,
}

impl Trajectory {
    /// Build a trajectory, checking sequence lengths and vector dimensions.
    pub fn new(states: Vec<RVec>, inputs: Vec<RVec>, disturbances: Vec<RVec>) -> Result<Self> {
        let t = inputs.len();
        if states.len() != t + 1 || disturbances.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "trajectory lengths (states {}, inputs {}, disturbances {}) must be (T+1, T, T)",
                states.len(),
                inputs.len(),
                disturbances.len()
            )));
        }
        let nx = states[0].len();
        let nu = inputs.first().map_or(0, |u| u.len());
        if states.iter().any(|x| x.len() != nx) || disturbances.iter().any(|w| w.len() != nx) || inputs.iter().any(|u| u.len() != nu) {
            return Err(Error::DimensionMismatch("inconsistent vector lengths in trajectory".into()));
        }
        Ok(Self { states, inputs, disturbances })
    }

    /// Horizon `T` (number of transitions).
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn nx(&self) -> usize {
        self.states[0].len()
    }

    pub fn nu(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    /// `max_k ‖x_{k+1} − A x_k − B u_k − w_k‖`.
    pub fn recursion_residual(&self, model: &LinearModel) -> f64 {
        (0..self.horizon())
            .map(|k| {
                let pred = &model.a * &self.states[k] + &model.b * &self.inputs[k] + &self.disturbances[k];
                (&self.states[k + 1] - pred).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Write the trajectory as CSV with header `k,x1..xn,u1..um,w1..wn`.
    /// The final row (k = T) carries the terminal state and empty input/disturbance fields.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let (nx, nu) = (self.nx(), self.nu());
        let mut header = vec!["k".to_string()];
        header.extend((1..=nx).map(|i| format!("x{i}")));
        header.extend((1..=nu).map(|i| format!("u{i}")));
        header.extend((1..=nx).map(|i| format!("w{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..=self.horizon() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(|v| format!("{v:e}")));
            if k < self.horizon() {
                row.extend(self.inputs[k].iter().map(|v| format!("{v:e}")));
                row.extend(self.disturbances[k].iter().map(|v| format!("{v:e}")));
            } else {
                row.extend(std::iter::repeat(String::new()).take(nu + nx));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    }

    /// Parse a trajectory written by [`write_csv`](Self::write_csv).
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config("empty trajectory CSV".into()))?.split(',').collect();
        let nx = header.iter().filter(|h| h.starts_with('x')).count();
        let nu = header.iter().filter(|h| h.starts_with('u')).count();
        if header.first() != Some(&"k") || nx == 0 || header.len() != 1 + 2 * nx + nu {
            return Err(Error::Config("trajectory CSV header must be k,x1..xn,u1..um,w1..wn".into()));
        }
        let parse = |s: &str| -> Result<f64> { s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number '{s}': {e}"))) };
        let (mut states, mut inputs, mut dists) = (Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(Error::Config(format!("row has {} fields, expected {}", f.len(), header.len())));
            }
            states.push(RVec::from_iterator(nx, f[1..1 + nx].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?));
            if f[1 + nx].trim().is_empty() {
                break;
            }
            inputs.push(RVec::from_iterator(nu, f[1 + nx..1 + nx + nu].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?));
            dists.push(RVec::from_iterator(nx, f[1 + nx + nu..].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?));
        }
        Trajectory::new(states, inputs, dists)
    }
}

fn check_sequences(model: &LinearModel, inputs: &[RVec], x0: &RVec) -> Result<()> {
    if x0.len() != model.nx() {
        return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {}", x0.len(), model.nx())));
    }
    if let Some(bad) = inputs.iter().find(|u| u.len() != model.nu()) {
        return Err(Error::DimensionMismatch(format!("input has length {}, expected {}", bad.len(), model.nu())));
    }
    Ok(())
}

/// Simulate `x_{k+1} = A x_k + B u_k + w_k` from `x0`.
pub fn simulate_linear(model: &LinearModel, inputs: &[RVec], disturbances: &[RVec], x0: &RVec) -> Result<Trajectory> {
    check_sequences(model, inputs, x0)?;
    if disturbances.len() != inputs.len() {
        return Err(Error::DimensionMismatch(format!("{} disturbances for {} inputs", disturbances.len(), inputs.len())));
    }
    if let Some(bad) = disturbances.iter().find(|w| w.len() != model.nx()) {
        return Err(Error::DimensionMismatch(format!("disturbance has length {}, expected {}", bad.len(), model.nx())));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (u, w) in inputs.iter().zip(disturbances) {
        let next = model.step(states.last().expect("non-empty"), u, w);
        states.push(next);
    }
    Trajectory::new(states, inputs.to_vec(), disturbances.to_vec())
}

/// Simulate the full nonlinear Euler map of the benchmark. The friction terms are recorded as
/// disturbances so that [`simulate_linear`] with [`discretize_benchmark`] reproduces the states.
pub fn simulate_nonlinear_benchmark(params: &BenchmarkPlantParams, inputs: &[RVec], x0: &RVec) -> Result<Trajectory> {
    let model = discretize_benchmark(params)?;
    check_sequences(&model, inputs, x0)?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut disturbances = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    for u in inputs {
        let x = states.last().expect("non-empty");
        let w = params.disturbance(x);
        let next = model.step(x, u, &w);
        disturbances.push(w);
        states.push(next);
    }
    Trajectory::new(states, inputs.to_vec(), disturbances)
}

/// Initial state that makes a linear simulation exactly `T`-periodic (`x_T = x_0`), i.e.
/// `x_0 = (I − A^T)⁻¹ Σ_k A^{T−1−k}(B u_k + w_k)`. With it, spectral lines of the data carry no
/// transient error.
pub fn periodic_initial_state(model: &LinearModel, inputs: &[RVec], disturbances: &[RVec]) -> Result<RVec> {
    let nx = model.nx();
    let zero = simulate_linear(model, inputs, disturbances, &RVec::zeros(nx))?;
    let mut a_t = RMat::identity(nx, nx);
    for _ in 0..inputs.len() {
        a_t = &model.a * a_t;
    }
    let lhs = RMat::identity(nx, nx) - a_t;
    lhs.lu().solve(zero.states.last().expect("non-empty")).ok_or_else(|| Error::NumericalSingularity("I − A^T is singular".into()))
}

/// Disturbance energy `Σ_k ‖w_k‖²`.
pub fn disturbance_energy(traj: &Trajectory) -> f64 {
    traj.disturbances.iter().map(|w| w.norm_squared()).sum()
}

/// Convenience: scalar-input sequence from a slice.
pub fn scalar_inputs(values: &[f64]) -> Vec<RVec> {
    values.iter().map(|&v| DVector::from_element(1, v)).collect()
}
