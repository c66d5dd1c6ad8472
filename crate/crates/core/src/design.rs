//! Minimum-energy robust exploration design: problem data, the SDP solve, the iterative
//! candidate refinement, the naive baseline, and sampled certification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cmax_abs, kron_identity_right, min_eigenvalue_herm, scalar_identity_level, to_complex, CMat, RMat, RVec, C64};
use crate::lmi::{build_energy_lmi, build_exploration_lmis, r_full, AffineLmi, DesignVariables, ExplorationLmis};
use crate::plant::LinearModel;
use crate::sdp::{ConicSolver, InteriorPointSolver, SdpProblem, SdpSolution, SdpStatus};
use crate::setmem::ParameterEllipsoid;
use crate::spectral::{
    assemble_spectral, transfer_blocks, z_bar_direct, ExplorationInputSpec, FrequencyGrid, TransferBlocks, ZLineConvention,
};
use crate::uncertainty::{sample_prior, UncertaintyBounds};

/// Default convergence tolerance on the relative change of `γ_e`.
pub const DEFAULT_TOL: f64 = 1e-3;
/// Default iteration limit.
pub const DEFAULT_MAX_ITER: usize = 20;
/// Post-solve residual tolerance (relative to the LMI scale).
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;
/// Certification tolerance (relative to the matrix scale).
pub const CERTIFY_TOLERANCE: f64 = 1e-7;
/// Largest number of scalar variables accepted for the unfactored formulation.
pub const MAX_FULL_VARIABLES: usize = 6000;

/// Data of the exploration SDP: settings, nominal model, uncertainty caps and the current
/// linearization candidates `(Û, Ẑ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationProblem {
    pub epsilon: f64,
    pub gamma_w: f64,
    pub horizon: usize,
    pub grid: FrequencyGrid,
    pub d_des: RMat,
    pub bounds: UncertaintyBounds,
    /// Transfer blocks of the nominal model `θ̂_0`.
    pub nominal: TransferBlocks,
    /// Prior set `Θ_0`, sampled by [`certify_design`].
    pub prior: ParameterEllipsoid,
    pub convention: ZLineConvention,
    /// Candidate `Û` (`L n_u × L`).
    pub u_hat: RMat,
    /// Candidate `Ẑ` (`(n_φ + n_x n_φ²) × n_x n_φ L`), always consistent with `u_hat`.
    pub z_hat: CMat,
}

impl ExplorationProblem {
    /// Build the problem and seed the candidates with the naive uniform design at energy
    /// `seed_gamma_e` (default `10·√γ_w`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nominal_model: &LinearModel,
        prior: ParameterEllipsoid,
        grid: FrequencyGrid,
        bounds: UncertaintyBounds,
        d_des: RMat,
        epsilon: f64,
        gamma_w: f64,
        convention: ZLineConvention,
        seed_gamma_e: Option<f64>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma_w must be non-negative, got {gamma_w}")));
        }
        let (nx, nu) = (nominal_model.nx(), nominal_model.nu());
        grid.validate_for(nx, nu)?;
        if d_des.shape() != (nx + nu, nx + nu) {
            return Err(Error::DimensionMismatch(format!("D_des is {:?}, expected n_φ × n_φ", d_des.shape())));
        }
        crate::linalg::cholesky_upper(&d_des)?;
        if prior.dim() != nx * (nx + nu) {
            return Err(Error::DimensionMismatch("prior dimension does not match the nominal model".into()));
        }
        check_bounds(&bounds, nx, nu, grid.len())?;
        let nominal = transfer_blocks(nominal_model, &grid)?;
        let seed = seed_gamma_e.unwrap_or(10.0 * gamma_w.sqrt());
        if !(seed >= 0.0 && seed.is_finite()) {
            return Err(Error::InvalidParameter(format!("seed energy must be non-negative, got {seed}")));
        }
        let u_hat = naive_design(seed, &grid, nu)?.u_e();
        let horizon = grid.horizon();
        let mut p = Self {
            epsilon,
            gamma_w,
            horizon,
            grid,
            d_des,
            bounds,
            nominal,
            prior,
            convention,
            u_hat: u_hat.clone(),
            z_hat: CMat::zeros(0, 0),
        };
        p.z_hat = p.candidate_z(&u_hat)?;
        Ok(p)
    }

    /// Copy with the transfer-uncertainty caps `Γ̃_φ, Γ̃_x` multiplied by `s ≥ 0`; the
    /// disturbance-level bounds are unchanged.
    pub fn with_scaled_caps(&self, s: f64) -> ExplorationProblem {
        let mut p = self.clone();
        p.bounds.gamma_tilde_phi *= C64::new(s, 0.0);
        p.bounds.gamma_tilde_x *= C64::new(s, 0.0);
        p
    }

    pub fn nx(&self) -> usize {
        self.nominal.nx()
    }

    pub fn nu(&self) -> usize {
        self.nominal.nu()
    }

    fn spec_of(&self, u_e: &RMat) -> Result<ExplorationInputSpec> {
        let ones = RVec::from_element(self.grid.len(), 1.0);
        ExplorationInputSpec::from_stacked(self.grid.clone(), &(u_e * ones), self.nu())
    }

    /// Candidate `Ẑ = [D^{1/2ᵀ}((1ᵀÛᵀV̂_zᴴ) ⊗ I_{n_φ}); (V̂_φÛ) ⊗ I_{n_x n_φ}]`.
    pub fn candidate_z(&self, u_hat: &RMat) -> Result<CMat> {
        z_bar_direct(&self.nominal, &self.spec_of(u_hat)?, &self.d_des, self.convention)
    }

    /// Replace the candidates by `(Û, Ẑ(Û))`.
    pub fn set_candidates(&mut self, u_hat: RMat) -> Result<()> {
        if u_hat.shape() != (self.grid.len() * self.nu(), self.grid.len()) {
            return Err(Error::DimensionMismatch("Û must be L n_u × L".into()));
        }
        self.z_hat = self.candidate_z(&u_hat)?;
        self.u_hat = u_hat;
        Ok(())
    }

    /// Factored candidate `Ẑ_f = [√c·1ᵀÛᵀV̂_zᴴ; (V̂_φÛ) ⊗ I_{n_x}]` with `Ẑ = Ẑ_f ⊗ I_{n_φ}`
    /// (requires `D_des = c·I`).
    pub fn z_hat_factored(&self) -> Result<CMat> {
        let c =
            scalar_identity_level(&self.d_des).ok_or_else(|| Error::InvalidParameter("factored candidate requires D_des = c·I".into()))?;
        let nx = self.nx();
        let nphi = self.nominal.nphi();
        let u = to_complex(&self.u_hat);
        let ones = crate::linalg::CVec::from_element(self.grid.len(), C64::new(1.0, 0.0));
        let xz = self.nominal.vz(self.convention) * &u * &ones;
        let phi_u = self.nominal.vphi() * &u;
        let bottom = kron_identity_right(&phi_u, nx);
        let mut z = CMat::zeros(1 + nphi * nx, xz.len());
        for (j, v) in xz.iter().enumerate() {
            z[(0, j)] = v.conj() * c.sqrt();
        }
        z.view_mut((1, 0), bottom.shape()).copy_from(&bottom);
        Ok(z)
    }

    /// Cap on `Ṽ_zṼ_zᴴ`: `Γ̃_x` itself, or `conj(P Γ̃_x Pᴴ)` with `P = diag(e^{j2πω_i} I)` under
    /// the forward-shifted convention.
    pub fn gamma_tilde_z(&self) -> CMat {
        let g = &self.bounds.gamma_tilde_x;
        match self.convention {
            ZLineConvention::AsPrinted => g.clone(),
            ZLineConvention::ForwardShifted => {
                let nx = self.nx();
                CMat::from_fn(g.nrows(), g.ncols(), |r, c| (self.grid.phase(r / nx) * g[(r, c)] * self.grid.phase(c / nx).conj()).conj())
            }
        }
    }

    /// Whether the τ-weighted S-procedure form is needed for `(S_exp-1, S_exp-2, S_exp-3)`:
    /// with an exactly zero cap the τ-free nominal LMI is used instead.
    pub fn tau_layout(&self) -> [bool; 3] {
        let x = cmax_abs(&self.bounds.gamma_tilde_x) > 0.0;
        let phi = cmax_abs(&self.bounds.gamma_tilde_phi) > 0.0;
        [x, phi, phi]
    }

    /// Total scalar variables of a formulation.
    pub fn variable_count(&self, factored: bool) -> usize {
        self.layout(factored).total
    }

    fn layout(&self, factored: bool) -> DesignVariables {
        let nx = self.nx();
        let nphi = self.nominal.nphi();
        let (dim, kron) = if factored { (1 + nx * nphi, nphi) } else { (r_full(nx, nphi), 1) };
        DesignVariables::new(self.grid.len() * self.nu(), self.tau_layout(), dim, kron)
    }
}

fn check_bounds(b: &UncertaintyBounds, nx: usize, nu: usize, l: usize) -> Result<()> {
    let nphi = nx + nu;
    let ok =
        b.gamma_tilde_phi.shape() == (nphi, nphi) && b.gamma_tilde_x.shape() == (nx * l, nx * l) && b.w_phi_bar.shape() == (nphi, nphi);
    if !ok {
        return Err(Error::DimensionMismatch("uncertainty bounds do not match the problem dimensions".into()));
    }
    for (name, m) in [("Γ̃_φ", &b.gamma_tilde_phi), ("Γ̃_x", &b.gamma_tilde_x), ("W̄_φ", &b.w_phi_bar)] {
        let asym = crate::linalg::hermitian_asymmetry(m);
        if asym > 1e-10 * cmax_abs(m).max(1.0) {
            return Err(Error::NonHermitian { asymmetry: asym });
        }
        if min_eigenvalue_herm(m) < -1e-12 * cmax_abs(m).max(1.0) {
            return Err(Error::InvalidParameter(format!("{name} is not positive semidefinite")));
        }
    }
    if !(b.w_z_scalar >= 0.0) {
        return Err(Error::InvalidParameter("w_Z must be non-negative".into()));
    }
    Ok(())
}

/// Which coordinate system the exploration LMIs are assembled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Factored when `D_des = c·I`, full otherwise.
    #[default]
    Auto,
    /// Identity factor removed (`D_des = c·I` required).
    Factored,
    /// Full `n_φ + n_x n_φ²` dimensional D̄ variables.
    Full,
}

/// Solver and formulation choices for the design step.
#[derive(Clone)]
pub struct DesignOptions {
    pub formulation: Formulation,
    /// Average the amplitudes of conjugate frequency pairs after each solve (only applied on
    /// conjugate-closed grids, where it preserves feasibility).
    pub symmetrize_pairs: bool,
    /// How [`iterate_design_with`] chooses the first linearization candidates.
    pub seed: CandidateSeed,
    pub solver: std::sync::Arc<dyn ConicSolver>,
}

/// First linearization candidates of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSeed {
    /// Use the candidates stored in the problem (naive uniform design unless replaced).
    Problem,
    /// First iterate the problem with the transfer-uncertainty caps set to zero (noise
    /// bounds kept) to convergence, and linearize the robust problem around that design.
    /// With model uncertainty the robust iteration need not contract; the nominal optimum
    /// is the linearization point that makes a single robust step tight in the scalar case.
    #[default]
    Nominal,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            formulation: Formulation::Auto,
            symmetrize_pairs: true,
            seed: CandidateSeed::Nominal,
            solver: std::sync::Arc::new(InteriorPointSolver::default()),
        }
    }
}

impl std::fmt::Debug for DesignOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DesignOptions")
            .field("formulation", &self.formulation)
            .field("symmetrize_pairs", &self.symmetrize_pairs)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Result of the exploration design.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationDesign {
    /// Solved amplitudes `U_e*`.
    pub spec: ExplorationInputSpec,
    pub gamma_e: f64,
    /// `τ_1, τ_2, τ_3` (zero where the nominal τ-free LMI was used).
    pub taus: [f64; 3],
    /// `D̄_1, D̄_2, D̄_3` in full coordinates.
    pub d_bars: [RMat; 3],
    pub iterations: usize,
    /// `γ_e` of every solve, in order.
    pub history: Vec<f64>,
    pub converged: bool,
    /// The candidates `(Û, Ẑ)` the final solve was linearized around.
    pub u_hat: RMat,
    pub z_hat: CMat,
    pub factored: bool,
    /// Min-eigenvalue of each LMI at the returned point.
    pub lmi_min_eigenvalues: Vec<(String, f64)>,
    pub solver_status: SdpStatus,
    pub solve_seconds: f64,
}

/// Serializable design record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub omegas: Vec<f64>,
    pub amplitudes: Vec<Vec<f64>>,
    pub gamma_e: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DesignRecord {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The input specification on a horizon-`T` grid.
    pub fn to_spec(&self, horizon: usize) -> Result<ExplorationInputSpec> {
        let grid = FrequencyGrid::from_omegas(&self.omegas, horizon)?;
        let amps = self.amplitudes.iter().map(|a| RVec::from_column_slice(a)).collect();
        ExplorationInputSpec::new(grid, amps)
    }
}

impl ExplorationDesign {
    pub fn energy(&self) -> f64 {
        self.gamma_e * self.gamma_e
    }

    pub fn to_record(&self) -> DesignRecord {
        DesignRecord {
            omegas: self.spec.grid.omegas(),
            amplitudes: self.spec.amplitudes.iter().map(|a| a.iter().copied().collect()).collect(),
            gamma_e: self.gamma_e,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// TOML text of [`DesignRecord`].
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_record()).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Uniform design: `ū(ω_i) = (γ_e/√(L n_u))·1`, total energy `γ_e²`.
pub fn naive_design(gamma_e: f64, grid: &FrequencyGrid, nu: usize) -> Result<ExplorationInputSpec> {
    if !(gamma_e >= 0.0 && gamma_e.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma_e must be non-negative, got {gamma_e}")));
    }
    if nu == 0 {
        return Err(Error::InvalidParameter("n_u must be positive".into()));
    }
    let a = gamma_e / ((grid.len() * nu) as f64).sqrt();
    ExplorationInputSpec::new(grid.clone(), vec![RVec::from_element(nu, a); grid.len()])
}

/// Assembled SDP together with its variable layout and LMIs.
#[derive(Debug, Clone)]
pub struct AssembledSdp {
    pub vars: DesignVariables,
    pub energy: AffineLmi,
    pub lmis: ExplorationLmis,
    pub sdp: SdpProblem,
}

impl AssembledSdp {
    pub fn all_lmis(&self) -> Vec<&AffineLmi> {
        let mut v = vec![&self.energy];
        v.extend(self.lmis.all());
        v
    }
}

fn resolve_formulation(prob: &ExplorationProblem, f: Formulation) -> Result<bool> {
    let scalar = scalar_identity_level(&prob.d_des).is_some();
    match f {
        Formulation::Auto => Ok(scalar),
        Formulation::Factored if !scalar => Err(Error::InvalidParameter("the factored formulation requires D_des = c·I".into())),
        Formulation::Factored => Ok(true),
        Formulation::Full => Ok(false),
    }
}

/// Build the exploration SDP: minimize `γ_e` subject to the energy LMI, S_exp-1..3, the coupling
/// constraint and `τ_i ≥ 0`.
pub fn assemble_sdp(prob: &ExplorationProblem, formulation: Formulation) -> Result<AssembledSdp> {
    let factored = resolve_formulation(prob, formulation)?;
    let vars = prob.layout(factored);
    if !factored && vars.total > MAX_FULL_VARIABLES {
        return Err(Error::InvalidParameter(format!(
            "the unfactored formulation needs {} variables (limit {MAX_FULL_VARIABLES}); use D_des = c·I",
            vars.total
        )));
    }
    let energy = build_energy_lmi(&vars.u, vars.gamma_e);
    let lmis = build_exploration_lmis(prob, &vars, factored)?;
    let mut sdp = SdpProblem::new(vars.total);
    sdp.objective[vars.gamma_e] = 1.0;
    sdp.blocks.push(energy.to_sdp_block()?);
    for l in lmis.all() {
        sdp.blocks.push(l.to_sdp_block()?);
    }
    for (k, t) in vars.tau.iter().enumerate() {
        if let Some(t) = t {
            sdp.add_nonnegative(*t, &format!("τ_{}", k + 1));
        }
    }
    Ok(AssembledSdp { vars, energy, lmis, sdp })
}

fn min_eigs(asm: &AssembledSdp, y: &RVec) -> Vec<(String, f64, f64)> {
    asm.all_lmis().iter().map(|l| (l.name.clone(), l.min_eigenvalue(y), l.scale(y))).collect()
}

fn residuals_ok(checks: &[(String, f64, f64)]) -> bool {
    checks.iter().all(|(_, e, s)| *e >= -RESIDUAL_TOLERANCE * s)
}

fn map_failure(sol: &SdpSolution) -> Error {
    match sol.status {
        SdpStatus::Infeasible => {
            let lmi = sol.infeasibility_blocks.first().map(|b| b.0.clone()).unwrap_or_else(|| "unknown".into());
            let detail = sol
                .infeasibility_blocks
                .iter()
                .filter(|b| b.1 > 1e-3)
                .map(|(n, s)| format!("{n}: {:.1}%", 100.0 * s))
                .collect::<Vec<_>>()
                .join(", ");
            Error::Infeasible {
                lmi,
                detail: format!("certificate shares [{detail}]; the prior uncertainty is likely too large for a robust design"),
            }
        }
        SdpStatus::Unbounded => Error::Unbounded("exploration SDP is unbounded (construction error)".into()),
        s => Error::SolverFailure(format!(
            "solver stopped with {s:?} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
            sol.iterations, sol.primal_infeasibility, sol.dual_infeasibility, sol.relative_gap
        )),
    }
}

/// One solve of the exploration SDP with the default solver.
pub fn solve_exploration_sdp(prob: &ExplorationProblem) -> Result<ExplorationDesign> {
    solve_exploration_sdp_with(prob, &DesignOptions::default())
}

/// One solve of the exploration SDP.
pub fn solve_exploration_sdp_with(prob: &ExplorationProblem, opts: &DesignOptions) -> Result<ExplorationDesign> {
    let asm = assemble_sdp(prob, opts.formulation)?;
    let sol = opts.solver.solve(&asm.sdp)?;
    if !matches!(sol.status, SdpStatus::Optimal | SdpStatus::Inaccurate) {
        return Err(map_failure(&sol));
    }
    let vars = &asm.vars;
    let mut y = sol.y.clone();
    let nu = prob.nu();
    let stacked = RVec::from_iterator(vars.u.len(), vars.u.iter().map(|&i| y[i]));
    let mut spec = ExplorationInputSpec::from_stacked(prob.grid.clone(), &stacked, nu)?;
    let mut checks = min_eigs(&asm, &y);
    if !residuals_ok(&checks) {
        let worst = checks.iter().min_by(|a, b| (a.1 / a.2).total_cmp(&(b.1 / b.2))).expect("at least one LMI");
        return Err(Error::SolverFailure(format!(
            "residual check failed: {} has min-eig {:.3e} (scale {:.3e})",
            worst.0, worst.1, worst.2
        )));
    }
    if opts.symmetrize_pairs && prob.grid.is_conjugate_closed() {
        let mut sym = spec.clone();
        sym.symmetrize_conjugate_pairs();
        let mut ys = y.clone();
        for (k, v) in sym.stacked().iter().enumerate() {
            ys[vars.u[k]] = *v;
        }
        let sym_checks = min_eigs(&asm, &ys);
        if residuals_ok(&sym_checks) {
            spec = sym;
            y = ys;
            checks = sym_checks;
        } else {
            log::warn!("pair-symmetrized amplitudes fail the residual check; keeping the raw solution");
        }
    } else if !prob.grid.is_conjugate_closed() {
        log::warn!("frequency grid is not conjugate-closed; realized spectral lines differ from the design amplitudes");
    }
    let taus = [0, 1, 2].map(|k| vars.tau[k].map_or(0.0, |i| y[i]));
    let d_bars = [0, 1, 2].map(|k| vars.dbar[k].full(&y));
    let gamma_e = y[vars.gamma_e].max(spec.energy().sqrt());
    Ok(ExplorationDesign {
        spec,
        gamma_e,
        taus,
        d_bars,
        iterations: 1,
        history: vec![gamma_e],
        converged: false,
        u_hat: prob.u_hat.clone(),
        z_hat: prob.z_hat.clone(),
        factored: asm.lmis.factored,
        lmi_min_eigenvalues: checks.into_iter().map(|(n, e, _)| (n, e)).collect(),
        solver_status: sol.status,
        solve_seconds: sol.seconds,
    })
}

/// The iterative design (re-linearize at the latest design until `γ_e` settles) with the default solver.
pub fn iterate_design(prob: &ExplorationProblem, tol: f64, max_iter: usize) -> Result<ExplorationDesign> {
    iterate_design_with(prob, tol, max_iter, &DesignOptions::default())
}

/// Solve, update `(Û, Ẑ)` from the solution, and repeat until the relative change of `γ_e`
/// drops below `tol`, `γ_e` rises above the best iterate by more than `tol` (the robust
/// iteration is not monotone), or `max_iter` solves were made. Every iterate is a valid
/// robust design (the linearization is a lower bound for any candidate), so the iterate with
/// the smallest `γ_e` is returned.
///
/// An infeasible first solve is an error; a failure in a later iteration returns the best
/// design so far with `converged = false`.
pub fn iterate_design_with(prob: &ExplorationProblem, tol: f64, max_iter: usize, opts: &DesignOptions) -> Result<ExplorationDesign> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if opts.seed == CandidateSeed::Problem || !prob.tau_layout().iter().any(|&t| t) {
        return iterate_plain(prob, tol, max_iter, opts);
    }
    let inner = DesignOptions { seed: CandidateSeed::Problem, ..opts.clone() };
    let seed_design = iterate_plain(&scaled_caps(prob, 0.0), tol.max(SEED_TOL), max_iter, &inner)?;
    log::info!("nominal seed: gamma_e = {:.6e} after {} solves", seed_design.gamma_e, seed_design.iterations);
    let mut current = prob.clone();
    current.set_candidates(seed_design.spec.u_e())?;
    iterate_plain(&current, tol, max_iter, &inner)
}

/// Convergence tolerance of the nominal seeding phase (the seed only needs to be close).
pub const SEED_TOL: f64 = 1e-2;

/// Copy of `prob` with the transfer-uncertainty caps multiplied by `s`.
fn scaled_caps(prob: &ExplorationProblem, s: f64) -> ExplorationProblem {
    prob.with_scaled_caps(s)
}

fn iterate_plain(prob: &ExplorationProblem, tol: f64, max_iter: usize, opts: &DesignOptions) -> Result<ExplorationDesign> {
    let mut current = prob.clone();
    let mut history = Vec::new();
    let mut best: Option<ExplorationDesign> = None;
    let finish = |mut b: ExplorationDesign, history: Vec<f64>, converged: bool| {
        b.converged = converged;
        b.history = history;
        b
    };
    for it in 1..=max_iter {
        let mut design = match solve_exploration_sdp_with(&current, opts) {
            Ok(d) => d,
            Err(e) if best.is_some() => {
                log::warn!("iteration {it} failed ({e}); returning the best design so far");
                return Ok(finish(best.take().expect("checked"), history, false));
            }
            Err(e) => return Err(e),
        };
        history.push(design.gamma_e);
        log::info!("design iteration {it}: gamma_e = {:.6e}", design.gamma_e);
        log::debug!("amplitudes {:?}", design.spec.stacked().iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        design.iterations = it;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let converged = match history.len() {
            0 | 1 => false,
            n => {
                let (prev, now) = (history[n - 2], history[n - 1]);
                rel(prev, now) < tol || (prev == 0.0 && now == 0.0)
            }
        };
        current.set_candidates(design.spec.u_e())?;
        let best_gamma = best.as_ref().map_or(f64::INFINITY, |b| b.gamma_e);
        if converged {
            let pick = if design.gamma_e <= best_gamma { design } else { best.take().expect("finite best") };
            return Ok(finish(pick, history, true));
        }
        if design.gamma_e > best_gamma * (1.0 + tol) {
            log::info!("gamma_e rose above the best iterate; stopping");
            return Ok(finish(best.take().expect("finite best"), history, false));
        }
        if design.gamma_e <= best_gamma {
            best = Some(design);
        }
    }
    Ok(finish(best.expect("max_iter ≥ 1"), history, false))
}

/// Outcome of sampled certification.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub passed: bool,
    pub samples_checked: usize,
    pub samples_skipped: usize,
    /// Worst relative min-eigenvalue of (46a), (46b), (46c) over the samples.
    pub worst_margins: [f64; 3],
}

/// Default seed used by [`certify_design`].
pub const CERTIFY_SEED: u64 = 0x5eed_0046;

/// Check the pre-S-lemma inequalities on `n_samples` points of `Θ_0` (see
/// [`certify_design_report`]).
pub fn certify_design(design: &ExplorationDesign, prob: &ExplorationProblem, n_samples: usize) -> bool {
    certify_design_report(design, prob, n_samples, CERTIFY_SEED).map(|r| r.passed).unwrap_or(false)
}

/// For each sampled `θ ∈ Θ_0` (boundary points plus the center; samples whose resolvent
/// is singular on the grid are skipped), build the true `V_x, V_φ` and check, with the design's `D̄_i`,
///
/// * (46a) `(1−ε)(Z̄_{u,1}Ẑᴴ + ẐZ̄_{u,1}ᴴ) − D̄_1 ⪰ 0`
/// * (46b) `(1−ε)(Z̄_{u,2}Ẑᴴ + ẐZ̄_{u,2}ᴴ − ẐẐᴴ) − ((1−ε)/ε)W̄_Z − D̄_2 ⪰ 0`
/// * (46c) `blkdiag((1−ε)Φ̄_uΦ̄_uᴴ − ((1−ε)/ε)W̄_φ − (γ_w/T)D_des, 0) − D̄_3 ⪰ 0`
///
/// each to `min-eig ≥ −1e-7·scale`.
pub fn certify_design_report(
    design: &ExplorationDesign,
    prob: &ExplorationProblem,
    n_samples: usize,
    seed: u64,
) -> Result<CertificationReport> {
    let (nx, nu) = (prob.nx(), prob.nu());
    let eps = prob.epsilon;
    let one_m = C64::new(1.0 - eps, 0.0);
    let r = r_full(nx, nx + nu);
    let nphi = nx + nu;
    let zh = &design.z_hat;
    if zh.nrows() != r || design.d_bars.iter().any(|d| d.shape() != (r, r)) {
        return Err(Error::DimensionMismatch("design does not match the problem".into()));
    }
    let d = design.d_bars.clone().map(|m| to_complex(&m));
    let zzh = zh * zh.adjoint();
    let w_z = (1.0 - eps) / eps * prob.bounds.w_z_scalar;
    let c3 = -(&prob.bounds.w_phi_bar * C64::new((1.0 - eps) / eps, 0.0))
        - to_complex(&prob.d_des) * C64::new(prob.gamma_w / prob.horizon as f64, 0.0);
    let samples = if prob.prior.radius == 0.0 { vec![prob.prior.center.clone()] } else { sample_prior(&prob.prior, n_samples, seed)? };
    let mut report = CertificationReport { passed: true, samples_checked: 0, samples_skipped: 0, worst_margins: [f64::INFINITY; 3] };
    for theta in &samples {
        let model = LinearModel::from_theta(theta, nx, nu)?;
        let blocks = match transfer_blocks(&model, &prob.grid) {
            Ok(b) => b,
            _ => {
                report.samples_skipped += 1;
                continue;
            }
        };
        let asm = assemble_spectral(&blocks, &design.spec, &prob.d_des, prob.convention)?;
        let a1 = &asm.zu1 * zh.adjoint();
        let m1 = (&a1 + a1.adjoint()) * one_m - &d[0];
        let a2 = &asm.zu2 * zh.adjoint();
        let mut m2 = (&a2 + a2.adjoint() - &zzh) * one_m - &d[1];
        for i in 0..r {
            m2[(i, i)] -= C64::new(w_z, 0.0);
        }
        let mut m3 = -d[2].clone();
        let top = &asm.phi_u * asm.phi_u.adjoint() * one_m + &c3;
        let mut v = m3.view_mut((0, 0), (nphi, nphi));
        v += top;
        for (k, m) in [m1, m2, m3].iter().enumerate() {
            let scale = cmax_abs(m).max(1.0);
            let margin = min_eigenvalue_herm(m) / scale;
            report.worst_margins[k] = report.worst_margins[k].min(margin);
            if margin < -CERTIFY_TOLERANCE {
                report.passed = false;
            }
        }
        report.samples_checked += 1;
    }
    if report.samples_checked == 0 {
        report.passed = false;
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::uncertainty::{noise_level_bounds, scenario_gamma_bounds, ScenarioConfig};
    use rand::{Rng, SeedableRng};

    /// A random Schur-stable model with `n_x = 2`, `n_u = 1`.
    pub fn small_model(seed: u64) -> LinearModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let a = RMat::from_fn(2, 2, |_, _| rng.gen_range(-0.8..0.8));
            let b = RMat::from_fn(2, 1, |_, _| rng.gen_range(0.5..1.5));
            let m = LinearModel::new(a, b).expect("valid dims");
            if m.spectral_radius() < 0.85 {
                return m;
            }
        }
    }

    /// Small conjugate-closed problem: `T = 16`, bins {1, 3, 13, 15}, `D_des = c·I`.
    pub fn small_problem(seed: u64, d0: f64, gamma_w: f64, c: f64) -> ExplorationProblem {
        let model = small_model(seed);
        let grid = FrequencyGrid::new(vec![1, 3, 13, 15], 16).unwrap();
        let prior = ParameterEllipsoid::prior(model.theta(), &(RMat::identity(3, 3) * d0), 2).unwrap();
        let cfg = ScenarioConfig { sample_count: 30, seed, ..Default::default() };
        let d_des = RMat::identity(3, 3) * c;
        let caps = scenario_gamma_bounds(&prior, &model, &grid, &cfg).unwrap();
        let bounds = noise_level_bounds(&caps, gamma_w, 16, &d_des).unwrap();
        ExplorationProblem::new(&model, prior, grid, bounds, d_des, 0.5, gamma_w, ZLineConvention::default(), None).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::small_problem;
    use super::*;

    #[test]
    fn naive_design_spreads_energy_uniformly() {
        let grid = FrequencyGrid::new(vec![1, 3, 13, 15], 16).unwrap();
        let spec = naive_design(2.0, &grid, 1).unwrap();
        assert!((spec.energy() - 4.0).abs() < 1e-12);
        for a in &spec.amplitudes {
            assert!((a[0] - 1.0).abs() < 1e-12);
        }
        let spec2 = naive_design(3.0, &grid, 2).unwrap();
        assert!((spec2.energy() - 9.0).abs() < 1e-12);
        assert!(naive_design(-1.0, &grid, 1).is_err());
        assert_eq!(naive_design(0.0, &grid, 1).unwrap().energy(), 0.0);
    }

    #[test]
    fn problem_rejects_bad_settings() {
        let p = small_problem(1, 1e4, 1e-3, 1.0);
        let model = super::fixtures::small_model(1);
        let mk = |eps: f64, gw: f64| {
            ExplorationProblem::new(&model, p.prior.clone(), p.grid.clone(), p.bounds.clone(), p.d_des.clone(), eps, gw, p.convention, None)
        };
        assert!(mk(0.0, 1e-3).is_err());
        assert!(mk(1.0, 1e-3).is_err());
        assert!(mk(0.5, -1.0).is_err());
        assert!(mk(0.5, 1e-3).is_ok());
    }

    #[test]
    fn linearization_is_a_lower_bound() {
        // ZZᴴ − (ZẐᴴ + ẐZᴴ − ẐẐᴴ) = (Z − Ẑ)(Z − Ẑ)ᴴ ⪰ 0 for any candidate
        let p = small_problem(2, 1e4, 1e-3, 1.0);
        let u1 = naive_design(3.0, &p.grid, 1).unwrap().u_e();
        let mut u2 = u1.clone();
        u2[(0, 0)] *= 2.5;
        u2[(2, 2)] *= 0.1;
        let z = p.candidate_z(&u2).unwrap();
        let zh = p.candidate_z(&u1).unwrap();
        let lin = &z * zh.adjoint() + &zh * z.adjoint() - &zh * zh.adjoint();
        let gap = &z * z.adjoint() - lin;
        assert!(min_eigenvalue_herm(&gap) > -1e-9);
    }

    #[test]
    fn factored_and_full_agree() {
        for seed in [3u64, 4] {
            let p = small_problem(seed, 1e5, 1e-3, 1.0);
            let f = solve_exploration_sdp_with(&p, &DesignOptions { formulation: Formulation::Factored, ..Default::default() }).unwrap();
            let u = solve_exploration_sdp_with(&p, &DesignOptions { formulation: Formulation::Full, ..Default::default() }).unwrap();
            assert!(f.factored && !u.factored);
            let rel = (f.gamma_e - u.gamma_e).abs() / u.gamma_e;
            assert!(rel < 1e-4, "seed {seed}: factored {} vs full {}", f.gamma_e, u.gamma_e);
        }
    }

    #[test]
    fn designed_input_certifies_and_halved_input_does_not() {
        let p = small_problem(5, 1e5, 1e-3, 1.0);
        let d = iterate_design(&p, 1e-3, 10).unwrap();
        assert!(d.gamma_e.is_finite() && d.gamma_e > 0.0);
        assert!(!d.history.is_empty() && d.iterations >= 1);
        let report = certify_design_report(&d, &p, 50, 11).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(certify_design(&d, &p, 50));
        let mut broken = d.clone();
        for a in broken.spec.amplitudes.iter_mut() {
            *a *= 0.5;
        }
        assert!(!certify_design(&broken, &p, 50));
    }

    #[test]
    fn design_record_round_trips_through_toml() {
        let p = small_problem(6, 1e5, 1e-3, 1.0);
        let d = solve_exploration_sdp(&p).unwrap();
        let text = d.to_toml().unwrap();
        let rec: DesignRecord = toml::from_str(&text).unwrap();
        assert_eq!(rec, d.to_record());
        assert_eq!(rec.omegas.len(), 4);
        let spec = DesignRecord::from_toml(&text).unwrap().to_spec(p.horizon).unwrap();
        assert_eq!(spec, d.spec);
    }
}
