//! Spectral lines, frequency-response transfer blocks, and the design-side spectral assemblies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    block_diag_c, cholesky_upper, kron_identity_right, min_eigenvalue_herm, spectral_norm_c, to_complex, CMat, CVec, RMat, RVec, C64,
};
use crate::plant::{LinearModel, Trajectory};

/// `e^{j2π k/T}` computed from the reduced integer ratio so that grid phases do not drift.
pub fn unit_phase(bin: usize, horizon: usize) -> C64 {
    let r = (bin % horizon) as f64 / horizon as f64;
    C64::from_polar(1.0, 2.0 * PI * r)
}

/// `L` distinct frequencies `ω_i = k_i / T`, stored as integer bins `k_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    bins: Vec<usize>,
    horizon: usize,
}

impl FrequencyGrid {
    /// Grid from explicit bins `k_i ∈ {0, …, T−1}` (all distinct).
    pub fn new(bins: Vec<usize>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon T must be positive".into()));
        }
        if bins.is_empty() {
            return Err(Error::InvalidParameter("frequency grid must not be empty".into()));
        }
        if let Some(&b) = bins.iter().find(|&&b| b >= horizon) {
            return Err(Error::OffGridFrequency { omega: b as f64 / horizon as f64, horizon });
        }
        let mut sorted = bins.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != bins.len() {
            return Err(Error::InvalidParameter("frequencies must be distinct".into()));
        }
        Ok(Self { bins, horizon })
    }

    /// Grid from frequencies in `[0, 1)`, each of which must be an integer multiple of `1/T`.
    pub fn from_omegas(omegas: &[f64], horizon: usize) -> Result<Self> {
        let bins = omegas.iter().map(|&w| frequency_bin(w, horizon)).collect::<Result<Vec<_>>>()?;
        Self::new(bins, horizon)
    }

    /// `L` equally spaced frequencies `{0, 1/L, …, (L−1)/L}`; requires `L | T`.
    pub fn equally_spaced(count: usize, horizon: usize) -> Result<Self> {
        if count == 0 || horizon % count != 0 {
            return Err(Error::InvalidParameter(format!("equally spaced grid needs L dividing T (L = {count}, T = {horizon})")));
        }
        let step = horizon / count;
        Self::new((0..count).map(|i| i * step).collect(), horizon)
    }

    /// Check `n_x + n_u ≤ L ≤ T`.
    pub fn validate_for(&self, nx: usize, nu: usize) -> Result<()> {
        if self.len() < nx + nu || self.len() > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "grid size L = {} must satisfy n_x + n_u = {} ≤ L ≤ T = {}",
                self.len(),
                nx + nu,
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.bins[i] as f64 / self.horizon as f64
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.omega(i)).collect()
    }

    /// `e^{j2πω_i}`.
    pub fn phase(&self, i: usize) -> C64 {
        unit_phase(self.bins[i], self.horizon)
    }

    /// For each frequency, the index of its conjugate partner `1 − ω_i` (itself at `0`, `1/2`).
    pub fn conjugate_partners(&self) -> Vec<Option<usize>> {
        self.bins
            .iter()
            .map(|&b| {
                let partner = (self.horizon - b) % self.horizon;
                self.bins.iter().position(|&c| c == partner)
            })
            .collect()
    }

    /// Every `ω` in the grid has its partner `1 − ω` in the grid as well.
    pub fn is_conjugate_closed(&self) -> bool {
        self.conjugate_partners().iter().all(Option::is_some)
    }

    /// Convention factor `κ(ω)` relating a design amplitude to the spectral line of the
    /// realized cosine input: `1` at `ω ∈ {0, 1/2}`, `1/2` elsewhere.
    pub fn kappa(&self, i: usize) -> f64 {
        let b = self.bins[i];
        if b == 0 || 2 * b == self.horizon {
            1.0
        } else {
            0.5
        }
    }
}

/// Integer bin of an on-grid frequency.
pub fn frequency_bin(omega: f64, horizon: usize) -> Result<usize> {
    let x = omega * horizon as f64;
    let k = x.round();
    if !(0.0..horizon as f64).contains(&k) || (x - k).abs() > 1e-9 * horizon as f64 {
        return Err(Error::OffGridFrequency { omega, horizon });
    }
    Ok(k as usize)
}

/// Multi-sine input specification: amplitudes `ū(ω_i) ∈ ℝ^{n_u}` on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationInputSpec {
    pub grid: FrequencyGrid,
    pub amplitudes: Vec<RVec>,
}

impl ExplorationInputSpec {
    pub fn new(grid: FrequencyGrid, amplitudes: Vec<RVec>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("{} amplitudes for {} frequencies", amplitudes.len(), grid.len())));
        }
        let nu = amplitudes[0].len();
        if nu == 0 || amplitudes.iter().any(|a| a.len() != nu) {
            return Err(Error::DimensionMismatch("amplitude vectors must share a positive length n_u".into()));
        }
        Ok(Self { grid, amplitudes })
    }

    /// Rebuild from the stacked vector `[ū(ω_1); …; ū(ω_L)]`.
    pub fn from_stacked(grid: FrequencyGrid, stacked: &RVec, nu: usize) -> Result<Self> {
        if stacked.len() != grid.len() * nu {
            return Err(Error::DimensionMismatch("stacked amplitude length".into()));
        }
        let amps = (0..grid.len()).map(|i| stacked.rows(i * nu, nu).into_owned()).collect();
        Self::new(grid, amps)
    }

    pub fn nu(&self) -> usize {
        self.amplitudes[0].len()
    }

    /// `U_e 1_L = [ū(ω_1); …; ū(ω_L)]`.
    pub fn stacked(&self) -> RVec {
        let nu = self.nu();
        RVec::from_iterator(self.grid.len() * nu, self.amplitudes.iter().flat_map(|a| a.iter().copied()))
    }

    /// `U_e = diag(ū(ω_1), …, ū(ω_L))`, size `L n_u × L`.
    pub fn u_e(&self) -> RMat {
        let (l, nu) = (self.grid.len(), self.nu());
        let mut u = RMat::zeros(l * nu, l);
        for (i, a) in self.amplitudes.iter().enumerate() {
            u.view_mut((i * nu, i), (nu, 1)).copy_from(a);
        }
        u
    }

    /// Input energy `Σ_i ‖ū(ω_i)‖²` (the design's `γ_e²`).
    pub fn energy(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_squared()).sum()
    }

    /// Time-domain input `u_k = Σ_i ū(ω_i) cos(2π ω_i k)`, `k = 0 … T−1`.
    pub fn input_sequence(&self) -> Vec<RVec> {
        let t = self.grid.horizon();
        (0..t)
            .map(|k| {
                let mut u = RVec::zeros(self.nu());
                for (i, a) in self.amplitudes.iter().enumerate() {
                    let c = unit_phase(self.grid.bins()[i] * k % t, t).re;
                    u.axpy(c, a, 1.0);
                }
                u
            })
            .collect()
    }

    /// Average the amplitudes of conjugate frequency pairs (ω, 1 − ω). For a
    /// conjugate-closed grid this makes the design amplitudes equal the spectral lines of the
    /// realized input.
    pub fn symmetrize_conjugate_pairs(&mut self) {
        let partners = self.grid.conjugate_partners();
        let old = self.amplitudes.clone();
        for (i, p) in partners.iter().enumerate() {
            if let Some(j) = *p {
                self.amplitudes[i] = (&old[i] + &old[j]) * 0.5;
            }
        }
    }
}

/// Spectral line `(1/T) Σ_k s_k e^{−j2πωk}` of a length-`T` real sequence.
pub fn spectral_line(seq: &[RVec], omega: f64, horizon: usize) -> Result<CVec> {
    if seq.len() != horizon {
        return Err(Error::DimensionMismatch(format!("sequence has length {}, expected T = {horizon}", seq.len())));
    }
    spectral_line_bin(seq, frequency_bin(omega, horizon)?)
}

/// Spectral line at integer bin `k` of a sequence of length `T = seq.len()`.
pub fn spectral_line_bin(seq: &[RVec], bin: usize) -> Result<CVec> {
    let t = seq.len();
    if t == 0 {
        return Err(Error::InvalidParameter("empty sequence".into()));
    }
    let n = seq[0].len();
    let mut acc = CVec::zeros(n);
    for (k, s) in seq.iter().enumerate() {
        let e = unit_phase(bin * k % t, t).conj();
        for r in 0..n {
            acc[r] += e * s[r];
        }
    }
    Ok(acc / C64::new(t as f64, 0.0))
}

/// Convention for the state lines that enter the first block row of `Z̄`.
///
/// The data matrix `Z` pairs the regressors `φ_k` with the *next* states `x_{k+1}`, whose
/// spectral lines are `e^{j2πω}x̄(ω)` for periodic data, and the Parseval lift of `Z Zᵀ`
/// produces `conj(x̄⁺)` in the `Z̄` row. `ForwardShifted` uses
/// `V_{z,i} = conj(e^{j2πω_i} V_{x,i})`, which makes the spectral lower bound on `Z Zᵀ` exact;
/// `AsPrinted` uses `V_{z,i} = V_{x,i}` literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ZLineConvention {
    #[default]
    ForwardShifted,
    AsPrinted,
}

/// Per-frequency transfer blocks `V_{x,i} = (e^{j2πω_i}I − A)⁻¹B`, `Y_{x,i} = (e^{j2πω_i}I − A)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferBlocks {
    vx: Vec<CMat>,
    yx: Vec<CMat>,
    phases: Vec<C64>,
    nx: usize,
    nu: usize,
}

impl TransferBlocks {
    pub fn len(&self) -> usize {
        self.vx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn nphi(&self) -> usize {
        self.nx + self.nu
    }

    pub fn vx_block(&self, i: usize) -> &CMat {
        &self.vx[i]
    }

    pub fn yx_block(&self, i: usize) -> &CMat {
        &self.yx[i]
    }

    /// `V_{z,i}` under the given convention.
    pub fn vz_block(&self, i: usize, conv: ZLineConvention) -> CMat {
        match conv {
            ZLineConvention::AsPrinted => self.vx[i].clone(),
            ZLineConvention::ForwardShifted => (&self.vx[i] * self.phases[i]).map(|z| z.conj()),
        }
    }

    /// Block-diagonal `V_x` (`n_x L × n_u L`).
    pub fn vx(&self) -> CMat {
        block_diag_c(&self.vx)
    }

    /// Block-diagonal `V_z` (`n_x L × n_u L`).
    pub fn vz(&self, conv: ZLineConvention) -> CMat {
        block_diag_c(&(0..self.len()).map(|i| self.vz_block(i, conv)).collect::<Vec<_>>())
    }

    /// Block-diagonal `Y_x` (`n_x L × n_x L`).
    pub fn yx(&self) -> CMat {
        block_diag_c(&self.yx)
    }

    /// `V_φ = [V_{φ,1} … V_{φ,L}]` with `V_{φ,i} = [V_{x,i}; I]` (`n_φ × n_u L`).
    pub fn vphi(&self) -> CMat {
        let (nx, nu, l) = (self.nx, self.nu, self.len());
        let mut m = CMat::zeros(nx + nu, nu * l);
        for i in 0..l {
            m.view_mut((0, i * nu), (nx, nu)).copy_from(&self.vx[i]);
            for d in 0..nu {
                m[(nx + d, i * nu + d)] = C64::new(1.0, 0.0);
            }
        }
        m
    }

    /// `Y_φ = [Y_{φ,1} … Y_{φ,L}]` with `Y_{φ,i} = [Y_{x,i}; 0]` (`n_φ × n_x L`).
    pub fn yphi(&self) -> CMat {
        let (nx, nu, l) = (self.nx, self.nu, self.len());
        let mut m = CMat::zeros(nx + nu, nx * l);
        for i in 0..l {
            m.view_mut((0, i * nx), (nx, nx)).copy_from(&self.yx[i]);
        }
        m
    }

    /// Largest `‖V_{x,i}‖` over frequencies (= `‖V_x‖` for the block-diagonal matrix).
    pub fn vx_norm(&self) -> f64 {
        self.vx.iter().map(spectral_norm_c).fold(0.0, f64::max)
    }

    /// Largest `‖Y_{x,i}‖` over frequencies.
    pub fn yx_norm(&self) -> f64 {
        self.yx.iter().map(spectral_norm_c).fold(0.0, f64::max)
    }
}

/// Evaluate the transfer blocks of `model` on `grid` by LU solves of `(e^{j2πω}I − A)`.
pub fn transfer_blocks(model: &LinearModel, grid: &FrequencyGrid) -> Result<TransferBlocks> {
    let (nx, nu) = (model.nx(), model.nu());
    let a = to_complex(model.a());
    let b = to_complex(model.b());
    let scale = 1.0 + model.a().amax();
    let mut vx = Vec::with_capacity(grid.len());
    let mut yx = Vec::with_capacity(grid.len());
    let mut phases = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let z = grid.phase(i);
        let m = CMat::identity(nx, nx) * z - &a;
        let lu = m.lu();
        let u = lu.u();
        let min_pivot = (0..nx).map(|d| u[(d, d)].norm()).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-13 * scale) {
            return Err(Error::NumericalSingularity(format!("e^(j2π·{})I − A is singular (pivot {min_pivot:e})", grid.omega(i))));
        }
        let y = lu.try_inverse().ok_or_else(|| Error::NumericalSingularity("resolvent inverse failed".into()))?;
        vx.push(&y * &b);
        yx.push(y);
        phases.push(z);
    }
    Ok(TransferBlocks { vx, yx, phases, nx, nu })
}

/// Design-side spectral matrices for a given amplitude specification.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAssemblies {
    /// `Φ̄_u = V_φ U_e` (`n_φ × L`).
    pub phi_u: CMat,
    /// `X̄_u = V_x U_e 1_L` (length `n_x L`).
    pub x_u: CVec,
    /// `[D^{1/2ᵀ}(1ᵀU_eᵀ ⊗ I_{n_φ}); 0]·(V_zᴴ ⊗ I_{n_φ})`.
    pub zu1: CMat,
    /// `[0; V_φ ⊗ I_{n_x n_φ}]·(U_e ⊗ I_{n_x n_φ})`.
    pub zu2: CMat,
}

impl SpectralAssemblies {
    /// `Z̄_u = Z̄_{u,1} + Z̄_{u,2}`.
    pub fn z_u(&self) -> CMat {
        &self.zu1 + &self.zu2
    }
}

fn check_shapes(blocks: &TransferBlocks, spec: &ExplorationInputSpec, d_des: &RMat) -> Result<()> {
    if spec.grid.len() != blocks.len() || spec.nu() != blocks.nu() {
        return Err(Error::DimensionMismatch("input spec does not match transfer blocks".into()));
    }
    if d_des.shape() != (blocks.nphi(), blocks.nphi()) {
        return Err(Error::DimensionMismatch(format!("D_des is {:?}, expected n_φ × n_φ", d_des.shape())));
    }
    Ok(())
}

/// Assemble `Φ̄_u`, `X̄_u`, `Z̄_{u,1}`, `Z̄_{u,2}`.
pub fn assemble_spectral(
    blocks: &TransferBlocks,
    spec: &ExplorationInputSpec,
    d_des: &RMat,
    conv: ZLineConvention,
) -> Result<SpectralAssemblies> {
    check_shapes(blocks, spec, d_des)?;
    let (nx, nphi) = (blocks.nx(), blocks.nphi());
    let q = nx * nphi;
    let u = to_complex(&spec.u_e());
    let ones = CVec::from_element(spec.grid.len(), C64::new(1.0, 0.0));
    let phi_u = blocks.vphi() * &u;
    let x_u = blocks.vx() * &u * &ones;
    let rt = to_complex(&cholesky_upper(d_des)?.transpose());
    let u1t = CMat::from_row_slice(1, u.nrows(), (&u * &ones).as_slice()); // 1ᵀU_eᵀ (1 × L n_u)
    let top = &rt * kron_identity_right(&u1t, nphi);
    let vz_h = kron_identity_right(&blocks.vz(conv).adjoint(), nphi);
    let rows = nphi + nx * nphi * nphi;
    let mut left = CMat::zeros(rows, top.ncols());
    left.view_mut((0, 0), top.shape()).copy_from(&top);
    let zu1 = left * vz_h;
    let vphi_q = kron_identity_right(&blocks.vphi(), q);
    let mut bottom = CMat::zeros(rows, vphi_q.ncols());
    bottom.view_mut((nphi, 0), vphi_q.shape()).copy_from(&vphi_q);
    let zu2 = bottom * kron_identity_right(&u, q);
    Ok(SpectralAssemblies { phi_u, x_u, zu1, zu2 })
}

/// Direct single-shot `Z̄_u = [D^{1/2ᵀ}(X̄_zᴴ ⊗ I_{n_φ}); (Φ̄_u ⊗ I_{n_x}) ⊗ I_{n_φ}]`
/// with `X̄_z = V_z U_e 1_L`.
pub fn z_bar_direct(blocks: &TransferBlocks, spec: &ExplorationInputSpec, d_des: &RMat, conv: ZLineConvention) -> Result<CMat> {
    check_shapes(blocks, spec, d_des)?;
    let (nx, nphi) = (blocks.nx(), blocks.nphi());
    let u = to_complex(&spec.u_e());
    let ones = CVec::from_element(spec.grid.len(), C64::new(1.0, 0.0));
    let xz = blocks.vz(conv) * &u * &ones;
    let phi_u = blocks.vphi() * &u;
    let rt = to_complex(&cholesky_upper(d_des)?.transpose());
    let xz_h = CMat::from_row_slice(1, xz.len(), xz.adjoint().as_slice());
    let top = rt * kron_identity_right(&xz_h, nphi);
    let bot = kron_identity_right(&kron_identity_right(&phi_u, nx), nphi);
    let mut z = CMat::zeros(top.nrows() + bot.nrows(), top.ncols());
    z.view_mut((0, 0), top.shape()).copy_from(&top);
    z.view_mut((top.nrows(), 0), bot.shape()).copy_from(&bot);
    Ok(z)
}

/// Excitation diagnostic on real data (regressor Gram matrix versus the designed spectrum):
/// `ΦΦᵀ − T((1−ε)Φ̄_uΦ̄_uᴴ − ((1−ε)/ε)W̄_φ) ⪰ −1e-8·scale`, with `Φ̄_u` assembled from the
/// model used in the simulation.
pub fn empirical_excitation_check(traj: &Trajectory, grid: &FrequencyGrid, epsilon: f64, w_phi_bar: &CMat, phi_u: &CMat) -> Result<bool> {
    Ok(excitation_margin(traj, grid, epsilon, w_phi_bar, phi_u)? >= 0.0)
}

/// Scaled minimum eigenvalue behind [`empirical_excitation_check`]: `λ_min / scale + 1e-8`.
pub fn excitation_margin(traj: &Trajectory, grid: &FrequencyGrid, epsilon: f64, w_phi_bar: &CMat, phi_u: &CMat) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("ε must lie in (0,1), got {epsilon}")));
    }
    let t = traj.horizon();
    if t != grid.horizon() || phi_u.ncols() != grid.len() || phi_u.nrows() != traj.nx() + traj.nu() {
        return Err(Error::DimensionMismatch("excitation check shapes".into()));
    }
    let reg = crate::setmem::build_regressors(traj)?;
    let gram = to_complex(&(&reg.phi * reg.phi.transpose()));
    let tf = C64::new(t as f64, 0.0);
    let rhs = (phi_u * phi_u.adjoint() * C64::new(1.0 - epsilon, 0.0) - w_phi_bar * C64::new((1.0 - epsilon) / epsilon, 0.0)) * tf;
    let m = &gram - &rhs;
    let scale = spectral_norm_c(&gram).max(spectral_norm_c(&rhs)).max(f64::MIN_POSITIVE);
    Ok(min_eigenvalue_herm(&m) / scale + 1e-8)
}

/// Z-matrix excitation diagnostic on real data:
/// `Z Zᵀ − T((1−ε)Z̄_uZ̄_uᴴ − ((1−ε)/ε)w_z I)`, returning `λ_min / scale + 1e-8`
/// (non-negative means the inequality holds).
pub fn z_excitation_margin(traj: &Trajectory, d_des: &RMat, epsilon: f64, w_z_scalar: f64, z_u: &CMat) -> Result<f64> {
    let reg = crate::setmem::build_regressors(traj)?;
    let z = crate::setmem::data_z_matrix(&reg, d_des)?;
    let zzt = to_complex(&(&z * z.transpose()));
    if z_u.nrows() != zzt.nrows() {
        return Err(Error::DimensionMismatch("Z̄_u rows".into()));
    }
    let t = traj.horizon() as f64;
    let n = zzt.nrows();
    let rhs = (z_u * z_u.adjoint() * C64::new(1.0 - epsilon, 0.0)
        - CMat::identity(n, n) * C64::new((1.0 - epsilon) / epsilon * w_z_scalar, 0.0))
        * C64::new(t, 0.0);
    let scale = spectral_norm_c(&zzt).max(spectral_norm_c(&rhs)).max(f64::MIN_POSITIVE);
    Ok(min_eigenvalue_herm(&(zzt - rhs)) / scale + 1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cmax_abs;
    use approx::assert_relative_eq;

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(vec![1, 1], 10).is_err());
        assert!(matches!(FrequencyGrid::new(vec![10], 10), Err(Error::OffGridFrequency { .. })));
        assert!(matches!(FrequencyGrid::from_omegas(&[0.013], 100), Err(Error::OffGridFrequency { .. })));
        let g = FrequencyGrid::equally_spaced(20, 100).unwrap();
        assert_relative_eq!(g.omega(19), 0.95);
        assert!(g.is_conjugate_closed());
        assert!(g.validate_for(4, 1).is_ok());
        let half = FrequencyGrid::new(vec![1, 2, 3], 10).unwrap();
        assert!(!half.is_conjugate_closed());
        assert!(half.validate_for(4, 1).is_err());
    }

    #[test]
    fn constant_sequence_dc_line() {
        let c = RVec::from_vec(vec![1.5, -2.0]);
        let seq = vec![c.clone(); 8];
        let line = spectral_line(&seq, 0.0, 8).unwrap();
        assert_relative_eq!(line[0].re, 1.5, epsilon = 1e-15);
        assert_relative_eq!(line[1].re, -2.0, epsilon = 1e-15);
        assert!(matches!(spectral_line(&seq, 0.3, 8), Err(Error::OffGridFrequency { .. })));
    }

    #[test]
    fn cosine_lines_are_half_amplitude() {
        let t = 20;
        let seq: Vec<RVec> = (0..t).map(|k| RVec::from_element(1, 3.0 * (2.0 * PI * 0.15 * k as f64).cos())).collect();
        let a = spectral_line(&seq, 0.15, t).unwrap();
        let b = spectral_line(&seq, 0.85, t).unwrap();
        assert!((a[0] - C64::new(1.5, 0.0)).norm() < 1e-13);
        assert!((b[0] - C64::new(1.5, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn zero_matrix_resolvent() {
        let m = LinearModel::new(RMat::zeros(2, 2), RMat::from_column_slice(2, 1, &[1.0, 2.0])).unwrap();
        let g = FrequencyGrid::new(vec![0, 3, 7], 10).unwrap();
        let tb = transfer_blocks(&m, &g).unwrap();
        for i in 0..3 {
            let expect = to_complex(m.b()) * g.phase(i).conj();
            assert!(cmax_abs(&(tb.vx_block(i) - expect)) < 1e-14);
        }
    }

    #[test]
    fn dc_gain_is_real() {
        let m = crate::plant::discretize_benchmark(&crate::plant::BenchmarkPlantParams::reference()).unwrap();
        let g = FrequencyGrid::new(vec![0], 100).unwrap();
        let tb = transfer_blocks(&m, &g).unwrap();
        let dc = (RMat::identity(4, 4) - m.a()).lu().solve(m.b()).unwrap();
        assert!(cmax_abs(&(tb.vx_block(0) - to_complex(&dc))) < 1e-12);
    }

    #[test]
    fn unstable_resolvent_singular() {
        let m = LinearModel::new(RMat::identity(2, 2), RMat::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let g = FrequencyGrid::new(vec![0], 4).unwrap();
        assert!(matches!(transfer_blocks(&m, &g), Err(Error::NumericalSingularity(_))));
    }

    #[test]
    fn naive_and_symmetric_inputs_have_literal_lines() {
        let g = FrequencyGrid::equally_spaced(20, 100).unwrap();
        let amps: Vec<RVec> = (0..20).map(|i| RVec::from_element(1, 1.0 + i as f64)).collect();
        let mut spec = ExplorationInputSpec::new(g.clone(), amps).unwrap();
        spec.symmetrize_conjugate_pairs();
        let u = spec.input_sequence();
        for i in 0..g.len() {
            let line = spectral_line_bin(&u, g.bins()[i]).unwrap();
            assert!((line[0] - C64::new(spec.amplitudes[i][0], 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_amplitudes_give_zero_assemblies() {
        let m = crate::plant::discretize_benchmark(&crate::plant::BenchmarkPlantParams::reference()).unwrap();
        let g = FrequencyGrid::equally_spaced(20, 100).unwrap();
        let tb = transfer_blocks(&m, &g).unwrap();
        let spec = ExplorationInputSpec::new(g, vec![RVec::zeros(1); 20]).unwrap();
        let a = assemble_spectral(&tb, &spec, &RMat::identity(5, 5), ZLineConvention::default()).unwrap();
        assert_eq!(cmax_abs(&a.phi_u), 0.0);
        assert_eq!(cmax_abs(&a.zu1) + cmax_abs(&a.zu2), 0.0);
        assert_eq!(a.zu1.shape(), (105, 400));
    }

    #[test]
    fn scalar_system_hand_formulas() {
        // x⁺ = a x + b u, n_x = n_u = 1, L = 1, ω = 1/4 (phase j)
        let (a, b, ubar, d) = (0.5, 2.0, 3.0, 4.0);
        let m = LinearModel::new(RMat::from_element(1, 1, a), RMat::from_element(1, 1, b)).unwrap();
        let g = FrequencyGrid::new(vec![1], 4).unwrap();
        let tb = transfer_blocks(&m, &g).unwrap();
        let j = C64::new(0.0, 1.0);
        let v = C64::new(b, 0.0) / (j - a);
        assert!((tb.vx_block(0)[(0, 0)] - v).norm() < 1e-14);
        let spec = ExplorationInputSpec::new(g, vec![RVec::from_element(1, ubar)]).unwrap();
        let dm = RMat::from_diagonal(&RVec::from_vec(vec![d, d]));
        let asm = assemble_spectral(&tb, &spec, &dm, ZLineConvention::AsPrinted).unwrap();
        assert!((asm.phi_u[(0, 0)] - v * ubar).norm() < 1e-14);
        assert!((asm.phi_u[(1, 0)] - C64::new(ubar, 0.0)).norm() < 1e-14);
        assert!((asm.x_u[0] - v * ubar).norm() < 1e-14);
        // Z̄_u top-left entry: √d · conj(x̄) ; bottom rows: φ̄ entries on the diagonal
        let z = asm.z_u();
        assert_eq!(z.shape(), (2 + 4, 2));
        assert!((z[(0, 0)] - (v * ubar).conj() * d.sqrt()).norm() < 1e-13);
        assert!((z[(2, 0)] - v * ubar).norm() < 1e-13);
        assert!((z[(4, 0)] - C64::new(ubar, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn split_matches_direct_assembly() {
        let m = crate::plant::discretize_benchmark(&crate::plant::BenchmarkPlantParams::reference()).unwrap();
        let g = FrequencyGrid::equally_spaced(10, 50).unwrap();
        let tb = transfer_blocks(&m, &g).unwrap();
        let amps: Vec<RVec> = (0..10).map(|i| RVec::from_element(1, (i as f64 * 0.37).sin())).collect();
        let spec = ExplorationInputSpec::new(g, amps).unwrap();
        let mut d = RMat::identity(5, 5) * 2.0;
        d[(0, 1)] = 0.3;
        d[(1, 0)] = 0.3;
        for conv in [ZLineConvention::ForwardShifted, ZLineConvention::AsPrinted] {
            let a = assemble_spectral(&tb, &spec, &d, conv).unwrap();
            let direct = z_bar_direct(&tb, &spec, &d, conv).unwrap();
            assert!(cmax_abs(&(a.z_u() - direct)) < 1e-12);
        }
    }
}
