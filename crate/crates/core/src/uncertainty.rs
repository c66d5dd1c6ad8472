//! Scenario-based transfer-matrix uncertainty caps and disturbance-level bounds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, spectral_norm_c, sym_inverse_sqrt, CMat, RMat, RVec, C64};
use crate::plant::LinearModel;
use crate::setmem::ParameterEllipsoid;
use crate::spectral::{transfer_blocks, FrequencyGrid, TransferBlocks};

/// Sampling settings for the scenario caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Number of boundary samples `N` (the prior center is always added).
    pub sample_count: usize,
    /// Confidence level `β` (recorded metadata only).
    pub confidence: f64,
    /// Multiplicative inflation `ρ ≥ 1` applied to every sampled maximum.
    pub inflation: f64,
    /// Seed of the counter-based sampler.
    pub seed: u64,
    /// Treatment of samples whose `A` is not Schur stable.
    pub unstable_samples: UnstablePolicy,
    /// Shape of the transfer-uncertainty caps `Γ̃_φ`, `Γ̃_x`.
    pub cap_shape: CapShape,
}

/// Shape of the scenario caps on `Ṽ_φṼ_φᴴ` and `Ṽ_xṼ_xᴴ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapShape {
    /// `ρ·max_s ‖Ṽ^{(s)}‖²·I`.
    Isotropic,
    /// `ρ·λ·H` with `H` the sample second moment `mean_s Ṽ^{(s)}Ṽ^{(s)ᴴ}` (slightly
    /// regularized) and `λ = max_s ‖H^{-1/2}Ṽ^{(s)}‖²`, the smallest scaling of `H` that
    /// dominates every sample. Much tighter in weakly uncertain directions; `Γ̃_x` is shaped
    /// per frequency block.
    #[default]
    Shaped,
}

/// What to do with prior samples whose `A` is not Schur stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnstablePolicy {
    /// Keep them in the caps (their transfer blocks on the grid are finite); they are
    /// counted in [`UncertaintyBounds::unstable_samples`]. Covers every model in `Θ_0`.
    #[default]
    Retain,
    /// Drop them (the true system is assumed Schur stable); more than 50% dropped is a
    /// [`Error::PriorTooLarge`] error.
    Reject,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sample_count: 200,
            confidence: 1e-10,
            inflation: 1.1,
            seed: 0,
            unstable_samples: UnstablePolicy::Retain,
            cap_shape: CapShape::Shaped,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::InvalidParameter("scenario sample_count must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!("scenario confidence must lie in (0,1), got {}", self.confidence)));
        }
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(Error::InvalidParameter(format!("scenario inflation must be ≥ 1, got {}", self.inflation)));
        }
        Ok(())
    }
}

/// Hermitian caps on the transfer-matrix uncertainty and the disturbance-induced terms.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBounds {
    /// `Γ̃_φ ⪰ Ṽ_φṼ_φᴴ` (`n_φ × n_φ`).
    pub gamma_tilde_phi: CMat,
    /// `Γ̃_x ⪰ Ṽ_xṼ_xᴴ` (`n_x L × n_x L`).
    pub gamma_tilde_x: CMat,
    /// `Γ_φ ⪰ Y_φY_φᴴ` (`n_φ × n_φ`).
    pub gamma_phi: CMat,
    /// `Γ_x ⪰ Y_xY_xᴴ` (`n_x L × n_x L`).
    pub gamma_x: CMat,
    /// `W̄_φ = (γ_w/T) Γ_φ`.
    pub w_phi_bar: CMat,
    /// `W̄_Z = w_z_scalar · I`.
    pub w_z_scalar: f64,
    /// Number of samples (including the center) that entered the maxima.
    pub retained_samples: usize,
    /// Number of samples rejected (unstable under [`UnstablePolicy::Reject`], or with a
    /// singular resolvent on the grid).
    pub rejected_samples: usize,
    /// Number of samples whose `A` is not Schur stable (retained or not).
    pub unstable_samples: usize,
}

impl UncertaintyBounds {
    /// Scaled-identity caps with the given levels; the noise terms are zero until
    /// [`noise_level_bounds`] fills them.
    pub fn from_levels(nx: usize, nu: usize, l: usize, tilde_phi: f64, tilde_x: f64, phi: f64, x: f64) -> Self {
        let nphi = nx + nu;
        let eye = |n: usize, v: f64| CMat::identity(n, n) * C64::new(v, 0.0);
        Self {
            gamma_tilde_phi: eye(nphi, tilde_phi),
            gamma_tilde_x: eye(nx * l, tilde_x),
            gamma_phi: eye(nphi, phi),
            gamma_x: eye(nx * l, x),
            w_phi_bar: eye(nphi, 0.0),
            w_z_scalar: 0.0,
            retained_samples: 0,
            rejected_samples: 0,
            unstable_samples: 0,
        }
    }

    /// Spectral norms `(‖Γ̃_φ‖, ‖Γ̃_x‖, ‖Γ_φ‖, ‖Γ_x‖)`.
    pub fn levels(&self) -> [f64; 4] {
        [
            spectral_norm_c(&self.gamma_tilde_phi),
            spectral_norm_c(&self.gamma_tilde_x),
            spectral_norm_c(&self.gamma_phi),
            spectral_norm_c(&self.gamma_x),
        ]
    }

    /// One-line summary for reports.
    pub fn summary(&self) -> String {
        let [tp, tx, p, x] = self.levels();
        format!(
            "|Γ̃_φ|={tp:.6e} |Γ̃_x|={tx:.6e} |Γ_φ|={p:.6e} |Γ_x|={x:.6e} |W̄_φ|={:.6e} w_Z={:.6e} samples={} rejected={} unstable={}",
            spectral_norm_c(&self.w_phi_bar),
            self.w_z_scalar,
            self.retained_samples,
            self.rejected_samples,
            self.unstable_samples
        )
    }
}

/// `n` points uniformly distributed on the boundary of `prior`, followed by its center.
pub fn sample_prior(prior: &ParameterEllipsoid, n: usize, seed: u64) -> Result<Vec<RVec>> {
    let root = sym_inverse_sqrt(&prior.shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = prior.dim();
    let scale = prior.radius.sqrt();
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let z = RVec::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let norm = z.norm();
        if norm < 1e-300 {
            continue;
        }
        out.push(&prior.center + &root * (z * (scale / norm)));
    }
    out.push(prior.center.clone());
    Ok(out)
}

/// Per-sample quantities `(‖Ṽ_φ‖², max_i ‖Ṽ_{x,i}‖², ‖Y_φ‖², max_i ‖Y_{x,i}‖²)`.
pub fn sample_gains(sample: &TransferBlocks, nominal: &TransferBlocks) -> [f64; 4] {
    let dphi = sample.vphi() - nominal.vphi();
    let dx = (0..sample.len()).map(|i| spectral_norm_c(&(sample.vx_block(i) - nominal.vx_block(i)))).fold(0.0, f64::max);
    [spectral_norm_c(&dphi).powi(2), dx * dx, spectral_norm_c(&sample.yphi()).powi(2), sample.yx_norm().powi(2)]
}

/// Relative regularization `η` of the shaped caps: `H = mean ṼṼᴴ + η·λ_max(mean ṼṼᴴ)·I`.
pub const SHAPE_REGULARIZATION: f64 = 1e-6;

/// Smallest `ρ·λ·H` dominating every `V_sV_sᴴ`, with `H` the regularized second moment.
pub fn shaped_cap(samples: &[CMat], rho: f64) -> Result<CMat> {
    let n = samples.first().map_or(0, |v| v.nrows());
    let mut h = CMat::zeros(n, n);
    for v in samples {
        h += v * v.adjoint();
    }
    if samples.is_empty() {
        return Ok(h);
    }
    h /= C64::new(samples.len() as f64, 0.0);
    let h = crate::linalg::hermitian_part(&h);
    let top = spectral_norm_c(&h);
    if top == 0.0 {
        return Ok(h);
    }
    let hr = &h + CMat::identity(n, n) * C64::new(SHAPE_REGULARIZATION * top, 0.0);
    let eig = hr.clone().symmetric_eigen();
    let inv_sqrt = &eig.eigenvectors
        * CMat::from_diagonal(&eig.eigenvalues.map(|l| C64::new(1.0 / l.max(f64::MIN_POSITIVE).sqrt(), 0.0)))
        * eig.eigenvectors.adjoint();
    let lambda = samples.iter().map(|v| spectral_norm_c(&(&inv_sqrt * v)).powi(2)).fold(0.0, f64::max);
    Ok(crate::linalg::hermitian_part(&(hr * C64::new(rho * lambda, 0.0))))
}

/// Scenario caps over the samples of `prior` (boundary points plus the center): `Γ_φ`,
/// `Γ_x` are `ρ · max_s (sampled gain)² · I`; `Γ̃_φ`, `Γ̃_x` follow `cfg.cap_shape`.
pub fn scenario_gamma_bounds(
    prior: &ParameterEllipsoid,
    theta_hat0: &LinearModel,
    grid: &FrequencyGrid,
    cfg: &ScenarioConfig,
) -> Result<UncertaintyBounds> {
    cfg.validate()?;
    let (nx, nu) = (theta_hat0.nx(), theta_hat0.nu());
    if prior.dim() != nx * (nx + nu) {
        return Err(Error::DimensionMismatch("prior dimension does not match the nominal model".into()));
    }
    let nominal = transfer_blocks(theta_hat0, grid)?;
    let samples = sample_prior(prior, cfg.sample_count, cfg.seed)?;
    let total = samples.len();
    let mut maxima = [0.0f64; 4];
    let mut dphi_samples: Vec<CMat> = Vec::new();
    let mut dx_samples: Vec<Vec<CMat>> = vec![Vec::new(); grid.len()];
    let mut rejected = 0usize;
    let mut unstable = 0usize;
    for theta in &samples {
        let model = LinearModel::from_theta(theta, nx, nu)?;
        if !model.is_schur_stable() {
            unstable += 1;
            if cfg.unstable_samples == UnstablePolicy::Reject {
                rejected += 1;
                continue;
            }
        }
        let blocks = match transfer_blocks(&model, grid) {
            Ok(b) => b,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        if cfg.cap_shape == CapShape::Shaped {
            dphi_samples.push(blocks.vphi() - nominal.vphi());
            for (i, list) in dx_samples.iter_mut().enumerate() {
                list.push(blocks.vx_block(i) - nominal.vx_block(i));
            }
        }
        let gains = sample_gains(&blocks, &nominal);
        for (m, g) in maxima.iter_mut().zip(gains) {
            *m = m.max(g);
        }
    }
    let too_many_unstable = cfg.unstable_samples == UnstablePolicy::Reject && 2 * unstable > total;
    if rejected == total || too_many_unstable {
        return Err(Error::PriorTooLarge { rejected, total });
    }
    let rho = cfg.inflation;
    let mut b = UncertaintyBounds::from_levels(nx, nu, grid.len(), rho * maxima[0], rho * maxima[1], rho * maxima[2], rho * maxima[3]);
    if cfg.cap_shape == CapShape::Shaped {
        b.gamma_tilde_phi = shaped_cap(&dphi_samples, rho)?;
        let blocks: Vec<CMat> = dx_samples.iter().map(|s| shaped_cap(s, rho)).collect::<Result<_>>()?;
        b.gamma_tilde_x = crate::linalg::block_diag_c(&blocks);
    }
    b.retained_samples = total - rejected;
    b.rejected_samples = rejected;
    b.unstable_samples = unstable;
    Ok(b)
}

/// Disturbance-level bounds: `W̄_φ = (γ_w/T)Γ_φ` and
/// `w_Z = (γ_w/T)(‖Γ_x‖·‖D_des‖ + ‖Γ_φ‖)`.
pub fn noise_level_bounds(gammas: &UncertaintyBounds, gamma_w: f64, horizon: usize, d_des: &RMat) -> Result<UncertaintyBounds> {
    if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma_w must be non-negative, got {gamma_w}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let k = gamma_w / horizon as f64;
    let mut out = gammas.clone();
    out.w_phi_bar = &gammas.gamma_phi * C64::new(k, 0.0);
    out.w_z_scalar = k * spectral_norm_c(&gammas.gamma_x) * spectral_norm(d_des) + k * spectral_norm_c(&gammas.gamma_phi);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{discretize_benchmark, BenchmarkPlantParams};
    use approx::assert_relative_eq;

    fn setup(d0: f64) -> (LinearModel, ParameterEllipsoid, FrequencyGrid) {
        let m = discretize_benchmark(&BenchmarkPlantParams::reference()).unwrap();
        let prior = ParameterEllipsoid::prior(m.theta(), &(RMat::identity(5, 5) * d0), 4).unwrap();
        (m, prior, FrequencyGrid::equally_spaced(20, 100).unwrap())
    }

    #[test]
    fn samples_lie_on_boundary_plus_center() {
        let (_, prior, _) = setup(1e4);
        let s = sample_prior(&prior, 1, 5).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|t| prior.contains(t).unwrap()));
        let many = sample_prior(&prior, 50, 9).unwrap();
        for t in &many[..50] {
            assert_relative_eq!(prior.quadratic_form(t).unwrap(), prior.radius, max_relative = 1e-9);
        }
        assert_eq!(prior.quadratic_form(&many[50]).unwrap(), 0.0);
        assert_eq!(many, sample_prior(&prior, 50, 9).unwrap());
    }

    #[test]
    fn zero_radius_gives_zero_tilde_caps() {
        let (m, mut prior, g) = setup(1e4);
        prior.radius = 0.0;
        let b = scenario_gamma_bounds(&prior, &m, &g, &ScenarioConfig { sample_count: 5, ..Default::default() }).unwrap();
        let [tp, tx, p, x] = b.levels();
        assert_eq!((tp, tx), (0.0, 0.0));
        assert!(p > 0.0 && x > 0.0);
    }

    #[test]
    fn caps_dominate_every_sample() {
        let (m, prior, g) = setup(1e4);
        let cfg = ScenarioConfig { sample_count: 40, ..Default::default() };
        let b = scenario_gamma_bounds(&prior, &m, &g, &cfg).unwrap();
        let nominal = transfer_blocks(&m, &g).unwrap();
        for theta in sample_prior(&prior, 40, cfg.seed).unwrap() {
            let s = transfer_blocks(&LinearModel::from_theta(&theta, 4, 1).unwrap(), &g).unwrap();
            let vphi = s.vphi() - nominal.vphi();
            let gap = &b.gamma_tilde_phi - &vphi * vphi.adjoint();
            assert!(crate::linalg::min_eigenvalue_herm(&gap) >= -1e-9);
            let yphi = s.yphi();
            assert!(crate::linalg::min_eigenvalue_herm(&(&b.gamma_phi - &yphi * yphi.adjoint())) >= -1e-9);
        }
    }

    fn nominal_vphi_gram_min(m: &LinearModel, g: &FrequencyGrid) -> f64 {
        let v = transfer_blocks(m, g).unwrap().vphi();
        crate::linalg::min_eigenvalue_herm(&(&v * v.adjoint()))
    }

    #[test]
    fn oversized_prior_rejected() {
        let (m, _, g) = setup(1.0);
        let prior = ParameterEllipsoid::prior(m.theta(), &(RMat::identity(5, 5) * 0.01), 4).unwrap();
        let cfg = ScenarioConfig { sample_count: 30, unstable_samples: UnstablePolicy::Reject, ..Default::default() };
        let r = scenario_gamma_bounds(&prior, &m, &g, &cfg);
        assert!(matches!(r, Err(Error::PriorTooLarge { .. })));
        // retained: the caps exist but dwarf the nominal excitation
        let cfg = ScenarioConfig { sample_count: 30, ..Default::default() };
        let b = scenario_gamma_bounds(&prior, &m, &g, &cfg).unwrap();
        assert!(b.unstable_samples > 15);
        let vphi = nominal_vphi_gram_min(&m, &g);
        assert!(b.levels()[0] > vphi);
    }

    #[test]
    fn noise_bounds_examples() {
        let mut b = UncertaintyBounds::from_levels(4, 1, 20, 0.1, 0.1, 2.0, 3.0);
        let d = RMat::identity(5, 5) * 4.0;
        b = noise_level_bounds(&b, 100.0, 100, &d).unwrap();
        assert_relative_eq!(crate::linalg::cmax_abs(&(&b.w_phi_bar - CMat::identity(5, 5) * C64::new(2.0, 0.0))), 0.0);
        assert_relative_eq!(b.w_z_scalar, 14.0, epsilon = 1e-12);
        let zero = noise_level_bounds(&b, 0.0, 100, &d).unwrap();
        assert_eq!((spectral_norm_c(&zero.w_phi_bar), zero.w_z_scalar), (0.0, 0.0));
        let doubled = noise_level_bounds(&b, 200.0, 100, &d).unwrap();
        assert_relative_eq!(doubled.w_z_scalar, 28.0, epsilon = 1e-12);
        assert!(noise_level_bounds(&b, -1.0, 100, &d).is_err());
    }
}
