//! Least squares, the energy-bound non-falsified parameter set, and the data condition check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_upper, kron_identity_right, min_eigenvalue_sym, spectral_norm, symmetrize, RMat, RVec};
use crate::plant::Trajectory;

/// Relative pivot tolerance for the Cholesky factorization of `ΦΦᵀ`.
pub const GRAM_PIVOT_TOLERANCE: f64 = 1e-12;
/// Relative tolerance applied multiplicatively to the radius in membership tests.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-12;

/// Regressor matrix `Φ = [φ_0 … φ_{T−1}]` with `φ_k = [x_k; u_k]` and stacked targets `x_1 … x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorData {
    /// `n_φ × T`.
    pub phi: RMat,
    /// Length `T·n_x`.
    pub x_stack: RVec,
    /// State dimension.
    pub nx: usize,
}

impl RegressorData {
    pub fn horizon(&self) -> usize {
        self.phi.ncols()
    }

    pub fn nphi(&self) -> usize {
        self.phi.nrows()
    }

    /// Targets as an `n_x × T` matrix `[x_1 … x_T]`.
    pub fn x_matrix(&self) -> RMat {
        RMat::from_column_slice(self.nx, self.horizon(), self.x_stack.as_slice())
    }
}

/// Assemble `Φ` and `X` from a trajectory.
pub fn build_regressors(traj: &Trajectory) -> Result<RegressorData> {
    let t = traj.horizon();
    if t == 0 {
        return Err(Error::InvalidParameter("trajectory horizon T must be at least 1".into()));
    }
    let (nx, nu) = (traj.nx(), traj.nu());
    let mut phi = RMat::zeros(nx + nu, t);
    let mut x_stack = RVec::zeros(nx * t);
    for k in 0..t {
        phi.view_mut((0, k), (nx, 1)).copy_from(&traj.states[k]);
        phi.view_mut((nx, k), (nu, 1)).copy_from(&traj.inputs[k]);
        x_stack.rows_mut(k * nx, nx).copy_from(&traj.states[k + 1]);
    }
    Ok(RegressorData { phi, x_stack, nx })
}

/// Least-squares estimate `θ̂_T` with `P = (ΦΦᵀ)⁻¹ ⊗ I_{n_x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub theta_hat: RVec,
    /// `n_θ × n_θ`, Kronecker structured.
    pub p: RMat,
    /// The `n_φ × n_φ` factor `(ΦΦᵀ)⁻¹`.
    pub gram_inverse: RMat,
    /// Residual sum of squares `Σ_k ‖x_{k+1} − [Â B̂] φ_k‖²`.
    pub residual_sum_of_squares: f64,
    nx: usize,
}

impl ParameterEstimate {
    pub fn nx(&self) -> usize {
        self.nx
    }
}

/// Solve the normal equations via a Cholesky factorization of `ΦΦᵀ`.
pub fn least_squares(reg: &RegressorData) -> Result<ParameterEstimate> {
    let gram = symmetrize(&(&reg.phi * reg.phi.transpose()));
    let max_diag = gram.diagonal().amax();
    let chol = nalgebra::Cholesky::new(gram.clone());
    let well_posed = chol.as_ref().is_some_and(|c| {
        let l = c.l_dirty();
        (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > GRAM_PIVOT_TOLERANCE * max_diag)
    });
    let chol = match (well_posed && max_diag > 0.0, chol) {
        (true, Some(c)) => c,
        _ => {
            let smallest = reg.phi.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
            return Err(Error::SingularRegressor {
                smallest_singular_value: if reg.phi.nrows() > reg.phi.ncols() { 0.0 } else { smallest },
            });
        }
    };
    let gram_inverse = symmetrize(&chol.inverse());
    let xm = reg.x_matrix();
    // [Â B̂] = X Φᵀ (ΦΦᵀ)⁻¹
    let ab = chol.solve(&(&reg.phi * xm.transpose())).transpose();
    let theta_hat = RVec::from_column_slice(ab.as_slice());
    let resid = &xm - &ab * &reg.phi;
    let p = kron_identity_right(&gram_inverse, reg.nx);
    Ok(ParameterEstimate { theta_hat, p, gram_inverse, residual_sum_of_squares: resid.norm_squared(), nx: reg.nx })
}

/// Ellipsoid `{θ : (θ − c)ᵀ S (θ − c) ≤ r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEllipsoid {
    pub center: RVec,
    pub shape: RMat,
    pub radius: f64,
}

impl ParameterEllipsoid {
    /// Build an ellipsoid, validating dimensions and symmetry.
    pub fn new(center: RVec, shape: RMat, radius: f64) -> Result<Self> {
        let n = center.len();
        if shape.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("shape is {:?}, center has length {n}", shape.shape())));
        }
        let asym = (&shape - shape.transpose()).amax();
        if asym > 1e-10 * shape.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!("ellipsoid shape is not symmetric (asymmetry {asym:e})")));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("ellipsoid radius must be non-negative, got {radius}")));
        }
        Ok(Self { center, shape: symmetrize(&shape), radius })
    }

    /// Prior set `{θ : (θ̂_0 − θ)ᵀ (D_0 ⊗ I_{n_x}) (θ̂_0 − θ) ≤ 1}`.
    pub fn prior(center: RVec, d0: &RMat, nx: usize) -> Result<Self> {
        cholesky_upper(d0)?;
        Self::new(center, kron_identity_right(d0, nx), 1.0)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `(θ − c)ᵀ S (θ − c)`.
    pub fn quadratic_form(&self, theta: &RVec) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("θ has length {}, ellipsoid dimension {}", theta.len(), self.dim())));
        }
        let d = theta - &self.center;
        Ok(d.dot(&(&self.shape * &d)))
    }

    /// Membership with relative radius tolerance [`MEMBERSHIP_TOLERANCE`].
    pub fn contains(&self, theta: &RVec) -> Result<bool> {
        Ok(self.quadratic_form(theta)? <= self.radius * (1.0 + MEMBERSHIP_TOLERANCE))
    }

    /// Small structured text record `{center, shape, radius}`.
    pub fn to_record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            center: Vec<f64>,
            shape: Vec<Vec<f64>>,
            radius: f64,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        let rec = Record {
            center: self.center.iter().copied().collect(),
            shape: self.shape.row_iter().map(|r| r.iter().copied().collect()).collect(),
            radius: self.radius,
            _p: std::marker::PhantomData,
        };
        toml::to_string(&rec).expect("ellipsoid record serializes")
    }
}

/// Membership query (free-function form).
pub fn contains(ell: &ParameterEllipsoid, theta: &RVec) -> Result<bool> {
    ell.contains(theta)
}

/// Non-falsified set `Θ_T` with center `θ̂_T`, shape `P⁻¹ = ΦΦᵀ ⊗ I` and radius
/// `G = γ_w + ‖θ̂_T‖²_{P⁻¹} − XᵀX`.
///
/// `G` is evaluated in the algebraically identical form `γ_w − Σ‖x_{k+1} − [Â B̂]φ_k‖²`,
/// which avoids cancellation between `‖θ̂‖²_{P⁻¹}` and `XᵀX`. Values below zero by more than
/// rounding are reported as [`Error::FalsifiedPrior`]; rounding-level negatives are zero.
pub fn nonfalsified_set(reg: &RegressorData, gamma_w: f64) -> Result<ParameterEllipsoid> {
    if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma_w must be non-negative, got {gamma_w}")));
    }
    let est = least_squares(reg)?;
    let g = gamma_w - est.residual_sum_of_squares;
    let rounding = 64.0 * f64::EPSILON * (gamma_w + reg.x_stack.norm_squared());
    if g < -rounding {
        return Err(Error::FalsifiedPrior { g });
    }
    let gram = symmetrize(&(&reg.phi * reg.phi.transpose()));
    ParameterEllipsoid::new(est.theta_hat, kron_identity_right(&gram, reg.nx), g.max(0.0))
}

/// Direct evaluation of the radius formula `G = γ_w + θ̂ᵀP⁻¹θ̂ − XᵀX` (for cross-checks).
pub fn radius_direct(reg: &RegressorData, gamma_w: f64) -> Result<f64> {
    let est = least_squares(reg)?;
    let gram = &reg.phi * reg.phi.transpose();
    let pinv = kron_identity_right(&gram, reg.nx);
    Ok(gamma_w + est.theta_hat.dot(&(pinv * &est.theta_hat)) - reg.x_stack.norm_squared())
}

/// Guaranteed squared-error bound `G·‖P‖ = radius·‖shape⁻¹‖`.
pub fn posterior_error_certificate(ell: &ParameterEllipsoid) -> f64 {
    if ell.radius == 0.0 {
        return 0.0;
    }
    let lmin = crate::linalg::sym_eigenvalues(&ell.shape)[0];
    if lmin <= 0.0 {
        return f64::INFINITY;
    }
    ell.radius / lmin
}

/// Exploration goal `(θ_tr − θ̂)ᵀ (D_des ⊗ I_{n_x}) (θ_tr − θ̂) ≤ 1`.
pub fn goal_satisfied(theta_true: &RVec, theta_hat: &RVec, d_des: &RMat, nx: usize) -> Result<bool> {
    Ok(goal_value(theta_true, theta_hat, d_des, nx)? <= 1.0)
}

/// Left-hand side of the exploration goal.
pub fn goal_value(theta_true: &RVec, theta_hat: &RVec, d_des: &RMat, nx: usize) -> Result<f64> {
    if theta_true.len() != theta_hat.len() || theta_true.len() != d_des.nrows() * nx {
        return Err(Error::DimensionMismatch("goal check dimensions".into()));
    }
    let d = theta_true - theta_hat;
    Ok(d.dot(&(kron_identity_right(d_des, nx) * &d)))
}

/// `Z = [D^{1/2ᵀ}(Xᵀ ⊗ I_{n_φ}); (Φ ⊗ I_{n_x}) ⊗ I_{n_φ}]`, size `(n_φ + n_x n_φ²) × T n_x n_φ`.
pub fn data_z_matrix(reg: &RegressorData, d_des: &RMat) -> Result<RMat> {
    let nphi = reg.nphi();
    let nx = reg.nx;
    let t = reg.horizon();
    if d_des.shape() != (nphi, nphi) {
        return Err(Error::DimensionMismatch(format!("D_des is {:?}, expected {nphi}x{nphi}", d_des.shape())));
    }
    let r = cholesky_upper(d_des)?;
    let rt = r.transpose();
    let cols = t * nx * nphi;
    let mut z = RMat::zeros(nphi + nx * nphi * nphi, cols);
    // top: D^{1/2ᵀ} (Xᵀ ⊗ I_{n_φ}); Xᵀ is 1 × T n_x, so column block m = (k, i) holds x_{k+1,i}·D^{1/2ᵀ}
    for m in 0..t * nx {
        let xv = reg.x_stack[m];
        if xv != 0.0 {
            z.view_mut((0, m * nphi), (nphi, nphi)).copy_from(&(&rt * xv));
        }
    }
    // bottom: (Φ ⊗ I_{n_x n_φ}); entry Φ[a, k] scales I at rows a·n_x n_φ, cols k·n_x n_φ
    let q = nx * nphi;
    for k in 0..t {
        for a in 0..nphi {
            let v = reg.phi[(a, k)];
            if v != 0.0 {
                for d in 0..q {
                    z[(nphi + a * q + d, k * q + d)] = v;
                }
            }
        }
    }
    Ok(z)
}

/// Data condition guaranteeing the identification goal: `[[ΦΦᵀ − γ_w D_des, 0], [0, 0]] + Z Zᵀ ⪰ 0`.
///
/// The upper-left block is `n_φ × n_φ` (not lifted by `⊗ I_{n_x}`): the first block row of `Z`
/// has `n_φ` rows, so this is the only dimensionally consistent reading. A Schur complement
/// on the lower-right block makes the condition equivalent to `ΦΦᵀ ⪰ G·D_des` (see
/// [`data_condition_reduced`]), which is what is evaluated: the lifted matrix mixes the scale
/// `‖D_des‖·‖X‖²` into its eigenvalues, so a relative tolerance on it would accept violations
/// of order `G·‖D_des‖`. A singular `ΦΦᵀ` fails the condition. Accepted when `λ_min(ΦΦᵀ − G·D_des) ≥ −1e-9·‖ΦΦᵀ‖`.
pub fn check_data_condition(reg: &RegressorData, gamma_w: f64, d_des: &RMat) -> Result<bool> {
    let reduced = match data_condition_reduced(reg, gamma_w, d_des) {
        Ok(v) => v,
        // A rank-deficient ΦΦᵀ cannot dominate a positive multiple of an SPD D_des.
        Err(Error::SingularRegressor { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    let scale = spectral_norm(&(&reg.phi * reg.phi.transpose())).max(f64::MIN_POSITIVE);
    Ok(reduced >= -1e-9 * scale)
}

/// The lifted data-condition matrix `blkdiag(ΦΦᵀ − γ_w D_des, 0) + Z Zᵀ`.
pub fn data_condition_matrix(reg: &RegressorData, gamma_w: f64, d_des: &RMat) -> Result<RMat> {
    let nphi = reg.nphi();
    let z = data_z_matrix(reg, d_des)?;
    let mut m = &z * z.transpose();
    let corner = &reg.phi * reg.phi.transpose() - d_des * gamma_w;
    let mut tl = m.view_mut((0, 0), (nphi, nphi));
    tl += corner;
    Ok(symmetrize(&m))
}

/// Schur-reduced form of the data condition: `λ_min(ΦΦᵀ − G·D_des)`, with
/// `G = γ_w − Σ‖x_{k+1} − [Â B̂]φ_k‖²` the non-falsified radius.
pub fn data_condition_reduced(reg: &RegressorData, gamma_w: f64, d_des: &RMat) -> Result<f64> {
    let est = least_squares(reg)?;
    let g = gamma_w - est.residual_sum_of_squares;
    Ok(min_eigenvalue_sym(&(&reg.phi * reg.phi.transpose() - d_des * g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{scalar_inputs, simulate_linear, LinearModel};
    use approx::assert_relative_eq;

    #[test]
    fn single_step_regressors() {
        let m = LinearModel::new(RMat::identity(2, 2) * 0.5, RMat::from_column_slice(2, 1, &[1.0, 2.0])).unwrap();
        let t = simulate_linear(&m, &scalar_inputs(&[1.0]), &[RVec::zeros(2)], &RVec::zeros(2)).unwrap();
        let r = build_regressors(&t).unwrap();
        assert_eq!(r.phi, RMat::from_column_slice(3, 1, &[0.0, 0.0, 1.0]));
        assert_eq!(r.x_stack, t.states[1]);
    }

    #[test]
    fn scalar_two_sample_oracle() {
        // x1 = a x0 + b u0, x2 = a x1 + b u1; data chosen by hand
        let traj = crate::plant::Trajectory::new(
            vec![RVec::from_element(1, 1.0), RVec::from_element(1, 2.0), RVec::from_element(1, 0.5)],
            scalar_inputs(&[1.0, -1.0]),
            vec![RVec::zeros(1); 2],
        )
        .unwrap();
        let r = build_regressors(&traj).unwrap();
        let est = least_squares(&r).unwrap();
        // Normal equations: [[1+4, 1-2],[1-2, 2]] θ = [2+1, 2-0.5]  →  solve by Cramer's rule
        let (a11, a12, a22, b1, b2) = (5.0, -1.0, 2.0, 3.0, 1.5);
        let det = a11 * a22 - a12 * a12;
        let th0 = (b1 * a22 - a12 * b2) / det;
        let th1 = (a11 * b2 - a12 * b1) / det;
        assert_relative_eq!(est.theta_hat[0], th0, epsilon = 1e-14);
        assert_relative_eq!(est.theta_hat[1], th1, epsilon = 1e-14);
    }

    #[test]
    fn singular_regressor_is_error() {
        let traj = crate::plant::Trajectory::new(vec![RVec::zeros(2); 4], scalar_inputs(&[0.0; 3]), vec![RVec::zeros(2); 3]).unwrap();
        let r = build_regressors(&traj).unwrap();
        assert!(matches!(least_squares(&r), Err(Error::SingularRegressor { .. })));
    }

    #[test]
    fn membership_examples() {
        let ell =
            ParameterEllipsoid::new(RVec::from_vec(vec![1.0, 2.0]), RMat::from_diagonal(&RVec::from_vec(vec![2.0, 3.0])), 0.5).unwrap();
        assert!(ell.contains(&ell.center.clone()).unwrap());
        // vᵀSv = 4r
        let v = RVec::from_vec(vec![1.0, 0.0]); // 2 = 4·0.5
        assert!(!ell.contains(&(&ell.center + v)).unwrap());
        let e = RVec::from_vec(vec![0.6, 0.8]);
        let boundary = &ell.center + crate::linalg::sym_inverse_sqrt(&ell.shape).unwrap() * e * ell.radius.sqrt();
        assert!(ell.contains(&boundary).unwrap());
        assert!(matches!(ell.contains(&RVec::zeros(3)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn certificate_examples() {
        let zero = ParameterEllipsoid::new(RVec::zeros(2), RMat::identity(2, 2), 0.0).unwrap();
        assert_eq!(posterior_error_certificate(&zero), 0.0);
        let two = ParameterEllipsoid::new(RVec::zeros(2), RMat::identity(2, 2), 2.0).unwrap();
        assert_relative_eq!(posterior_error_certificate(&two), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_excitation_fails_condition() {
        let traj = crate::plant::Trajectory::new(vec![RVec::zeros(2); 4], scalar_inputs(&[0.0; 3]), vec![RVec::zeros(2); 3]).unwrap();
        let r = build_regressors(&traj).unwrap();
        assert!(!check_data_condition(&r, 1.0, &RMat::identity(3, 3)).unwrap());
    }

    #[test]
    fn condition_flips_at_the_schur_threshold() {
        let m = LinearModel::new(RMat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]), RMat::from_row_slice(2, 1, &[1.0, 0.5])).unwrap();
        let u = scalar_inputs(&[1.0, -0.7, 0.4, 0.9, -1.2, 0.3, 0.8, -0.5, 0.2, -0.9]);
        let w: Vec<RVec> = (0..10).map(|k| RVec::from_vec(vec![0.01 * (k as f64).sin(), 0.01 * (k as f64).cos()])).collect();
        let traj = simulate_linear(&m, &u, &w, &RVec::zeros(2)).unwrap();
        let r = build_regressors(&traj).unwrap();
        let g = nonfalsified_set(&r, 0.01).unwrap().radius;
        let lam = min_eigenvalue_sym(&(&r.phi * r.phi.transpose()));
        let c = lam / g;
        assert!(check_data_condition(&r, 0.01, &(RMat::identity(3, 3) * (0.99 * c))).unwrap());
        assert!(!check_data_condition(&r, 0.01, &(RMat::identity(3, 3) * (1.01 * c))).unwrap());
        // the lifted matrix agrees in the well-scaled case
        let lifted = data_condition_matrix(&r, 0.01, &(RMat::identity(3, 3) * (0.99 * c))).unwrap();
        assert!(min_eigenvalue_sym(&lifted) >= -1e-8 * spectral_norm(&lifted));
    }

    #[test]
    fn record_contains_fields() {
        let ell = ParameterEllipsoid::new(RVec::zeros(2), RMat::identity(2, 2), 1.5).unwrap();
        let rec = ell.to_record();
        assert!(rec.contains("center") && rec.contains("shape") && rec.contains("radius = 1.5"));
    }
}
