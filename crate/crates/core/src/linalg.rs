//! Small dense linear-algebra helpers shared by all modules.

use nalgebra::{Complex, DMatrix, DVector};
use num_traits::{One, Zero};

use crate::error::{Error, Result};

/// Complex scalar.
pub type C64 = Complex<f64>;
/// Dense real matrix.
pub type RMat = DMatrix<f64>;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense real vector.
pub type RVec = DVector<f64>;
/// Dense complex vector.
pub type CVec = DVector<C64>;

/// Kronecker product `a ⊗ b` for any scalar type.
pub fn kron<T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T> + Zero>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::from_element(ar * br, ac * bc, T::zero());
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// `a ⊗ I_n`.
pub fn kron_identity_right<T>(a: &DMatrix<T>, n: usize) -> DMatrix<T>
where
    T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T> + Zero + One,
{
    kron(a, &DMatrix::identity(n, n))
}

/// Promote a real matrix to a complex one.
pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

/// `(m + mᵀ)/2`.
pub fn symmetrize(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

/// `(h + hᴴ)/2`.
pub fn hermitian_part(h: &CMat) -> CMat {
    (h + h.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest absolute entry of `m − mᴴ`.
pub fn hermitian_asymmetry(h: &CMat) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the symmetric part of a real matrix, ascending.
pub fn sym_eigenvalues(m: &RMat) -> Vec<f64> {
    let s = symmetrize(m);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of the symmetric part of a real matrix (`+∞` for an empty matrix).
pub fn min_eigenvalue_sym(m: &RMat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of the Hermitian part of a complex matrix (`+∞` for an empty matrix).
pub fn min_eigenvalue_herm(h: &CMat) -> f64 {
    if h.nrows() == 0 {
        return f64::INFINITY;
    }
    hermitian_part(h).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral norm (largest singular value) of a real matrix.
pub fn spectral_norm(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Spectral norm (largest singular value) of a complex matrix.
pub fn spectral_norm_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Upper-triangular Cholesky factor `R` with `D = RᵀR` (used as `D^{1/2}`).
pub fn cholesky_upper(d: &RMat) -> Result<RMat> {
    let chol = nalgebra::Cholesky::new(symmetrize(d))
        .ok_or_else(|| Error::InvalidParameter("matrix is not symmetric positive definite".into()))?;
    Ok(chol.l().transpose())
}

/// Symmetric inverse square root `S^{-1/2}` of a symmetric positive-definite matrix.
pub fn sym_inverse_sqrt(s: &RMat) -> Result<RMat> {
    let eig = symmetrize(s).symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if eig.eigenvalues.iter().any(|&l| l <= 1e-14 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::InvalidParameter("shape matrix is not positive definite".into()));
    }
    let d = RMat::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Returns `Some(c)` when `d` equals `c·I` to relative tolerance `1e-12`.
pub fn scalar_identity_level(d: &RMat) -> Option<f64> {
    if d.nrows() != d.ncols() || d.nrows() == 0 {
        return None;
    }
    let c = d[(0, 0)];
    let scale = c.abs().max(f64::MIN_POSITIVE);
    for j in 0..d.ncols() {
        for i in 0..d.nrows() {
            let target = if i == j { c } else { 0.0 };
            if (d[(i, j)] - target).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    Some(c)
}

/// Largest entry modulus of a complex matrix.
pub fn cmax_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Block-diagonal matrix from a list of blocks.
pub fn block_diag_c(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Largest modulus of the eigenvalues of a real square matrix.
pub fn spectral_radius(a: &RMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kron_matches_definition() {
        let a = RMat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = RMat::from_row_slice(1, 2, &[5.0, 6.0]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (2, 4));
        assert_eq!(k.row(1).iter().copied().collect::<Vec<_>>(), vec![15.0, 18.0, 20.0, 24.0]);
    }

    #[test]
    fn cholesky_upper_reconstructs() {
        let d = RMat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = cholesky_upper(&d).unwrap();
        assert_eq!(r[(1, 0)], 0.0);
        assert_relative_eq!(r.transpose() * &r, d, epsilon = 1e-14);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let s = RMat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sym_inverse_sqrt(&s).unwrap();
        assert_relative_eq!(&r * &r * &s, RMat::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn scalar_identity_detection() {
        assert_eq!(scalar_identity_level(&(RMat::identity(3, 3) * 2.5)), Some(2.5));
        let mut d = RMat::identity(3, 3);
        d[(0, 1)] = 1e-3;
        assert_eq!(scalar_identity_level(&d), None);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let a = RMat::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&a), 0.5, epsilon = 1e-14);
    }
}
