//! Affine Hermitian LMIs, the real embedding, and assembly of the energy and robust
//! exploration LMIs.

use crate::design::ExplorationProblem;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_asymmetry, kron_identity_right, min_eigenvalue_herm, to_complex, CMat, RMat, RVec, C64};
use crate::sdp::{SdpBlock, SparseSym};

/// Sparse Hermitian matrix as full (both-triangle) complex triplets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HermSparse {
    pub dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl HermSparse {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Add `v` at `(i, j)` and `conj(v)` at `(j, i)` (once on the diagonal, real part only).
    pub fn push_herm(&mut self, i: usize, j: usize, v: C64) {
        if v == C64::new(0.0, 0.0) {
            return;
        }
        if i == j {
            self.entries.push((i, i, C64::new(v.re, 0.0)));
        } else {
            self.entries.push((i, j, v));
            self.entries.push((j, i, v.conj()));
        }
    }

    /// Add `block` at `(r0, c0)` and its adjoint at `(c0, r0)`; the two regions must not
    /// overlap the diagonal.
    pub fn place_offdiag(&mut self, r0: usize, c0: usize, block: &CMat) {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                let v = block[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    self.entries.push((r0 + i, c0 + j, v));
                    self.entries.push((c0 + j, r0 + i, v.conj()));
                }
            }
        }
    }

    /// Add a Hermitian `block` on the diagonal at offset `o` (uses its Hermitian part).
    pub fn place_diag(&mut self, o: usize, block: &CMat) {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                let v = (block[(i, j)] + block[(j, i)].conj()) * 0.5;
                if v != C64::new(0.0, 0.0) {
                    self.entries.push((o + i, o + j, v));
                }
            }
        }
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|e| e.2.im == 0.0)
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// Real symmetric coefficient: `[[Re, −Im], [Im, Re]]` (or just `Re` when `real_only`).
    fn to_real(&self, real_only: bool) -> SparseSym {
        let n = self.dim;
        let mut s = SparseSym::new(if real_only { n } else { 2 * n });
        let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len() * if real_only { 1 } else { 4 });
        for &(i, j, v) in &self.entries {
            if v.re != 0.0 {
                raw.push((i, j, v.re));
                if !real_only {
                    raw.push((i + n, j + n, v.re));
                }
            }
            if !real_only && v.im != 0.0 {
                raw.push((i, j + n, -v.im));
                raw.push((i + n, j, v.im));
            }
        }
        for (i, j, v) in raw {
            // both triangles are already present
            s.push_entry(i, j, v);
        }
        s.compress();
        s
    }
}

/// `constant + Σ_i y_i · coeff_i ⪰ 0` with Hermitian data and real decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub name: String,
    pub constant: CMat,
    pub terms: Vec<(usize, HermSparse)>,
}

impl AffineLmi {
    pub fn new(name: &str, dim: usize) -> Self {
        Self { name: name.to_string(), constant: CMat::zeros(dim, dim), terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Coefficient matrix of `var`, creating it if absent.
    pub fn coeff_mut(&mut self, var: usize) -> &mut HermSparse {
        if let Some(pos) = self.terms.iter().position(|t| t.0 == var) {
            &mut self.terms[pos].1
        } else {
            let dim = self.dim();
            self.terms.push((var, HermSparse::new(dim)));
            &mut self.terms.last_mut().expect("just pushed").1
        }
    }

    /// Check that every matrix is Hermitian and has the right size.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let asym = hermitian_asymmetry(&self.constant);
        if asym > 1e-10 * (1.0 + crate::linalg::cmax_abs(&self.constant)) {
            return Err(Error::NonHermitian { asymmetry: asym });
        }
        for (_, t) in &self.terms {
            if t.dim != n {
                return Err(Error::DimensionMismatch(format!("coefficient of {} has the wrong size", self.name)));
            }
            let d = t.to_dense();
            let asym = hermitian_asymmetry(&d);
            if asym > 1e-10 * (1.0 + crate::linalg::cmax_abs(&d)) {
                return Err(Error::NonHermitian { asymmetry: asym });
            }
        }
        Ok(())
    }

    /// `constant + Σ_i y_i · coeff_i`.
    pub fn evaluate(&self, y: &RVec) -> CMat {
        let mut m = self.constant.clone();
        for (i, t) in &self.terms {
            let yi = y[*i];
            if yi != 0.0 {
                for &(r, c, v) in t.entries() {
                    m[(r, c)] += v * yi;
                }
            }
        }
        m
    }

    /// Minimum eigenvalue at `y`.
    pub fn min_eigenvalue(&self, y: &RVec) -> f64 {
        min_eigenvalue_herm(&self.evaluate(y))
    }

    /// Magnitude used to scale feasibility tolerances: the largest entry of any term at `y`.
    pub fn scale(&self, y: &RVec) -> f64 {
        let mut s = crate::linalg::cmax_abs(&self.constant);
        for (i, t) in &self.terms {
            for &(_, _, v) in t.entries() {
                s = s.max((v * y[*i]).norm());
            }
        }
        s.max(1.0)
    }

    /// All data real (no embedding needed).
    pub fn is_real(&self) -> bool {
        self.constant.iter().all(|z| z.im == 0.0) && self.terms.iter().all(|(_, t)| t.is_real())
    }

    /// Real symmetric SDP block; complex LMIs are embedded via [`hermitian_to_real`].
    pub fn to_sdp_block(&self) -> Result<SdpBlock> {
        let real = self.is_real();
        let constant = if real { self.constant.map(|z| z.re) } else { hermitian_to_real(&self.constant)? };
        let coeffs = self.terms.iter().map(|(i, t)| (*i, t.to_real(real))).collect();
        Ok(SdpBlock { name: self.name.clone(), constant, coeffs })
    }
}

/// Real embedding `[[Re H, −Im H], [Im H, Re H]]` of a Hermitian matrix. `H ⪰ 0` iff the
/// embedding is PSD, and every eigenvalue of `H` appears twice.
pub fn hermitian_to_real(h: &CMat) -> Result<RMat> {
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch("hermitian_to_real needs a square matrix".into()));
    }
    let asym = hermitian_asymmetry(h);
    if asym > 1e-10 * crate::linalg::cmax_abs(h).max(1.0) {
        return Err(Error::NonHermitian { asymmetry: asym });
    }
    let n = h.nrows();
    let mut r = RMat::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = h[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    Ok(r)
}

/// Real symmetric matrix variable `D = Σ_{a ≤ b} d_ab (E_ab + E_ba)/(1 + [a = b]) ⊗ I_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymMatrixVar {
    /// Dimension of the free factor.
    pub dim: usize,
    /// Kronecker multiplicity `k` (`1` for an unstructured matrix).
    pub kron: usize,
    /// Index of the first scalar variable.
    pub base: usize,
}

impl SymMatrixVar {
    pub fn count(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Variable index of entry `(a, b)`.
    pub fn index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        // column-packed upper triangle
        self.base + b * (b + 1) / 2 + a
    }

    /// Full dimension `dim · kron`.
    pub fn full_dim(&self) -> usize {
        self.dim * self.kron
    }

    /// The free factor at `y`.
    pub fn factor(&self, y: &RVec) -> RMat {
        RMat::from_fn(self.dim, self.dim, |a, b| y[self.index(a, b)])
    }

    /// The full matrix `factor ⊗ I_k` at `y`.
    pub fn full(&self, y: &RVec) -> RMat {
        kron_identity_right(&self.factor(y), self.kron)
    }

    /// Add `sign · D` to `lmi` on the diagonal at offset `o`.
    pub fn add_to(&self, lmi: &mut AffineLmi, o: usize, sign: f64) {
        for b in 0..self.dim {
            for a in 0..=b {
                let var = self.index(a, b);
                let h = lmi.coeff_mut(var);
                for p in 0..self.kron {
                    h.push_herm(o + a * self.kron + p, o + b * self.kron + p, C64::new(sign, 0.0));
                }
            }
        }
    }
}

/// Indices of all decision variables of the exploration SDP.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariables {
    /// Amplitude `ū(ω_l)_u` has index `u[l·n_u + u]`.
    pub u: Vec<usize>,
    pub gamma_e: usize,
    /// Multipliers; `None` when the corresponding uncertainty cap is exactly zero and the
    /// τ-free nominal LMI is used instead.
    pub tau: [Option<usize>; 3],
    pub dbar: [SymMatrixVar; 3],
    pub total: usize,
}

impl DesignVariables {
    /// Lay out the variables: amplitudes, γ_e, present multipliers, then the three D̄.
    pub fn new(l_nu: usize, tau_present: [bool; 3], dbar_dim: usize, kron: usize) -> Self {
        let u: Vec<usize> = (0..l_nu).collect();
        let mut next = l_nu;
        let gamma_e = next;
        next += 1;
        let mut tau = [None; 3];
        for (k, present) in tau_present.iter().enumerate() {
            if *present {
                tau[k] = Some(next);
                next += 1;
            }
        }
        let mut dbar = [SymMatrixVar { dim: dbar_dim, kron, base: 0 }; 3];
        for d in &mut dbar {
            d.base = next;
            next += d.count();
        }
        Self { u, gamma_e, tau, dbar, total: next }
    }
}

/// Energy LMI `[[γ_e, 1ᵀU_eᵀ], [U_e 1, γ_e I]] ⪰ 0` over amplitude variables `u` and `gamma_e`.
pub fn build_energy_lmi(u: &[usize], gamma_e: usize) -> AffineLmi {
    let n = u.len();
    let mut lmi = AffineLmi::new("S_energy-bound", n + 1);
    {
        let g = lmi.coeff_mut(gamma_e);
        for i in 0..=n {
            g.push_herm(i, i, C64::new(1.0, 0.0));
        }
    }
    for (k, &var) in u.iter().enumerate() {
        lmi.coeff_mut(var).push_herm(0, k + 1, C64::new(1.0, 0.0));
    }
    lmi
}

/// The three robust exploration LMIs and the coupling constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationLmis {
    pub s1: AffineLmi,
    pub s2: AffineLmi,
    pub s3: AffineLmi,
    pub coupling: AffineLmi,
    /// Whether the Kronecker factor `I_{n_φ}` was factored out of S1/S2.
    pub factored: bool,
}

impl ExplorationLmis {
    pub fn all(&self) -> [&AffineLmi; 4] {
        [&self.s1, &self.s2, &self.s3, &self.coupling]
    }
}

/// Shared pieces of the assembly, in factored or full coordinates.
struct Pieces {
    /// Row count of the Z-space (`1 + n_x n_φ` factored, `n_φ + n_x n_φ²` full).
    r: usize,
    /// `Ẑ` (factored or full).
    z: CMat,
    /// `Ẑ(V̂_z ⊗ I)` (r × L n_u · k1) for S1.
    b1: CMat,
    /// Coefficient block of `U_{l,u}` in `M_1` (r × k1) and its column offset multiplier k1.
    m1_block: CMat,
    k1: usize,
    /// `Ẑ((Γ̃_z − V̂_zV̂_zᴴ) ⊗ I)Ẑᴴ`.
    s1_lr_tau: CMat,
    /// Multiplicity of the S2 top block per amplitude (`n_x` factored, `n_x n_φ` full).
    k2: usize,
    /// `[0; V̂_φ ⊗ I_{k2}]` (r × L n_u k2).
    b2: CMat,
    /// `[[0,0],[0,(Γ̃_φ − V̂_φV̂_φᴴ) ⊗ I_{k2}]]` (r × r).
    s2_lr_tau: CMat,
}

/// Assemble S_exp-1, S_exp-2, S_exp-3 and `D̄_1 + D̄_2 + D̄_3 ⪰ 0`.
///
/// With `factored = true` (requires `D_des = c·I`) the identity factor `I_{n_φ}` is removed
/// from S_exp-1/S_exp-2 and every `D̄_i` is restricted to `D_{i,f} ⊗ I_{n_φ}`, which loses no
/// generality because the best `D̄_1`, `D̄_2` (Schur complements of S_exp-1/2) and hence
/// `D̄_3 = −D̄_1 − D̄_2` have exactly that structure.
pub fn build_exploration_lmis(prob: &ExplorationProblem, vars: &DesignVariables, factored: bool) -> Result<ExplorationLmis> {
    let nx = prob.nominal.nx();
    let nu = prob.nominal.nu();
    let nphi = nx + nu;
    let l = prob.grid.len();
    let eps = prob.epsilon;
    let one_m = 1.0 - eps;
    let c1 = C64::new(1.0, 0.0);
    let pieces = pieces(prob, factored)?;
    let r = pieces.r;
    if vars.dbar.iter().any(|d| d.dim != r || d.full_dim() != r_full(nx, nphi)) || vars.u.len() != l * nu {
        return Err(Error::DimensionMismatch("design variable layout does not match the problem".into()));
    }
    let zero_tilde_x = crate::linalg::cmax_abs(&prob.bounds.gamma_tilde_x) == 0.0;
    let zero_tilde_phi = crate::linalg::cmax_abs(&prob.bounds.gamma_tilde_phi) == 0.0;
    // τ may be kept with a zero cap (S-procedure form); dropping it requires a zero cap.
    if (vars.tau[0].is_none() && !zero_tilde_x) || ((vars.tau[1].is_none() || vars.tau[2].is_none()) && !zero_tilde_phi) {
        return Err(Error::DimensionMismatch("a multiplier is missing for a nonzero uncertainty cap".into()));
    }

    // S_exp-1/2 live in the (possibly factored) Z-space, where D̄_i enters as its factor.
    let d1 = SymMatrixVar { kron: 1, ..vars.dbar[0] };
    let d2 = SymMatrixVar { kron: 1, ..vars.dbar[1] };

    // ---------------- S_exp-1 ----------------
    let t1 = l * nu * pieces.k1;
    let s1 = if let Some(tau) = vars.tau[0] {
        let mut s = AffineLmi::new("S_exp-1", t1 + r);
        {
            let h = s.coeff_mut(tau);
            for i in 0..t1 {
                h.push_herm(i, i, c1);
            }
            h.place_offdiag(t1, 0, &(-&pieces.b1));
            h.place_diag(t1, &(-&pieces.s1_lr_tau));
        }
        for (k, &var) in vars.u.iter().enumerate() {
            s.coeff_mut(var).place_offdiag(t1, k * pieces.k1, &(&pieces.m1_block * C64::new(one_m, 0.0)));
        }
        d1.add_to(&mut s, t1, -1.0);
        s
    } else {
        // nominal: M_1 B_1ᴴ + B_1 M_1ᴴ − D̄_1 ⪰ 0
        let mut s = AffineLmi::new("S_exp-1", r);
        for (k, &var) in vars.u.iter().enumerate() {
            let mut m = CMat::zeros(r, t1);
            m.view_mut((0, k * pieces.k1), pieces.m1_block.shape()).copy_from(&(&pieces.m1_block * C64::new(one_m, 0.0)));
            let prod = &m * pieces.b1.adjoint();
            s.coeff_mut(var).place_diag(0, &(&prod + prod.adjoint()));
        }
        d1.add_to(&mut s, 0, -1.0);
        s
    };

    // ---------------- S_exp-2 ----------------
    let t2 = l * nu * pieces.k2;
    let w_z = (one_m / eps) * prob.bounds.w_z_scalar;
    let zzh = &pieces.z * pieces.z.adjoint();
    let mut s2_lr_const = -&zzh * C64::new(one_m, 0.0);
    for i in 0..r {
        s2_lr_const[(i, i)] -= C64::new(w_z, 0.0);
    }
    // coefficient block of U_{l,u}: (1−ε) Ẑ[:, l·k2 .. (l+1)·k2] placed in the lower-left at
    // column (l n_u + u)·k2
    let u_block = |k: usize| -> CMat {
        let lidx = k / nu;
        pieces.z.columns(lidx * pieces.k2, pieces.k2).into_owned() * C64::new(one_m, 0.0)
    };
    let s2 = if let Some(tau) = vars.tau[1] {
        let mut s = AffineLmi::new("S_exp-2", t2 + r);
        s.constant.view_mut((t2, t2), (r, r)).copy_from(&s2_lr_const);
        {
            let h = s.coeff_mut(tau);
            for i in 0..t2 {
                h.push_herm(i, i, c1);
            }
            h.place_offdiag(t2, 0, &(-&pieces.b2));
            h.place_diag(t2, &(-&pieces.s2_lr_tau));
        }
        for (k, &var) in vars.u.iter().enumerate() {
            s.coeff_mut(var).place_offdiag(t2, k * pieces.k2, &u_block(k));
        }
        d2.add_to(&mut s, t2, -1.0);
        s
    } else {
        // nominal: (1−ε)(b (U⊗I) Ẑᴴ + h.c.) − (1−ε)ẐẐᴴ − W − D̄_2 ⪰ 0
        let mut s = AffineLmi::new("S_exp-2", r);
        s.constant.copy_from(&s2_lr_const);
        for (k, &var) in vars.u.iter().enumerate() {
            let lb = u_block(k); // r × k2 = (1−ε)Ẑ[:, l-block]
            let bcols = pieces.b2.columns(k * pieces.k2, pieces.k2).into_owned(); // r × k2
            let prod = &bcols * lb.adjoint();
            s.coeff_mut(var).place_diag(0, &(&prod + prod.adjoint()));
        }
        d2.add_to(&mut s, 0, -1.0);
        s
    };

    // ---------------- S_exp-3 ----------------
    let vphi = prob.nominal.vphi();
    let u_hat = &prob.u_hat;
    let lnu = l * nu;
    let c_prime = -(&prob.bounds.w_phi_bar * C64::new(one_m / eps, 0.0))
        - to_complex(&prob.d_des) * C64::new(prob.gamma_w / prob.horizon as f64, 0.0);
    let uhat_c = to_complex(u_hat);
    let tl_const = -(&uhat_c * uhat_c.transpose()) * C64::new(one_m, 0.0);
    // coefficient of U_{l,u} in (1−ε)(UÛᵀ + ÛUᵀ): rows (l n_u + u) of Ûᵀ and the transpose
    let tl_coeff = |k: usize| -> CMat {
        let lidx = k / nu;
        let mut e = CMat::zeros(lnu, lnu);
        for j in 0..lnu {
            e[(k, j)] += C64::new(one_m * u_hat[(j, lidx)], 0.0);
            e[(j, k)] += C64::new(one_m * u_hat[(j, lidx)], 0.0);
        }
        e
    };
    // S_exp-3 keeps the full Z-space: its top n_φ rows coincide in both coordinate systems
    // (factored rows are a·n_φ + p with a = 0 for the top block).
    let s3 = if let Some(tau) = vars.tau[2] {
        let mut s = AffineLmi::new("S_exp-3", lnu + r_full(nx, nphi));
        s.constant.view_mut((0, 0), (lnu, lnu)).copy_from(&tl_const);
        s.constant.view_mut((lnu, lnu), (nphi, nphi)).copy_from(&c_prime);
        {
            let h = s.coeff_mut(tau);
            for i in 0..lnu {
                h.push_herm(i, i, c1);
            }
            h.place_offdiag(lnu, 0, &(-&vphi));
            let gt = &prob.bounds.gamma_tilde_phi - &vphi * vphi.adjoint();
            h.place_diag(lnu, &(-gt));
        }
        for (k, &var) in vars.u.iter().enumerate() {
            s.coeff_mut(var).place_diag(0, &tl_coeff(k));
        }
        vars.dbar[2].add_to(&mut s, lnu, -1.0);
        s
    } else {
        let mut s = AffineLmi::new("S_exp-3", r_full(nx, nphi));
        let top = &vphi * &tl_const * vphi.adjoint() + &c_prime;
        s.constant.view_mut((0, 0), (nphi, nphi)).copy_from(&top);
        for (k, &var) in vars.u.iter().enumerate() {
            let blk = &vphi * tl_coeff(k) * vphi.adjoint();
            s.coeff_mut(var).place_diag(0, &blk);
        }
        vars.dbar[2].add_to(&mut s, 0, -1.0);
        s
    };

    // ---------------- coupling ----------------
    let d = vars.dbar[0].dim;
    let mut coupling = AffineLmi::new("D̄_1+D̄_2+D̄_3", d);
    for dv in &vars.dbar {
        let unit = SymMatrixVar { kron: 1, ..*dv };
        unit.add_to(&mut coupling, 0, 1.0);
    }
    Ok(ExplorationLmis { s1, s2, s3, coupling, factored })
}

/// Row count `n_φ + n_x n_φ²` of the full Z-space.
pub fn r_full(nx: usize, nphi: usize) -> usize {
    nphi + nx * nphi * nphi
}

fn pieces(prob: &ExplorationProblem, factored: bool) -> Result<Pieces> {
    let nx = prob.nominal.nx();
    let nu = prob.nominal.nu();
    let nphi = nx + nu;
    let l = prob.grid.len();
    let vz = prob.nominal.vz(prob.convention);
    let gz = prob.gamma_tilde_z();
    let vphi = prob.nominal.vphi();
    let gphi = &prob.bounds.gamma_tilde_phi - &vphi * vphi.adjoint();
    if factored {
        let c = crate::linalg::scalar_identity_level(&prob.d_des)
            .ok_or_else(|| Error::InvalidParameter("factored formulation requires D_des = c·I".into()))?;
        let zf = prob.z_hat_factored()?;
        let r = 1 + nx * nphi;
        let b1 = &zf * &vz;
        let mut m1 = CMat::zeros(r, 1);
        m1[(0, 0)] = C64::new(c.sqrt(), 0.0);
        let s1_lr_tau = &zf * (&gz - &vz * vz.adjoint()) * zf.adjoint();
        let mut b2 = CMat::zeros(r, l * nu * nx);
        b2.view_mut((1, 0), (nphi * nx, l * nu * nx)).copy_from(&kron_identity_right(&vphi, nx));
        let mut s2_lr_tau = CMat::zeros(r, r);
        s2_lr_tau.view_mut((1, 1), (nphi * nx, nphi * nx)).copy_from(&kron_identity_right(&gphi, nx));
        Ok(Pieces { r, z: zf, b1, m1_block: m1, k1: 1, s1_lr_tau, k2: nx, b2, s2_lr_tau })
    } else {
        let q = nx * nphi;
        let z = prob.z_hat.clone();
        let r = r_full(nx, nphi);
        let vz_k = kron_identity_right(&vz, nphi);
        let b1 = &z * &vz_k;
        let rt = to_complex(&crate::linalg::cholesky_upper(&prob.d_des)?.transpose());
        let mut m1 = CMat::zeros(r, nphi);
        m1.view_mut((0, 0), (nphi, nphi)).copy_from(&rt);
        let s1_lr_tau = &z * kron_identity_right(&(&gz - &vz * vz.adjoint()), nphi) * z.adjoint();
        let mut b2 = CMat::zeros(r, l * nu * q);
        b2.view_mut((nphi, 0), (nphi * q, l * nu * q)).copy_from(&kron_identity_right(&vphi, q));
        let mut s2_lr_tau = CMat::zeros(r, r);
        s2_lr_tau.view_mut((nphi, nphi), (nphi * q, nphi * q)).copy_from(&kron_identity_right(&gphi, q));
        Ok(Pieces { r, z, b1, m1_block: m1, k1: nphi, s1_lr_tau, k2: q, b2, s2_lr_tau })
    }
}
