//! A primal-dual interior-point solver for linear matrix inequalities.
//!
//! Problems are posed in the "LMI form" used by the design layer:
//!
//! ```text
//! minimize   cᵀy
//! subject to F_{k,0} + Σ_i y_i F_{k,i} ⪰ 0     for every block k
//! ```
//!
//! Internally this is the dual of the standard-form SDP
//! `min ⟨C, X⟩ s.t. ⟨A_i, X⟩ = b_i, X ⪰ 0` with `C = F_0`, `A_i = −F_i`, `b = −c`. The solver
//! is an infeasible-start primal-dual path-following method with the HKM search direction and
//! Mehrotra's predictor-corrector; the Schur complement `M_ij = tr(A_i X A_j Z⁻¹)` is assembled
//! from the sparse coefficient matrices.

use std::time::Instant;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, RMat, RVec};

/// Symmetric sparse matrix stored as full (both-triangle) coordinate triplets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSym {
    pub dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Add `v` at `(i, j)` and, if `i ≠ j`, at `(j, i)`.
    pub fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        debug_assert!(i < self.dim && j < self.dim);
        self.entries.push((i, j, v));
        if i != j {
            self.entries.push((j, i, v));
        }
    }

    /// Merge duplicate coordinates and drop zeros.
    /// Add a single triplet without mirroring; the caller supplies both triangles.
    pub fn push_entry(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            debug_assert!(i < self.dim && j < self.dim);
            self.entries.push((i, j, v));
        }
    }

    pub fn compress(&mut self) {
        self.entries.sort_by_key(|a| (a.1, a.0));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(i, j, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        self.entries = out;
    }

    /// Build from a dense symmetric matrix (entries with `|v| ≤ drop` are skipped).
    pub fn from_dense(m: &RMat, drop: f64) -> Self {
        let mut s = Self::new(m.nrows());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v.abs() > drop {
                    s.entries.push((i, j, v));
                }
            }
        }
        s
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
    }

    /// `⟨self, X⟩ = Σ s_ij X_ij`.
    pub fn inner(&self, x: &RMat) -> f64 {
        self.entries.iter().map(|&(i, j, v)| v * x[(i, j)]).sum()
    }

    /// `out += a · self`.
    pub fn add_to(&self, out: &mut RMat, a: f64) {
        for &(i, j, v) in &self.entries {
            out[(i, j)] += a * v;
        }
    }

    pub fn to_dense(&self) -> RMat {
        let mut m = RMat::zeros(self.dim, self.dim);
        self.add_to(&mut m, 1.0);
        m
    }

    fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.2 *= s;
        }
    }
}

/// One LMI block `F_0 + Σ_i y_i F_i ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlock {
    pub name: String,
    pub constant: RMat,
    pub coeffs: Vec<(usize, SparseSym)>,
}

impl SdpBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// `F_0 + Σ_i y_i F_i`.
    pub fn evaluate(&self, y: &RVec) -> RMat {
        let mut m = self.constant.clone();
        for (i, f) in &self.coeffs {
            f.add_to(&mut m, y[*i]);
        }
        m
    }
}

/// `min cᵀy` subject to a list of LMI blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub objective: RVec,
    pub blocks: Vec<SdpBlock>,
}

impl SdpProblem {
    pub fn new(n_vars: usize) -> Self {
        Self { objective: RVec::zeros(n_vars), blocks: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// SDPA sparse text (`min cᵀy s.t. Σ y_i F_i − F_0 ⪰ 0`, so `F_0` is the negated
    /// constant), readable by most SDP solvers; useful for cross-checking a problem.
    pub fn to_sdpa(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.n_vars());
        let _ = writeln!(out, "{}", self.blocks.len());
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.dim().to_string()).collect();
        let _ = writeln!(out, "{}", sizes.join(" "));
        let c: Vec<String> = self.objective.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", c.join(" "));
        for (k, b) in self.blocks.iter().enumerate() {
            for j in 0..b.dim() {
                for i in 0..=j {
                    let v = b.constant[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "0 {} {} {} {:e}", k + 1, i + 1, j + 1, -v);
                    }
                }
            }
            for (var, f) in &b.coeffs {
                let d = f.to_dense();
                for j in 0..b.dim() {
                    for i in 0..=j {
                        if d[(i, j)] != 0.0 {
                            let _ = writeln!(out, "{} {} {} {} {:e}", var + 1, k + 1, i + 1, j + 1, d[(i, j)]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Require `y_var ≥ 0` (a `1 × 1` block).
    pub fn add_nonnegative(&mut self, var: usize, name: &str) {
        let mut f = SparseSym::new(1);
        f.push_sym(0, 0, 1.0);
        self.blocks.push(SdpBlock { name: name.to_string(), constant: RMat::zeros(1, 1), coeffs: vec![(var, f)] });
    }

    fn validate(&self) -> Result<()> {
        let m = self.n_vars();
        for b in &self.blocks {
            if b.constant.nrows() != b.constant.ncols() {
                return Err(Error::DimensionMismatch(format!("block {} constant is not square", b.name)));
            }
            for (i, f) in &b.coeffs {
                if *i >= m || f.dim != b.dim() {
                    return Err(Error::DimensionMismatch(format!("block {} has an inconsistent coefficient", b.name)));
                }
            }
        }
        Ok(())
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    /// All residuals and the relative gap are below the tolerance.
    Optimal,
    /// Progress stalled with residuals below the relaxed tolerance.
    Inaccurate,
    /// A certificate shows that no `y` satisfies the LMIs.
    Infeasible,
    /// The objective is unbounded below.
    Unbounded,
    /// The iteration limit was reached without meeting any criterion.
    MaxIterations,
    /// A factorization failed.
    NumericalFailure,
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub y: RVec,
    pub objective: f64,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    /// For [`SdpStatus::Infeasible`]: the share of the certificate `⟨F_0, X⟩` carried by each
    /// block (largest first), identifying the conflicting LMIs.
    pub infeasibility_blocks: Vec<(String, f64)>,
    pub seconds: f64,
}

/// Solver tolerances and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpSettings {
    pub tolerance: f64,
    pub relaxed_tolerance: f64,
    pub infeasibility_tolerance: f64,
    /// Largest relative gap accepted for an [`SdpStatus::Inaccurate`] result (whose
    /// feasibility residuals must still meet `relaxed_tolerance`).
    pub relaxed_gap: f64,
    /// Largest primal residual `‖b − A(X)‖` accepted for an [`SdpStatus::Inaccurate`]
    /// result. The multiplier `X` only certifies optimality; feasibility of the returned
    /// decision vector is governed by the dual residual, which must meet
    /// `relaxed_tolerance`.
    pub relaxed_primal_tolerance: f64,
    pub max_iterations: usize,
    /// Factors applied to the default starting point `(X_0, Z_0)` on successive attempts;
    /// a later factor is tried only when the previous attempt stalled (numerical failure or
    /// iteration limit).
    pub restart_scales: Vec<f64>,
    /// Stop with [`SdpStatus::Inaccurate`] once the decision vector is feasible (dual residual
    /// within `relaxed_tolerance`, primal within `relaxed_primal_tolerance`, gap within
    /// `stagnation_gap`) and the objective has moved by less than `stagnation_tolerance`
    /// (relative) over the last `stagnation_window` iterations. This handles problems whose
    /// multiplier side degenerates near the optimum: there the gap stalls while the
    /// objective is already settled.
    pub stagnation_window: usize,
    pub stagnation_tolerance: f64,
    pub stagnation_gap: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            relaxed_tolerance: 1e-5,
            infeasibility_tolerance: 1e-8,
            relaxed_gap: 1e-3,
            relaxed_primal_tolerance: 1e-3,
            max_iterations: 100,
            restart_scales: vec![1.0, 100.0, 0.01],
            stagnation_window: 10,
            stagnation_tolerance: 1e-5,
            stagnation_gap: 1e-2,
        }
    }
}

/// Narrow solver interface: linear objective, affine PSD constraints.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;
}

/// The in-crate interior-point solver.
#[derive(Debug, Clone, Default)]
pub struct InteriorPointSolver {
    pub settings: SdpSettings,
}

impl InteriorPointSolver {
    pub fn new(settings: SdpSettings) -> Self {
        Self { settings }
    }
}

impl ConicSolver for InteriorPointSolver {
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        problem.validate()?;
        let ipm = Ipm::new(problem, &self.settings);
        let scales = if self.settings.restart_scales.is_empty() { vec![1.0] } else { self.settings.restart_scales.clone() };
        // When every attempt stalls, report the one whose final point is closest to optimal.
        let merit = |out: &Result<SdpSolution>| match out {
            Ok(sol) => sol.primal_infeasibility.max(sol.dual_infeasibility).max(sol.relative_gap),
            Err(_) => f64::INFINITY,
        };
        let mut best: Option<Result<SdpSolution>> = None;
        for (k, &scale) in scales.iter().enumerate() {
            let out = ipm.run(scale);
            match &out {
                Ok(sol) if matches!(sol.status, SdpStatus::NumericalFailure | SdpStatus::MaxIterations) => {}
                Err(Error::SolverFailure(_)) => {}
                _ => return out,
            }
            if k + 1 < scales.len() {
                log::debug!("ipm attempt {} stalled; restarting with starting-point scale {}", k + 1, scales[k + 1]);
            }
            if best.as_ref().map_or(true, |b| merit(&out) < merit(b)) {
                best = Some(out);
            }
        }
        best.expect("at least one attempt")
    }
}

/// Coefficient matrix of one variable in one block, with its distinct row set.
struct Coef {
    var: usize,
    mat: SparseSym,
    rows: Vec<usize>,
}

struct Block {
    name: String,
    n: usize,
    c: RMat,
    coefs: Vec<Coef>,
}

struct Ipm<'a> {
    settings: &'a SdpSettings,
    blocks: Vec<Block>,
    /// `b` in the scaled problem.
    b: RVec,
    /// Variable scaling: `y_original = y_scaled · var_scale`.
    var_scale: RVec,
    /// Block scaling applied to `C` and all `A_i` of each block.
    block_scale: Vec<f64>,
    /// Scaling of `b` (objective normalization).
    obj_scale: f64,
    m: usize,
}

struct State {
    x: Vec<RMat>,
    z: Vec<RMat>,
    y: RVec,
}

fn max_step(s: &RMat, ds: &RMat) -> Option<f64> {
    let n = s.nrows();
    if n == 1 {
        let (v, d) = (s[(0, 0)], ds[(0, 0)]);
        return Some(if d >= 0.0 { f64::INFINITY } else { -v / d });
    }
    let w = match Cholesky::new(s.clone()) {
        Some(chol) => {
            let l = chol.l();
            let w = l.solve_lower_triangular(ds)?;
            l.solve_lower_triangular(&w.transpose())?
        }
        // Nearly singular iterate: use S^{-1/2} from an eigendecomposition with the
        // eigenvalues floored at a tiny fraction of the largest one.
        None => {
            let eig = symmetrize(s).symmetric_eigen();
            let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
            if !(top > 0.0) {
                return None;
            }
            let floor = top * 1e-14;
            let inv_sqrt = RVec::from_iterator(n, eig.eigenvalues.iter().map(|&v| 1.0 / v.max(floor).sqrt()));
            let root = &eig.eigenvectors * RMat::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
            &root * ds * &root
        }
    };
    let lmin = symmetrize(&w).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

impl<'a> Ipm<'a> {
    fn new(p: &SdpProblem, settings: &'a SdpSettings) -> Self {
        let m = p.n_vars();
        // Block scaling: normalize each block's data to unit magnitude.
        let mut blocks: Vec<Block> = Vec::with_capacity(p.blocks.len());
        let mut block_scale = Vec::with_capacity(p.blocks.len());
        for blk in &p.blocks {
            let mut mag = blk.constant.norm();
            for (_, f) in &blk.coeffs {
                mag = mag.max(f.frobenius_norm());
            }
            let s = if mag > 0.0 { 1.0 / mag } else { 1.0 };
            block_scale.push(s);
            let mut coefs: Vec<Coef> = Vec::new();
            for (var, f) in &blk.coeffs {
                let mut mat = f.clone();
                mat.scale(-s); // A_i = −F_i
                if let Some(existing) = coefs.iter_mut().find(|c| c.var == *var) {
                    existing.mat.entries.extend(mat.entries);
                } else {
                    coefs.push(Coef { var: *var, mat, rows: Vec::new() });
                }
            }
            for c in &mut coefs {
                c.mat.compress();
                let mut rows: Vec<usize> = c.mat.entries.iter().map(|e| e.0).collect();
                rows.sort_unstable();
                rows.dedup();
                c.rows = rows;
            }
            coefs.retain(|c| c.mat.nnz() > 0);
            blocks.push(Block { name: blk.name.clone(), n: blk.dim(), c: &blk.constant * s, coefs });
        }
        // Variable scaling: unit Frobenius norm of each variable's stacked coefficient.
        let mut col = vec![0.0f64; m];
        for blk in &blocks {
            for c in &blk.coefs {
                col[c.var] += c.mat.frobenius_norm().powi(2);
            }
        }
        let var_scale = RVec::from_iterator(m, col.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }));
        for blk in &mut blocks {
            for c in &mut blk.coefs {
                c.mat.scale(var_scale[c.var]);
            }
        }
        let b_unscaled = RVec::from_iterator(m, (0..m).map(|i| -p.objective[i] * var_scale[i]));
        let bn = b_unscaled.amax();
        let obj_scale = if bn > 0.0 { 1.0 / bn } else { 1.0 };
        Self { settings, blocks, b: b_unscaled * obj_scale, var_scale, block_scale, obj_scale, m }
    }

    /// `A(X)_i = Σ_k ⟨A_{k,i}, X_k⟩`.
    fn a_op(&self, x: &[RMat]) -> RVec {
        let mut out = RVec::zeros(self.m);
        for (blk, xk) in self.blocks.iter().zip(x) {
            for c in &blk.coefs {
                out[c.var] += c.mat.inner(xk);
            }
        }
        out
    }

    /// `(Aᵀy)_k = Σ_i y_i A_{k,i}`.
    fn at_op(&self, y: &RVec) -> Vec<RMat> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut m = RMat::zeros(blk.n, blk.n);
                for c in &blk.coefs {
                    c.mat.add_to(&mut m, y[c.var]);
                }
                m
            })
            .collect()
    }

    fn initial_state(&self, scale: f64) -> State {
        let mut x = Vec::new();
        let mut z = Vec::new();
        for blk in &self.blocks {
            let n = blk.n as f64;
            let mut xi = 10.0f64.max(n.sqrt());
            let mut eta = 10.0f64.max(n.sqrt()).max(blk.c.norm());
            for c in &blk.coefs {
                let na = c.mat.frobenius_norm();
                xi = xi.max(n * (1.0 + self.b[c.var].abs()) / (1.0 + na));
                eta = eta.max(na);
            }
            x.push(RMat::identity(blk.n, blk.n) * (xi * scale));
            z.push(RMat::identity(blk.n, blk.n) * (eta * scale));
        }
        State { x, z, y: RVec::zeros(self.m) }
    }

    /// Schur complement `M_ij = Σ_k tr(A_{k,i} X_k A_{k,j} Z_k⁻¹)`.
    fn schur(&self, x: &[RMat], zinv: &[RMat]) -> RMat {
        let mut m = RMat::zeros(self.m, self.m);
        for ((blk, xk), zk) in self.blocks.iter().zip(x).zip(zinv) {
            let n = blk.n;
            let nv = blk.coefs.len();
            // suffix sums of nnz for the route decision
            let mut suffix = vec![0usize; nv + 1];
            for a in (0..nv).rev() {
                suffix[a] = suffix[a + 1] + blk.coefs[a].mat.nnz();
            }
            for a in 0..nv {
                let ci = &blk.coefs[a];
                let nr = ci.rows.len();
                // T = (A_i X)[rows, :]  (nr × n)
                let mut t = RMat::zeros(nr, n);
                for &(p, q, v) in ci.mat.entries() {
                    let pl = ci.rows.binary_search(&p).expect("row present");
                    for r in 0..n {
                        t[(pl, r)] += v * xk[(q, r)];
                    }
                }
                // Zsub = Z⁻¹[rows, :]  (nr × n), column s contiguous over the row set
                let mut zsub = RMat::zeros(nr, n);
                for (pl, &p) in ci.rows.iter().enumerate() {
                    for s in 0..n {
                        zsub[(pl, s)] = zk[(p, s)];
                    }
                }
                let dense_route = (suffix[a] as f64) > (n * n) as f64;
                if dense_route {
                    // G = Z⁻¹ A_i X = Zsubᵀ T  (n × n), G[s, r]
                    let g = zsub.transpose() * &t;
                    for cj in &blk.coefs[a..] {
                        let val: f64 = cj.mat.entries().iter().map(|&(r, s, v)| v * g[(s, r)]).sum();
                        m[(ci.var, cj.var)] += val;
                        if ci.var != cj.var {
                            m[(cj.var, ci.var)] += val;
                        }
                    }
                } else {
                    for cj in &blk.coefs[a..] {
                        let mut val = 0.0;
                        for &(r, s, v) in cj.mat.entries() {
                            let dot = zsub.column(s).dot(&t.column(r));
                            val += v * dot;
                        }
                        m[(ci.var, cj.var)] += val;
                        if ci.var != cj.var {
                            m[(cj.var, ci.var)] += val;
                        }
                    }
                }
            }
        }
        m
    }

    fn run(&self, start_scale: f64) -> Result<SdpSolution> {
        let start = Instant::now();
        let s = self.settings;
        let n_total: usize = self.blocks.iter().map(|b| b.n).sum();
        let mut st = self.initial_state(start_scale);
        let c_norm = self.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();
        let b_norm = self.b.norm();
        let mut best: Option<(f64, State)> = None;
        let mut stalls = 0usize;
        let mut last;
        let mut objectives: Vec<f64> = Vec::new();

        for iter in 0..=s.max_iterations {
            // residuals
            let ax = self.a_op(&st.x);
            let rp = &self.b - &ax;
            let aty = self.at_op(&st.y);
            let rd: Vec<RMat> = self.blocks.iter().zip(&st.z).zip(&aty).map(|((blk, z), a)| &blk.c - z - a).collect();
            let pobj: f64 = self.blocks.iter().zip(&st.x).map(|(b, x)| b.c.dot(x)).sum();
            let dobj = self.b.dot(&st.y);
            let xz: f64 = st.x.iter().zip(&st.z).map(|(x, z)| x.dot(z)).sum();
            let mu = xz / n_total as f64;
            let pinf = rp.norm() / (1.0 + b_norm);
            let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            log::trace!("ipm it={iter} pobj={pobj:.6e} dobj={dobj:.6e} pinf={pinf:.2e} dinf={dinf:.2e} gap={gap:.2e}");
            last = (pinf, dinf, gap);
            let merit = pinf.max(dinf).max(gap);
            // Rank iterates that already meet the relaxed acceptance rule ahead of the rest.
            let rank = if self.relaxed_ok(merit, last) { merit } else { merit + 1.0 };
            if best.as_ref().map_or(true, |(b, _)| rank < *b) {
                best = Some((rank, State { x: st.x.clone(), z: st.z.clone(), y: st.y.clone() }));
            }
            if merit <= s.tolerance {
                return Ok(self.finish(SdpStatus::Optimal, &st, iter, last, start, Vec::new()));
            }
            // infeasibility certificate for the LMI: X ⪰ 0, A(X) ≈ 0, ⟨C, X⟩ < 0
            if pobj < 0.0 && ax.norm() / (-pobj) < s.infeasibility_tolerance {
                let shares = self.certificate_shares(&st.x, pobj);
                return Ok(self.finish(SdpStatus::Infeasible, &st, iter, last, start, shares));
            }
            // unboundedness: bᵀy > 0 with ‖Aᵀy + Z‖ / bᵀy → 0
            if dobj > 0.0 {
                let r: f64 = aty.iter().zip(&st.z).map(|(a, z)| (a + z).norm_squared()).sum::<f64>().sqrt();
                if r / dobj < s.infeasibility_tolerance {
                    return Ok(self.finish(SdpStatus::Unbounded, &st, iter, last, start, Vec::new()));
                }
            }
            objectives.push(dobj);
            if s.stagnation_window > 0 && objectives.len() > s.stagnation_window {
                let before = objectives[objectives.len() - 1 - s.stagnation_window];
                let settled = (dobj - before).abs() <= s.stagnation_tolerance * (1.0 + dobj.abs());
                if settled && dinf <= s.relaxed_tolerance && pinf <= s.relaxed_primal_tolerance && gap <= s.stagnation_gap {
                    log::debug!("ipm stopped: objective settled (gap {gap:.2e})");
                    return Ok(self.finish(SdpStatus::Inaccurate, &st, iter, last, start, Vec::new()));
                }
            }
            if iter == s.max_iterations {
                break;
            }

            // factorizations
            let mut zinv = Vec::with_capacity(self.blocks.len());
            for z in &st.z {
                match Cholesky::new(z.clone()) {
                    Some(ch) => zinv.push(symmetrize(&ch.inverse())),
                    None => return self.stalled(best, iter, start, "Z lost positive definiteness"),
                }
            }
            let mut mmat = self.schur(&st.x, &zinv);
            let chol = {
                let maxd = mmat.diagonal().amax().max(f64::MIN_POSITIVE);
                let mut reg = 0.0;
                let mut out = None;
                for _ in 0..6 {
                    if let Some(c) = Cholesky::new(mmat.clone()) {
                        out = Some(c);
                        break;
                    }
                    reg = if reg == 0.0 { 1e-14 * maxd } else { reg * 100.0 };
                    for i in 0..self.m {
                        mmat[(i, i)] += reg;
                    }
                }
                match out {
                    Some(c) => c,
                    None => return self.stalled(best, iter, start, "Schur complement is not positive definite"),
                }
            };

            let xrdzi: Vec<RMat> = st.x.iter().zip(&rd).zip(&zinv).map(|((x, r), zi)| x * r * zi).collect();
            let a_xrdzi = self.a_op(&xrdzi);
            let direction = |k: &[RMat]| -> (RVec, Vec<RMat>, Vec<RMat>) {
                let h = &rp - self.a_op(k) + &a_xrdzi;
                let dy = chol.solve(&h);
                let atdy = self.at_op(&dy);
                let dz: Vec<RMat> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
                let dx: Vec<RMat> =
                    k.iter().zip(&st.x).zip(&dz).zip(&zinv).map(|(((kk, x), dzz), zi)| kk - symmetrize(&(x * dzz * zi))).collect();
                (dy, dx, dz)
            };
            let steps = |dx: &[RMat], dz: &[RMat]| -> Option<(f64, f64)> {
                let mut ap = f64::INFINITY;
                let mut ad = f64::INFINITY;
                for i in 0..dx.len() {
                    ap = ap.min(max_step(&st.x[i], &dx[i])?);
                    ad = ad.min(max_step(&st.z[i], &dz[i])?);
                }
                Some((ap, ad))
            };

            // predictor
            let k_pred: Vec<RMat> = st.x.iter().map(|x| -x).collect();
            let (_, dxp, dzp) = direction(&k_pred);
            let Some((ap_max, ad_max)) = steps(&dxp, &dzp) else {
                return self.stalled(best, iter, start, "step-length factorization failed");
            };
            let (ap, ad) = (ap_max.min(1.0), ad_max.min(1.0));
            let xz_pred: f64 =
                st.x.iter().zip(&dxp).zip(st.z.iter().zip(&dzp)).map(|((x, dx), (z, dz))| (x + dx * ap).dot(&(z + dz * ad))).sum();
            let ratio = (xz_pred / xz).max(0.0);
            let expon = 1.0f64.max(3.0 * ap.min(ad).powi(2));
            let sigma = ratio.powf(expon).min(1.0);

            // corrector
            let k_corr: Vec<RMat> =
                st.x.iter()
                    .zip(&zinv)
                    .zip(dxp.iter().zip(&dzp))
                    .map(|((x, zi), (dx, dz))| zi * (sigma * mu) - x - symmetrize(&(dx * dz * zi)))
                    .collect();
            let (dy, dx, dz) = direction(&k_corr);
            let Some((ap_max, ad_max)) = steps(&dx, &dz) else {
                return self.stalled(best, iter, start, "step-length factorization failed");
            };
            let gamma = 0.9 + 0.09 * ap.min(ad);
            let alpha_p = (gamma * ap_max).min(1.0);
            let alpha_d = (gamma * ad_max).min(1.0);
            for i in 0..st.x.len() {
                st.x[i] = symmetrize(&(&st.x[i] + &dx[i] * alpha_p));
                st.z[i] = symmetrize(&(&st.z[i] + &dz[i] * alpha_d));
            }
            st.y += dy * alpha_d;

            if alpha_p.max(alpha_d) < 1e-10 {
                stalls += 1;
                if stalls >= 3 {
                    return self.stalled(best, iter, start, "step lengths collapsed");
                }
            } else {
                stalls = 0;
            }
        }
        self.stalled(best, s.max_iterations, start, "iteration limit reached")
    }

    /// The acceptance rule for [`SdpStatus::Inaccurate`].
    fn relaxed_ok(&self, merit: f64, res: (f64, f64, f64)) -> bool {
        let s = self.settings;
        merit <= s.relaxed_tolerance || (res.0 <= s.relaxed_primal_tolerance && res.1 <= s.relaxed_tolerance && res.2 <= s.relaxed_gap)
    }

    fn stalled(&self, best: Option<(f64, State)>, iter: usize, start: Instant, why: &str) -> Result<SdpSolution> {
        let Some((_, st)) = best else {
            return Err(Error::SolverFailure(why.to_string()));
        };
        let res = self.residuals(&st);
        let merit = res.0.max(res.1).max(res.2);
        log::debug!("ipm stopped: {why} (best merit {merit:.2e})");
        let status = if self.relaxed_ok(merit, res) {
            SdpStatus::Inaccurate
        } else if why.starts_with("iteration") {
            SdpStatus::MaxIterations
        } else {
            SdpStatus::NumericalFailure
        };
        Ok(self.finish(status, &st, iter, res, start, Vec::new()))
    }

    fn residuals(&self, st: &State) -> (f64, f64, f64) {
        let rp = &self.b - self.a_op(&st.x);
        let aty = self.at_op(&st.y);
        let c_norm = self.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();
        let rd: f64 = self.blocks.iter().zip(&st.z).zip(&aty).map(|((blk, z), a)| (&blk.c - z - a).norm_squared()).sum::<f64>().sqrt();
        let pobj: f64 = self.blocks.iter().zip(&st.x).map(|(b, x)| b.c.dot(x)).sum();
        let dobj = self.b.dot(&st.y);
        (rp.norm() / (1.0 + self.b.norm()), rd / (1.0 + c_norm), (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()))
    }

    fn certificate_shares(&self, x: &[RMat], pobj: f64) -> Vec<(String, f64)> {
        let mut shares: Vec<(String, f64)> =
            self.blocks.iter().zip(x).map(|(b, xk)| (b.name.clone(), (b.c.dot(xk) / pobj).max(0.0))).filter(|(_, v)| *v > 1e-6).collect();
        shares.sort_by(|a, b| b.1.total_cmp(&a.1));
        let _ = &self.block_scale;
        shares
    }

    fn finish(
        &self,
        status: SdpStatus,
        st: &State,
        iterations: usize,
        res: (f64, f64, f64),
        start: Instant,
        shares: Vec<(String, f64)>,
    ) -> SdpSolution {
        let y = st.y.component_mul(&self.var_scale);
        let objective = -self.b.dot(&st.y) / self.obj_scale;
        SdpSolution {
            status,
            y,
            objective,
            iterations,
            primal_infeasibility: res.0,
            dual_infeasibility: res.1,
            relative_gap: res.2,
            infeasibility_blocks: shares,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Minimum eigenvalue of every block at `y`, in block order.
pub fn block_min_eigenvalues(problem: &SdpProblem, y: &RVec) -> Vec<f64> {
    problem.blocks.iter().map(|b| crate::linalg::min_eigenvalue_sym(&b.evaluate(y))).collect()
}
