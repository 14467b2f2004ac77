//! S-procedure LMI for a data-consistent, drift-robust feedback gain, plus the
//! auxiliary Lyapunov sandwich and switching constraints.
//!
//! Block rows of the lifted matrices are ordered `[n, n, m, n, m, n]`,
//! matching the decision structure `[I, A, B, ΔA, ΔB | Q-coupling]`. The
//! Schur-reduced forms drop the last block row and column.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{is_positive_definite, min_eigenvalue, pow_log, spd_inverse, symmetrize};
use crate::sdp::{AffineSymMatrix, FeasibilityProgram, VariableLayout};
use crate::window::DataMatrices;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("matrix error: {0}")]
    Matrix(String),
    #[error("window data has no columns")]
    EmptyData,
}

/// Block offsets for the lifted `(4n+2m)`-square matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub n: usize,
    pub m: usize,
}

impl BlockLayout {
    pub fn sizes(&self) -> [usize; 6] {
        [self.n, self.n, self.m, self.n, self.m, self.n]
    }

    /// Starting row of block `k` (0-based).
    pub fn offset(&self, k: usize) -> usize {
        self.sizes()[..k].iter().sum()
    }

    pub fn lifted_dim(&self) -> usize {
        4 * self.n + 2 * self.m
    }

    pub fn reduced_dim(&self) -> usize {
        3 * self.n + 2 * self.m
    }
}

/// Numeric data of the S-procedure LMI for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub blocks: BlockLayout,
    pub lambda: f64,
    pub bar_n1: DMatrix<f64>,
    pub bar_n2: DMatrix<f64>,
    pub pi: f64,
    /// `(L·T)²`.
    pub lt_sq: f64,
    pub data: DataMatrices,
}

/// `G diag(π I, −I) Gᵀ` with `G` stacking `[I, X⁺; 0, −X; 0, −U; 0, 0; ...]`
/// into `rows` total rows.
fn data_form(d: &DataMatrices, rows: usize) -> DMatrix<f64> {
    let (n, m, cols) = (d.n(), d.m(), d.columns());
    let blocks = BlockLayout { n, m };
    let mut g = DMatrix::zeros(rows, n + cols);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    g.view_mut((0, n), (n, cols)).copy_from(&d.x_plus);
    g.view_mut((blocks.offset(1), n), (n, cols)).copy_from(&(-&d.x));
    g.view_mut((blocks.offset(2), n), (m, cols)).copy_from(&(-&d.u));
    let mut mid = DMatrix::zeros(n + cols, n + cols);
    for i in 0..n {
        mid[(i, i)] = d.pi;
    }
    for i in n..n + cols {
        mid[(i, i)] = -1.0;
    }
    symmetrize(&(&g * mid * g.transpose()))
}

/// `H diag((LT)² I, −I, −I) Hᵀ` with `H` selecting the `[I, ΔA, ΔB]` blocks.
fn drift_form(blocks: BlockLayout, lt_sq: f64, rows: usize) -> DMatrix<f64> {
    let (n, m) = (blocks.n, blocks.m);
    let mut out = DMatrix::zeros(rows, rows);
    for i in 0..n {
        out[(i, i)] = lt_sq;
    }
    let o4 = blocks.offset(3);
    for i in 0..n + m {
        out[(o4 + i, o4 + i)] = -1.0;
    }
    out
}

pub fn build_problem(d: &DataMatrices, lambda: f64, lipschitz: f64, period: usize) -> Result<LmiProblem, LmiError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(LmiError::Parameter(format!("lambda = {lambda} not in (0, 1)")));
    }
    if lipschitz < 0.0 || !lipschitz.is_finite() {
        return Err(LmiError::Parameter(format!("Lipschitz constant {lipschitz} invalid")));
    }
    if d.columns() == 0 {
        return Err(LmiError::EmptyData);
    }
    let blocks = BlockLayout { n: d.n(), m: d.m() };
    let lt = lipschitz * period as f64;
    let lt_sq = lt * lt;
    Ok(LmiProblem {
        blocks,
        lambda,
        bar_n1: data_form(d, blocks.lifted_dim()),
        bar_n2: drift_form(blocks, lt_sq, blocks.lifted_dim()),
        pi: d.pi,
        lt_sq,
        data: d.clone(),
    })
}

/// Schur-reduced `(N₁, N₂)`, each `(3n+2m)`-square.
pub fn build_n1_n2(d: &DataMatrices, lipschitz: f64, period: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let blocks = BlockLayout { n: d.n(), m: d.m() };
    let lt = lipschitz * period as f64;
    let rows = blocks.reduced_dim();
    (data_form(d, rows), drift_form(blocks, lt * lt, rows))
}

fn check_q(q: &DMatrix<f64>, n: usize) -> Result<(), LmiError> {
    if q.shape() != (n, n) {
        return Err(LmiError::Matrix(format!("Q is {:?}, expected {n}x{n}", q.shape())));
    }
    if !is_positive_definite(q) {
        return Err(LmiError::Matrix("Q is not positive definite".into()));
    }
    Ok(())
}

impl LmiProblem {
    pub fn n(&self) -> usize {
        self.blocks.n
    }

    pub fn m(&self) -> usize {
        self.blocks.m
    }

    /// The lifted `M̄(Q, L)`, linear in `(Q, L)`.
    pub fn eval_bar_m(&self, q: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
        let (n, m) = (self.n(), self.m());
        check_q(q, n)?;
        if l.shape() != (m, n) {
            return Err(LmiError::Matrix(format!("L is {:?}, expected {m}x{n}", l.shape())));
        }
        let b = self.blocks;
        let dim = b.lifted_dim();
        let o6 = b.offset(5);
        let mut out = DMatrix::zeros(dim, dim);
        out.view_mut((0, 0), (n, n)).copy_from(&(q * self.lambda));
        for (k, is_q) in [(1, true), (2, false), (3, true), (4, false)] {
            let off = b.offset(k);
            if is_q {
                out.view_mut((off, o6), (n, n)).copy_from(q);
                out.view_mut((o6, off), (n, n)).copy_from(&q.transpose());
            } else {
                out.view_mut((off, o6), (m, n)).copy_from(l);
                out.view_mut((o6, off), (n, m)).copy_from(&l.transpose());
            }
        }
        out.view_mut((o6, o6), (n, n)).copy_from(q);
        Ok(out)
    }

    /// `M̄ − α₁ N̄₁ − α₂ N̄₂`.
    pub fn lifted_matrix(
        &self,
        q: &DMatrix<f64>,
        l: &DMatrix<f64>,
        a1: f64,
        a2: f64,
    ) -> Result<DMatrix<f64>, LmiError> {
        Ok(self.eval_bar_m(q, l)? - &self.bar_n1 * a1 - &self.bar_n2 * a2)
    }

    /// `λ_min(M̄ − α₁ N̄₁ − α₂ N̄₂)`; non-negative means the LMI holds.
    pub fn residual(&self, q: &DMatrix<f64>, l: &DMatrix<f64>, a1: f64, a2: f64) -> Result<f64, LmiError> {
        Ok(min_eigenvalue(&self.lifted_matrix(q, l, a1, a2)?))
    }

    /// Scale that normalizes `N̄₁` to unit Frobenius norm, so the data
    /// magnitude does not leak into the multiplier range.
    pub fn data_scale(&self) -> f64 {
        let nrm = self.bar_n1.norm();
        if nrm > 0.0 && nrm.is_finite() {
            nrm
        } else {
            1.0
        }
    }

    /// The LMI as an affine expression in `(Q, L, α̃₁, α̃₂)` with
    /// `α̃_k = α_k · alpha_scale[k]`.
    pub fn affine_expr(&self, layout: VariableLayout, alpha_scale: [f64; 2]) -> AffineSymMatrix {
        let b = self.blocks;
        let o6 = b.offset(5);
        let mut e = AffineSymMatrix::zeros(layout, b.lifted_dim());
        e.add_q_block(0, 0, self.lambda);
        e.add_q_block(b.offset(1), o6, 1.0);
        e.add_l_block(b.offset(2), o6, 1.0);
        e.add_q_block(b.offset(3), o6, 1.0);
        e.add_l_block(b.offset(4), o6, 1.0);
        e.add_q_block(o6, o6, 1.0);
        e.add_alpha_term(0, &(&self.bar_n1 * (-1.0 / alpha_scale[0])));
        e.add_alpha_term(1, &(&self.bar_n2 * (-1.0 / alpha_scale[1])));
        e
    }
}

/// Schur-reduced `M = blockdiag(λQ, 0, 0, 0, 0) − s Q⁻¹ sᵀ`, `s = [0; Q; L; Q; L]`.
pub fn expand_schur(q: &DMatrix<f64>, l: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, LmiError> {
    let n = q.nrows();
    check_q(q, n)?;
    let m = l.nrows();
    if l.ncols() != n {
        return Err(LmiError::Matrix(format!("L is {:?}, expected {m}x{n}", l.shape())));
    }
    let b = BlockLayout { n, m };
    let dim = b.reduced_dim();
    let mut s = DMatrix::zeros(dim, n);
    s.view_mut((b.offset(1), 0), (n, n)).copy_from(q);
    s.view_mut((b.offset(2), 0), (m, n)).copy_from(l);
    s.view_mut((b.offset(3), 0), (n, n)).copy_from(q);
    s.view_mut((b.offset(4), 0), (m, n)).copy_from(l);
    let q_inv = spd_inverse(q).ok_or_else(|| LmiError::Matrix("Q is singular".into()))?;
    let mut out = -(&s * q_inv * s.transpose());
    let mut lead = out.view_mut((0, 0), (n, n));
    lead += q * lambda;
    Ok(symmetrize(&out))
}

/// `Θ = [I, A, B, ΔA, ΔB]`, `n × (3n+2m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    pub theta: DMatrix<f64>,
}

impl ThetaMatrix {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, da: &DMatrix<f64>, db: &DMatrix<f64>) -> Self {
        let (n, m) = (a.nrows(), b.ncols());
        let bl = BlockLayout { n, m };
        let mut theta = DMatrix::zeros(n, bl.reduced_dim());
        theta.view_mut((0, 0), (n, n)).fill_with_identity();
        theta.view_mut((0, bl.offset(1)), (n, n)).copy_from(a);
        theta.view_mut((0, bl.offset(2)), (n, m)).copy_from(b);
        theta.view_mut((0, bl.offset(3)), (n, n)).copy_from(da);
        theta.view_mut((0, bl.offset(4)), (n, m)).copy_from(db);
        Self { theta }
    }

    /// `Θ N Θᵀ`.
    pub fn quadratic_form(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.theta * mat * self.theta.transpose()))
    }
}

/// `σ₂⁻¹ I ⪯ Q ⪯ σ₁⁻¹ I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBounds {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
}

pub fn build_aux_sandwich(sigma1: f64, sigma2: f64, n: usize) -> Result<SandwichBounds, LmiError> {
    if sigma1.is_nan() || sigma2.is_nan() || sigma1 <= 0.0 || sigma1 > sigma2 {
        return Err(LmiError::Parameter(format!(
            "need 0 < sigma1 <= sigma2, got {sigma1}, {sigma2}"
        )));
    }
    Ok(SandwichBounds {
        n,
        lower: 1.0 / sigma2,
        upper: 1.0 / sigma1,
    })
}

impl SandwichBounds {
    /// `Q − σ₂⁻¹ I`.
    pub fn lower_expr(&self, layout: VariableLayout) -> AffineSymMatrix {
        let mut e = AffineSymMatrix::zeros(layout, self.n);
        e.add_q_block(0, 0, 1.0);
        e.add_constant_block(0, 0, &(DMatrix::identity(self.n, self.n) * -self.lower));
        e
    }

    /// `σ₁⁻¹ I − Q`.
    pub fn upper_expr(&self, layout: VariableLayout) -> AffineSymMatrix {
        let mut e = AffineSymMatrix::zeros(layout, self.n);
        e.add_q_block(0, 0, -1.0);
        e.add_constant_block(0, 0, &(DMatrix::identity(self.n, self.n) * self.upper));
        e
    }

    /// `(λ_min(Q − σ₂⁻¹I), λ_min(σ₁⁻¹I − Q))`.
    pub fn residuals(&self, q: &DMatrix<f64>) -> (f64, f64) {
        let id = DMatrix::identity(self.n, self.n);
        (
            min_eigenvalue(&(q - &id * self.lower)),
            min_eigenvalue(&(&id * self.upper - q)),
        )
    }
}

/// `[[λ̂^T Q_prev, Q_prev], [Q_prev, λ^{−T} Q_next]] ⪰ 0`, equivalent to
/// `P_next ⪯ (λ̂/λ)^T P_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwellConstraint {
    pub q_prev: DMatrix<f64>,
    /// `λ̂^T`.
    pub hat_pow: f64,
    /// `λ^{−T}`.
    pub inv_pow: f64,
}

pub fn build_aux_dwell(
    q_prev: &DMatrix<f64>,
    lambda: f64,
    lambda_hat: f64,
    period: usize,
) -> Result<DwellConstraint, LmiError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(LmiError::Parameter(format!("lambda = {lambda} not in (0, 1)")));
    }
    if lambda_hat < lambda || lambda_hat >= 1.0 {
        return Err(LmiError::Parameter(format!(
            "lambda_hat = {lambda_hat} not in [lambda, 1) with lambda = {lambda}"
        )));
    }
    check_q(q_prev, q_prev.nrows())?;
    let t = period as f64;
    Ok(DwellConstraint {
        q_prev: q_prev.clone(),
        hat_pow: pow_log(lambda_hat, t),
        inv_pow: pow_log(lambda, -t),
    })
}

impl DwellConstraint {
    pub fn n(&self) -> usize {
        self.q_prev.nrows()
    }

    /// `(λ̂/λ)^T`, the admissible growth of `P` across a switch.
    pub fn growth_factor(&self) -> f64 {
        self.hat_pow * self.inv_pow
    }

    pub fn eval(&self, q_next: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&(&self.q_prev * self.hat_pow));
        out.view_mut((0, n), (n, n)).copy_from(&self.q_prev);
        out.view_mut((n, 0), (n, n)).copy_from(&self.q_prev);
        out.view_mut((n, n), (n, n)).copy_from(&(q_next * self.inv_pow));
        symmetrize(&out)
    }

    pub fn residual(&self, q_next: &DMatrix<f64>) -> f64 {
        min_eigenvalue(&self.eval(q_next))
    }

    pub fn expr(&self, layout: VariableLayout) -> AffineSymMatrix {
        let n = self.n();
        let mut e = AffineSymMatrix::zeros(layout, 2 * n);
        e.add_constant_block(0, 0, &(&self.q_prev * self.hat_pow));
        e.add_constant_block(0, n, &self.q_prev);
        e.add_q_block(n, n, self.inv_pow);
        e
    }
}

/// Constraint names used in gain programs.
pub const S_PROCEDURE: &str = "s_procedure";
pub const SANDWICH_LOWER: &str = "sandwich_lower";
pub const SANDWICH_UPPER: &str = "sandwich_upper";
pub const SWITCH_COUPLING: &str = "switch_coupling";

/// Full gain-synthesis program: the S-procedure LMI, the Lyapunov sandwich
/// and, when given, the switching coupling to the previous `Q`.
pub fn gain_program(
    problem: &LmiProblem,
    sandwich: &SandwichBounds,
    dwell: Option<&DwellConstraint>,
) -> FeasibilityProgram {
    let layout = VariableLayout::new(problem.n(), problem.m());
    let mut prog = FeasibilityProgram::new(layout);
    prog.alpha_scale = [problem.data_scale(), 1.0];
    prog.push(S_PROCEDURE, problem.affine_expr(layout, prog.alpha_scale));
    prog.push(SANDWICH_LOWER, sandwich.lower_expr(layout));
    prog.push(SANDWICH_UPPER, sandwich.upper_expr(layout));
    if let Some(d) = dwell {
        prog.push(SWITCH_COUPLING, d.expr(layout));
        prog.initial_q = Some(d.q_prev.clone());
    }
    prog
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window::DataWindow;
    use nalgebra::DVector;

    fn tiny_data(lipschitz: f64) -> DataMatrices {
        let mut w = DataWindow::new(3, 0);
        let xs = [[1.0, 0.0], [0.5, 1.0], [-0.3, 0.7], [0.2, -0.4]];
        let us = [[0.3], [-1.0], [0.6]];
        for k in 0..3 {
            w.push_sample(
                DVector::from_row_slice(&xs[k]),
                DVector::from_row_slice(&us[k]),
                DVector::from_row_slice(&xs[k + 1]),
            )
            .unwrap();
        }
        w.build_data_matrices(lipschitz).unwrap()
    }

    #[test]
    fn block_layout_offsets() {
        let b = BlockLayout { n: 5, m: 2 };
        assert_eq!(b.sizes(), [5, 5, 2, 5, 2, 5]);
        assert_eq!(b.offset(5), 19);
        assert_eq!(b.lifted_dim(), 24);
        assert_eq!(b.reduced_dim(), 19);
    }

    #[test]
    fn drift_block_with_zero_lipschitz() {
        let p = build_problem(&tiny_data(0.0), 0.9, 0.0, 10).unwrap();
        let (n, m) = (2, 1);
        let b = p.blocks;
        assert!(p.bar_n2.view((0, 0), (n, n)).iter().all(|v| *v == 0.0));
        let mut expect = DMatrix::zeros(b.lifted_dim(), b.lifted_dim());
        for i in b.offset(3)..b.offset(3) + n + m {
            expect[(i, i)] = -1.0;
        }
        assert_eq!(p.bar_n2, expect);
    }

    #[test]
    fn drift_block_leading_entry() {
        let p = build_problem(&tiny_data(0.1), 0.9, 0.1, 10).unwrap();
        for i in 0..2 {
            assert!((p.bar_n2[(i, i)] - 1.0).abs() < 1e-15);
        }
        let (_, n2) = build_n1_n2(&tiny_data(0.1), 0.1, 10);
        let mut expect = DMatrix::zeros(8, 8);
        for i in 0..2 {
            expect[(i, i)] = 1.0;
        }
        for i in 5..8 {
            expect[(i, i)] = -1.0;
        }
        assert!((n2 - expect).amax() < 1e-15);
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(
            build_problem(&tiny_data(0.1), 1.0, 0.1, 10),
            Err(LmiError::Parameter(_))
        ));
        let empty = DataMatrices {
            x: DMatrix::zeros(2, 0),
            x_plus: DMatrix::zeros(2, 0),
            u: DMatrix::zeros(1, 0),
            pi: 0.0,
        };
        assert_eq!(build_problem(&empty, 0.9, 0.1, 10), Err(LmiError::EmptyData));
        assert!(matches!(build_aux_sandwich(2.0, 1.0, 3), Err(LmiError::Parameter(_))));
        let q = DMatrix::identity(2, 2);
        assert!(matches!(
            build_aux_dwell(&q, 0.9, 0.89, 10),
            Err(LmiError::Parameter(_))
        ));
        assert!(matches!(build_aux_dwell(&-q, 0.9, 0.91, 10), Err(LmiError::Matrix(_))));
    }

    #[test]
    fn bar_m_block_placement() {
        let p = build_problem(&tiny_data(0.1), 0.9, 0.1, 10).unwrap();
        let q = DMatrix::identity(2, 2);
        let l = DMatrix::zeros(1, 2);
        let mb = p.eval_bar_m(&q, &l).unwrap();
        let b = p.blocks;
        let blk = |r: usize, c: usize, h: usize, w: usize| mb.view((b.offset(r), b.offset(c)), (h, w)).into_owned();
        assert_eq!(blk(0, 0, 2, 2), DMatrix::identity(2, 2) * 0.9);
        assert_eq!(blk(5, 5, 2, 2), DMatrix::identity(2, 2));
        assert_eq!(blk(1, 5, 2, 2), DMatrix::identity(2, 2));
        assert_eq!(blk(3, 5, 2, 2), DMatrix::identity(2, 2));
        assert_eq!(blk(2, 5, 1, 2), DMatrix::zeros(1, 2));
        assert_eq!(blk(4, 5, 1, 2), DMatrix::zeros(1, 2));
        assert!(matches!(
            p.eval_bar_m(&DMatrix::zeros(2, 2), &l),
            Err(LmiError::Matrix(_))
        ));
    }

    #[test]
    fn identity_point_is_infeasible() {
        let p = build_problem(&tiny_data(0.1), 0.9, 0.1, 10).unwrap();
        let r = p
            .residual(&DMatrix::identity(2, 2), &DMatrix::zeros(1, 2), 0.0, 0.0)
            .unwrap();
        assert!(r < 0.0);
    }

    #[test]
    fn schur_form_at_identity() {
        let m = expand_schur(&DMatrix::identity(2, 2), &DMatrix::zeros(1, 2), 0.9).unwrap();
        let b = BlockLayout { n: 2, m: 1 };
        let mut expect = DMatrix::zeros(8, 8);
        for i in 0..2 {
            expect[(i, i)] = 0.9;
            expect[(b.offset(1) + i, b.offset(1) + i)] = -1.0;
            expect[(b.offset(3) + i, b.offset(3) + i)] = -1.0;
            expect[(b.offset(1) + i, b.offset(3) + i)] = -1.0;
            expect[(b.offset(3) + i, b.offset(1) + i)] = -1.0;
        }
        assert!((m - expect).amax() < 1e-15);
        let zero_lead = expand_schur(&DMatrix::identity(2, 2), &DMatrix::zeros(1, 2), 0.0).unwrap();
        assert!(zero_lead.view((0, 0), (2, 2)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn sandwich_bounds() {
        let s = build_aux_sandwich(1.0, 1.0, 3).unwrap();
        let (lo, hi) = s.residuals(&DMatrix::identity(3, 3));
        assert_eq!((lo, hi), (0.0, 0.0));
        let s = build_aux_sandwich(0.001, 1000.0, 5).unwrap();
        assert!((s.lower - 0.001).abs() < 1e-18 && (s.upper - 1000.0).abs() < 1e-12);
        let s = build_aux_sandwich(1.0, 4.0, 2).unwrap();
        assert!(s.residuals(&(DMatrix::identity(2, 2) * 2.0)).1 < 0.0);
    }

    #[test]
    fn dwell_boundary_and_growth() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = build_aux_dwell(&q, 0.9, 0.9, 50).unwrap();
        // Schur complement vanishes exactly; the block matrix is singular PSD.
        assert!(c.residual(&q).abs() < 1e-10);
        let far = build_aux_dwell(&q, 0.9, 0.91, 100).unwrap();
        assert!(far.residual(&(&q * 1e6)) >= 0.0);
        assert!((far.growth_factor() - (0.91f64 / 0.9).powi(100)).abs() < 1e-12);
    }
}
