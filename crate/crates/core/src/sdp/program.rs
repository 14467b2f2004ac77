use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Default upper bound on the (scaled) S-procedure multipliers.
pub const ALPHA_UPPER: f64 = 1e8;

/// Default cap on the margin variable so max-margin programs stay bounded.
pub const MARGIN_CAP: f64 = 1.0;

/// Packing of the decision variables `(Q, L, α₁, α₂)` into one vector.
///
/// `Q` (symmetric `n×n`) contributes its upper triangle row by row, `L`
/// (`m×n`) its entries row-major, then the two multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n: usize,
    pub m: usize,
}

impl VariableLayout {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    pub fn q_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.q_len() + self.m * self.n + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `Q[i][j]` (order-insensitive).
    pub fn q_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // rows 0..i contribute n, n-1, ..., n-i+1 entries
        i * self.n - i * (i.saturating_sub(1)) / 2 + (j - i)
    }

    pub fn l_index(&self, r: usize, c: usize) -> usize {
        self.q_len() + r * self.n + c
    }

    pub fn alpha_index(&self, k: usize) -> usize {
        self.q_len() + self.m * self.n + k
    }

    pub fn pack(&self, q: &DMatrix<f64>, l: &DMatrix<f64>, alpha: [f64; 2]) -> DVector<f64> {
        let mut y = DVector::zeros(self.len());
        for i in 0..self.n {
            for j in i..self.n {
                y[self.q_index(i, j)] = 0.5 * (q[(i, j)] + q[(j, i)]);
            }
        }
        for r in 0..self.m {
            for c in 0..self.n {
                y[self.l_index(r, c)] = l[(r, c)];
            }
        }
        y[self.alpha_index(0)] = alpha[0];
        y[self.alpha_index(1)] = alpha[1];
        y
    }

    pub fn unpack_q(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| y[self.q_index(i, j)])
    }

    pub fn unpack_l(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.n, |r, c| y[self.l_index(r, c)])
    }

    pub fn unpack_alpha(&self, y: &DVector<f64>) -> [f64; 2] {
        [y[self.alpha_index(0)], y[self.alpha_index(1)]]
    }
}

/// Symmetric matrix expression `F₀ + Σ_k y_k F_k` affine in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSymMatrix {
    layout: VariableLayout,
    constant: DMatrix<f64>,
    coeffs: Vec<Option<DMatrix<f64>>>,
}

impl AffineSymMatrix {
    pub fn zeros(layout: VariableLayout, dim: usize) -> Self {
        Self {
            layout,
            constant: DMatrix::zeros(dim, dim),
            coeffs: vec![None; layout.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn layout(&self) -> VariableLayout {
        self.layout
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Non-zero coefficient matrices with their variable index.
    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.as_ref().map(|c| (k, c)))
    }

    fn coeff_mut(&mut self, var: usize) -> &mut DMatrix<f64> {
        let dim = self.dim();
        self.coeffs[var].get_or_insert_with(|| DMatrix::zeros(dim, dim))
    }

    /// Adds `mat` to the constant part at block offset `(r0, c0)`, mirrored when off-diagonal.
    pub fn add_constant_block(&mut self, r0: usize, c0: usize, mat: &DMatrix<f64>) {
        let (h, w) = mat.shape();
        let mut v = self.constant.view_mut((r0, c0), (h, w));
        v += mat;
        if r0 != c0 {
            let mut v = self.constant.view_mut((c0, r0), (w, h));
            v += mat.transpose();
        }
    }

    /// Adds `coef · Q` at block offset `(r0, c0)`, mirrored when off-diagonal.
    pub fn add_q_block(&mut self, r0: usize, c0: usize, coef: f64) {
        let n = self.layout.n;
        for i in 0..n {
            for j in i..n {
                let var = self.layout.q_index(i, j);
                let e = self.coeff_mut(var);
                e[(r0 + i, c0 + j)] += coef;
                if i != j {
                    e[(r0 + j, c0 + i)] += coef;
                }
                if r0 != c0 {
                    e[(c0 + j, r0 + i)] += coef;
                    if i != j {
                        e[(c0 + i, r0 + j)] += coef;
                    }
                }
            }
        }
    }

    /// Adds `coef · L` (an `m×n` block) at offset `(r0, c0)` together with its
    /// transpose at `(c0, r0)`. The block must lie off the diagonal.
    pub fn add_l_block(&mut self, r0: usize, c0: usize, coef: f64) {
        debug_assert_ne!(r0, c0);
        let (m, n) = (self.layout.m, self.layout.n);
        for r in 0..m {
            for c in 0..n {
                let var = self.layout.l_index(r, c);
                let e = self.coeff_mut(var);
                e[(r0 + r, c0 + c)] += coef;
                e[(c0 + c, r0 + r)] += coef;
            }
        }
    }

    /// Adds `α_k · mat` (full-size symmetric `mat`).
    pub fn add_alpha_term(&mut self, k: usize, mat: &DMatrix<f64>) {
        let var = self.layout.alpha_index(k);
        *self.coeff_mut(var) += mat;
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, c) in self.terms() {
            out += c * y[k];
        }
        out
    }

    fn validate(&self, name: &str) -> Result<(), SolverError> {
        let dim = self.dim();
        if self.constant.ncols() != dim || dim == 0 {
            return Err(SolverError::Program(format!(
                "constraint {name}: constant is not square"
            )));
        }
        if self.coeffs.len() != self.layout.len() {
            return Err(SolverError::Program(format!("constraint {name}: wrong variable count")));
        }
        let check =
            |m: &DMatrix<f64>| m.shape() == (dim, dim) && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !check(&self.constant) || !self.terms().all(|(_, c)| check(c)) {
            return Err(SolverError::Program(format!(
                "constraint {name}: matrices not symmetric"
            )));
        }
        Ok(())
    }
}

/// A named `expr ⪰ 0` requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub name: String,
    pub expr: AffineSymMatrix,
}

/// Feasibility program over `(Q, L, α₁, α₂)`.
///
/// The multipliers enter the constraints in scaled units `α̃_k = α_k · alpha_scale[k]`;
/// the box `0 ≤ α̃_k ≤ alpha_upper` is enforced by the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProgram {
    pub layout: VariableLayout,
    pub constraints: Vec<PsdConstraint>,
    pub alpha_scale: [f64; 2],
    pub alpha_upper: f64,
    pub margin_cap: f64,
    /// Starting value for `Q`; identity when absent.
    pub initial_q: Option<DMatrix<f64>>,
}

impl FeasibilityProgram {
    pub fn new(layout: VariableLayout) -> Self {
        Self {
            layout,
            constraints: Vec::new(),
            alpha_scale: [1.0, 1.0],
            alpha_upper: ALPHA_UPPER,
            margin_cap: MARGIN_CAP,
            initial_q: None,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, expr: AffineSymMatrix) {
        self.constraints.push(PsdConstraint {
            name: name.into(),
            expr,
        });
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.constraints.is_empty() {
            return Err(SolverError::Program("program has no constraints".into()));
        }
        if self.alpha_upper.is_nan() || self.alpha_upper <= 0.0 || !self.margin_cap.is_finite() {
            return Err(SolverError::Program("invalid multiplier bound or margin cap".into()));
        }
        if self.alpha_scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(SolverError::Program("multiplier scales must be positive".into()));
        }
        for c in &self.constraints {
            if c.expr.layout() != self.layout {
                return Err(SolverError::Program(format!("constraint {}: layout mismatch", c.name)));
            }
            c.expr.validate(&c.name)?;
        }
        if let Some(q) = &self.initial_q {
            if q.shape() != (self.layout.n, self.layout.n) {
                return Err(SolverError::Program("initial Q has wrong shape".into()));
            }
        }
        Ok(())
    }

    /// Decision vector for a point given in unscaled multiplier units.
    pub fn pack_point(&self, q: &DMatrix<f64>, l: &DMatrix<f64>, a1: f64, a2: f64) -> DVector<f64> {
        self.layout
            .pack(q, l, [a1 * self.alpha_scale[0], a2 * self.alpha_scale[1]])
    }
}
