//! Log-det barrier path-following method for max-margin LMI feasibility.
//!
//! Solves
//!
//! ```text
//!   maximize  s
//!   s.t.      F_j(y) − s·I ≻ 0          for every PSD constraint j
//!             0 < α̃_k < alpha_upper
//!             s < margin_cap
//! ```
//!
//! by minimizing `−t·s − Σ log det(F_j − sI) − Σ log(box) − log(cap − s)` with
//! damped Newton steps for an increasing sequence of `t`. After each centering
//! the optimal margin is bracketed by `[s, s + θ/t]`, θ being the barrier degree.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::program::FeasibilityProgram;
use super::{BackendOutcome, BackendOutput, SdpBackend, SolverError};
use crate::linalg::min_eigenvalue;

#[derive(Debug, Clone)]
pub struct BarrierBackend {
    /// Growth factor of the barrier weight between centerings.
    pub mu: f64,
    pub t0: f64,
    /// Stop once `θ/t ≤ gap_abs + gap_rel·|s|`.
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub max_newton_per_center: usize,
    pub max_newton_total: usize,
}

impl Default for BarrierBackend {
    fn default() -> Self {
        Self {
            mu: 8.0,
            t0: 1.0,
            gap_abs: 1e-11,
            gap_rel: 1e-9,
            max_newton_per_center: 200,
            max_newton_total: 5000,
        }
    }
}

pub const BACKEND_ID: &str = "barrier-ipm-v1";

/// Working point: decision vector plus margin.
#[derive(Clone)]
struct Point {
    y: DVector<f64>,
    s: f64,
}

struct Barrier<'a> {
    prog: &'a FeasibilityProgram,
    alpha_idx: [usize; 2],
    /// Sum of constraint dimensions plus scalar barrier terms.
    degree: f64,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a FeasibilityProgram) -> Self {
        let lay = prog.layout;
        let dims: usize = prog.constraints.iter().map(|c| c.expr.dim()).sum();
        Self {
            prog,
            alpha_idx: [lay.alpha_index(0), lay.alpha_index(1)],
            degree: (dims + 5) as f64,
        }
    }

    fn nvars(&self) -> usize {
        self.prog.layout.len() + 1
    }

    fn slack(&self, j: usize, p: &Point) -> DMatrix<f64> {
        let mut g = self.prog.constraints[j].expr.eval(&p.y);
        for i in 0..g.nrows() {
            g[(i, i)] -= p.s;
        }
        (&g + g.transpose()) * 0.5
    }

    /// Barrier value at `p`, or `None` outside the domain.
    fn value(&self, t: f64, p: &Point) -> Option<f64> {
        let upper = self.prog.alpha_upper;
        let cap = self.prog.margin_cap;
        if p.s >= cap {
            return None;
        }
        let mut f = -t * p.s - (cap - p.s).ln();
        for &k in &self.alpha_idx {
            let a = p.y[k];
            if a <= 0.0 || a >= upper {
                return None;
            }
            f -= a.ln() + (upper - a).ln();
        }
        for j in 0..self.prog.constraints.len() {
            let chol = Cholesky::new(self.slack(j, p))?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            f -= logdet;
        }
        f.is_finite().then_some(f)
    }

    /// Gradient and Hessian of the barrier at a strictly feasible `p`.
    fn derivatives(&self, t: f64, p: &Point) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nv = self.nvars();
        let s_idx = nv - 1;
        let mut grad = DVector::zeros(nv);
        let mut hess = DMatrix::zeros(nv, nv);
        let upper = self.prog.alpha_upper;
        let cap = self.prog.margin_cap;

        grad[s_idx] = -t + 1.0 / (cap - p.s);
        hess[(s_idx, s_idx)] = 1.0 / (cap - p.s).powi(2);
        for &k in &self.alpha_idx {
            let a = p.y[k];
            grad[k] += -1.0 / a + 1.0 / (upper - a);
            hess[(k, k)] += 1.0 / (a * a) + 1.0 / (upper - a).powi(2);
        }

        for (j, c) in self.prog.constraints.iter().enumerate() {
            let chol: Cholesky<f64, Dyn> = Cholesky::new(self.slack(j, p))?;
            let l = chol.l();
            let dim = l.nrows();
            // S_v = L⁻¹ D_v L⁻ᵀ for every direction touching this constraint.
            let mut scaled: Vec<(usize, DMatrix<f64>)> = Vec::new();
            let whiten = |d: &DMatrix<f64>| -> Option<DMatrix<f64>> {
                let left = l.solve_lower_triangular(d)?;
                let both = l.solve_lower_triangular(&left.transpose())?;
                Some(both)
            };
            for (k, coef) in c.expr.terms() {
                scaled.push((k, whiten(coef)?));
            }
            scaled.push((s_idx, whiten(&(-DMatrix::identity(dim, dim)))?));
            for (a, (va, sa)) in scaled.iter().enumerate() {
                grad[*va] -= sa.trace();
                for (vb, sb) in scaled.iter().skip(a) {
                    let h = sa.dot(sb);
                    hess[(*va, *vb)] += h;
                    if va != vb {
                        hess[(*vb, *va)] += h;
                    }
                }
            }
        }
        Some((grad, hess))
    }
}

/// Solves `H Δ = −g` with Jacobi scaling and a ridge fallback for directions
/// that no constraint touches.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let nv = grad.len();
    let scale: DVector<f64> = DVector::from_fn(nv, |i, _| {
        let d = hess[(i, i)];
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let mut h = DMatrix::from_fn(nv, nv, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let g = grad.component_mul(&scale);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(chol) = Cholesky::new(h.clone()) {
            let dz = chol.solve(&(-&g));
            return Some(dz.component_mul(&scale));
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
        for i in 0..nv {
            h[(i, i)] += ridge;
        }
    }
    None
}

impl BarrierBackend {
    fn initial_point(&self, prog: &FeasibilityProgram) -> Point {
        let lay = prog.layout;
        let q0 = prog
            .initial_q
            .clone()
            .unwrap_or_else(|| DMatrix::identity(lay.n, lay.n));
        let start_alpha = (1.0f64).min(0.5 * prog.alpha_upper);
        let y = lay.pack(&q0, &DMatrix::zeros(lay.m, lay.n), [start_alpha, start_alpha]);
        let lowest = prog
            .constraints
            .iter()
            .map(|c| min_eigenvalue(&c.expr.eval(&y)))
            .fold(f64::INFINITY, f64::min);
        let s = (lowest - 1.0 - 0.1 * lowest.abs()).min(prog.margin_cap - 1.0);
        Point { y, s }
    }

    /// Damped Newton centering at barrier weight `t`. Returns the number of
    /// Newton steps taken and whether centering converged.
    fn center(&self, bar: &Barrier<'_>, t: f64, p: &mut Point, budget: usize) -> (usize, bool) {
        let s_idx = bar.nvars() - 1;
        let mut f = match bar.value(t, p) {
            Some(f) => f,
            None => return (0, false),
        };
        for it in 0..budget.min(self.max_newton_per_center) {
            let Some((g, h)) = bar.derivatives(t, p) else {
                return (it, false);
            };
            let Some(dz) = newton_direction(&g, &h) else {
                return (it, false);
            };
            let decrement = -g.dot(&dz);
            if decrement <= 2e-10 {
                return (it, true);
            }
            let mut step = 1.0;
            loop {
                let mut trial = p.clone();
                trial.y += dz.rows(0, s_idx) * step;
                trial.s += dz[s_idx] * step;
                if let Some(ft) = bar.value(t, &trial) {
                    if ft <= f - 0.25 * step * decrement {
                        *p = trial;
                        f = ft;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-14 {
                    // No progress possible at machine precision; treat as centered
                    // when the decrement is already small.
                    return (it + 1, decrement < 1e-6);
                }
            }
        }
        (budget.min(self.max_newton_per_center), false)
    }
}

impl SdpBackend for BarrierBackend {
    fn id(&self) -> &str {
        BACKEND_ID
    }

    fn solve(&self, prog: &FeasibilityProgram) -> Result<BackendOutput, SolverError> {
        prog.validate()?;
        let bar = Barrier::new(prog);
        let mut p = self.initial_point(prog);
        let mut t = self.t0;
        let mut newton = 0usize;
        let mut last_good: Option<(Point, f64)> = None;
        let outcome = loop {
            let (steps, centered) = self.center(&bar, t, &mut p, self.max_newton_total - newton);
            newton += steps;
            let gap = bar.degree / t;
            if centered {
                last_good = Some((p.clone(), gap));
                if gap <= self.gap_abs + self.gap_rel * p.s.abs() {
                    break BackendOutcome::Converged;
                }
            } else {
                break BackendOutcome::Stalled;
            }
            if newton >= self.max_newton_total {
                break BackendOutcome::IterationLimit;
            }
            t *= self.mu;
        };
        // Fall back to the last well-centered point for the upper bound.
        let (bound_point, gap) = match (&outcome, last_good) {
            (BackendOutcome::Converged, Some(g)) => g,
            (_, Some(g)) => g,
            (_, None) => (p.clone(), f64::INFINITY),
        };
        let margin = p.s.max(bound_point.s);
        let y = if bound_point.s >= p.s {
            bound_point.y.clone()
        } else {
            p.y.clone()
        };
        Ok(BackendOutput {
            y,
            margin,
            margin_upper_bound: bound_point.s + gap,
            outcome,
            newton_steps: newton,
        })
    }
}
