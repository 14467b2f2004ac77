//! Rolling input/state data window and the consistency sets it induces.
//!
//! A full window of `T_W` samples gives the stacked data `X`, `X⁺`, `U` and the
//! scalar `π` bounding the energy of the unmeasured virtual disturbance:
//! `W Wᵀ ⪯ π I` with `π = L² Σ_k k² |[x(t_S − k); u(t_S − k)]|²`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{hstack, induced_two_norm, min_eigenvalue, vstack_vec};

/// Tolerance on the `π I − W Wᵀ ⪰ 0` membership test.
pub const PSD_TOL: f64 = 1e-9;

/// Slack on the drift-ball radius test.
pub const DRIFT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("window already holds {0} samples")]
    Capacity(usize),
    #[error("window holds {have} of {need} samples")]
    Incomplete { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    capacity: usize,
    start_time: usize,
    samples: Vec<Sample>,
}

/// Stacked window data plus the scalar `π` (with `Π = π I`).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub pi: f64,
}

impl DataWindow {
    pub fn new(capacity: usize, start_time: usize) -> Self {
        Self {
            capacity,
            start_time,
            samples: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn start_time(&self) -> usize {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Drops all samples and re-anchors the window at `start_time`.
    pub fn reset(&mut self, start_time: usize) {
        self.samples.clear();
        self.start_time = start_time;
    }

    pub fn push_sample(&mut self, x: DVector<f64>, u: DVector<f64>, x_next: DVector<f64>) -> Result<(), WindowError> {
        if self.is_full() {
            return Err(WindowError::Capacity(self.capacity));
        }
        if let Some(first) = self.samples.first() {
            if x.len() != first.x.len() || u.len() != first.u.len() || x_next.len() != first.x.len() {
                return Err(WindowError::Dimension(format!(
                    "sample sizes ({}, {}, {}) differ from window ({}, {})",
                    x.len(),
                    u.len(),
                    x_next.len(),
                    first.x.len(),
                    first.u.len()
                )));
            }
        } else if x.len() != x_next.len() {
            return Err(WindowError::Dimension("x and x_next lengths differ".into()));
        }
        self.samples.push(Sample { x, u, x_next });
        Ok(())
    }

    /// Assembles `X`, `X⁺`, `U` column-wise in time order and evaluates `π`
    /// for Lipschitz constant `lipschitz`.
    pub fn build_data_matrices(&self, lipschitz: f64) -> Result<DataMatrices, WindowError> {
        if !self.is_full() || self.capacity == 0 {
            return Err(WindowError::Incomplete {
                have: self.samples.len(),
                need: self.capacity,
            });
        }
        let n = self.samples[0].x.len();
        let m = self.samples[0].u.len();
        let cols = self.samples.len();
        let mut x = DMatrix::zeros(n, cols);
        let mut x_plus = DMatrix::zeros(n, cols);
        let mut u = DMatrix::zeros(m, cols);
        for (j, s) in self.samples.iter().enumerate() {
            x.set_column(j, &s.x);
            x_plus.set_column(j, &s.x_next);
            u.set_column(j, &s.u);
        }
        let pi = disturbance_bound(&self.samples, lipschitz);
        Ok(DataMatrices { x, x_plus, u, pi })
    }
}

/// `L² Σ_{k=1}^{T_W} k² |z_k|²`, where `z_k` is the k-th most recent stacked sample.
fn disturbance_bound(samples: &[Sample], lipschitz: f64) -> f64 {
    let len = samples.len();
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let k = (len - j) as f64;
            k * k * (s.x.norm_squared() + s.u.norm_squared())
        })
        .sum();
    lipschitz * lipschitz * sum
}

impl DataMatrices {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn columns(&self) -> usize {
        self.x.ncols()
    }

    /// `W = X⁺ − A X − B U`.
    pub fn disturbance(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, WindowError> {
        let (n, m) = (self.n(), self.m());
        if a.shape() != (n, n) || b.shape() != (n, m) {
            return Err(WindowError::Dimension(format!(
                "expected A {n}x{n} and B {n}x{m}, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(&self.x_plus - a * &self.x - b * &self.u)
    }

    /// Stacked regressor `[X; U]`.
    pub fn regressor(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n() + self.m(), self.columns());
        z.rows_mut(0, self.n()).copy_from(&self.x);
        z.rows_mut(self.n(), self.m()).copy_from(&self.u);
        z
    }

    /// Sample `j` stacked as `[x; u]`.
    pub fn stacked_sample(&self, j: usize) -> DVector<f64> {
        vstack_vec(&self.x.column(j).into_owned(), &self.u.column(j).into_owned())
    }
}

/// Whether `(A, B)` could have produced the window data under `W Wᵀ ⪯ π I`.
pub fn sigma_i_contains(d: &DataMatrices, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool, WindowError> {
    let w = d.disturbance(a, b)?;
    let gap = DMatrix::identity(d.n(), d.n()) * d.pi - &w * w.transpose();
    Ok(min_eigenvalue(&gap) >= -PSD_TOL)
}

/// Whether `‖[ΔA, ΔB]‖₂ ≤ L T`.
pub fn sigma_d_contains(da: &DMatrix<f64>, db: &DMatrix<f64>, lipschitz: f64, period: usize) -> bool {
    induced_two_norm(&hstack(da, db)) <= lipschitz * period as f64 + DRIFT_TOL
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn push_until_full() {
        let mut w = DataWindow::new(2, 8);
        assert!(w.is_empty());
        w.push_sample(v(&[1.0]), v(&[0.0]), v(&[2.0])).unwrap();
        assert_eq!(w.len(), 1);
        assert!(matches!(
            w.build_data_matrices(1.0),
            Err(WindowError::Incomplete { have: 1, need: 2 })
        ));
        w.push_sample(v(&[2.0]), v(&[1.0]), v(&[3.0])).unwrap();
        assert!(w.is_full());
        assert_eq!(
            w.push_sample(v(&[3.0]), v(&[0.0]), v(&[4.0])),
            Err(WindowError::Capacity(2))
        );
        let d = w.build_data_matrices(1.0).unwrap();
        assert_eq!(d.x, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert_eq!(d.x_plus, DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(d.u, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        w.reset(18);
        assert!(w.is_empty());
        assert_eq!(w.start_time(), 18);
    }

    #[test]
    fn push_rejects_mixed_dimensions() {
        let mut w = DataWindow::new(3, 0);
        w.push_sample(v(&[1.0, 0.0]), v(&[0.0]), v(&[2.0, 0.0])).unwrap();
        assert!(matches!(
            w.push_sample(v(&[1.0]), v(&[0.0]), v(&[2.0])),
            Err(WindowError::Dimension(_))
        ));
    }

    #[test]
    fn pi_weights_recent_samples_lightest() {
        // Oldest stacked sample norm 2, most recent norm 1: 1²·1² + 2²·2² = 17.
        let mut w = DataWindow::new(2, 0);
        w.push_sample(v(&[2.0, 0.0]), v(&[0.0]), v(&[0.0, 0.0])).unwrap();
        w.push_sample(v(&[0.0, 0.6]), v(&[0.8]), v(&[0.0, 0.0])).unwrap();
        let d = w.build_data_matrices(1.0).unwrap();
        assert!((d.pi - 17.0).abs() < 1e-12);
        assert_eq!(w.build_data_matrices(0.0).unwrap().pi, 0.0);
    }

    #[test]
    fn drift_ball_boundary() {
        let (l, t) = (0.01, 10);
        let mut da = DMatrix::zeros(3, 3);
        let db = DMatrix::zeros(3, 1);
        assert!(sigma_d_contains(&da, &db, l, t));
        da[(0, 0)] = l * t as f64;
        assert!(sigma_d_contains(&da, &db, l, t));
        let big = DMatrix::identity(3, 3) * (1.01 * l * t as f64);
        assert!(!sigma_d_contains(&big, &db, l, t));
    }

    #[test]
    fn exact_lti_data_has_zero_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.3]);
        let mut w = DataWindow::new(4, 0);
        let mut x = v(&[1.0, -1.0]);
        for k in 0..4 {
            let u = v(&[(k as f64 * 0.7).sin()]);
            let next = &a * &x + &b * &u;
            w.push_sample(x.clone(), u, next.clone()).unwrap();
            x = next;
        }
        let d = w.build_data_matrices(0.0).unwrap();
        assert!(d.disturbance(&a, &b).unwrap().amax() < 1e-15);
        assert!(sigma_i_contains(&d, &a, &b).unwrap());
        assert!(sigma_i_contains(&d, &DMatrix::zeros(3, 3), &b).is_err());
    }
}
