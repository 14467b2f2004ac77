use std::fmt;

use super::{FeasibilityProgram, GainCertificate};
use crate::linalg::min_eigenvalue;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    pub name: String,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub tol: f64,
    pub entries: Vec<ResidualEntry>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn min_residual(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} min_eig = {:>13.6e}  {}",
                e.name,
                e.min_eigenvalue,
                if e.pass { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Recomputes every constraint residual of `cert` from the raw program
/// matrices with a symmetric eigensolver. `Q` must additionally be positive
/// definite and the multipliers non-negative.
pub fn verify(cert: &GainCertificate, prog: &FeasibilityProgram, tol: f64) -> VerificationReport {
    let y = prog.pack_point(&cert.q, &cert.l, cert.a1, cert.a2);
    let mut entries: Vec<ResidualEntry> = prog
        .constraints
        .iter()
        .map(|c| {
            let r = min_eigenvalue(&c.expr.eval(&y));
            ResidualEntry {
                name: c.name.clone(),
                min_eigenvalue: r,
                pass: r >= -tol,
            }
        })
        .collect();
    let q_min = min_eigenvalue(&cert.q);
    entries.push(ResidualEntry {
        name: "q_positive_definite".into(),
        min_eigenvalue: q_min,
        pass: q_min > 0.0,
    });
    for (name, a) in [("alpha1_nonnegative", cert.a1), ("alpha2_nonnegative", cert.a2)] {
        entries.push(ResidualEntry {
            name: name.into(),
            min_eigenvalue: a,
            pass: a >= -tol,
        });
    }
    VerificationReport { tol, entries }
}
