//! Small dense convex solver.
//!
//! Programs have Hermitian PSD matrix blocks and real scalars, an affine
//! objective to maximize, affine constraints (optionally with a `c·e^x` term
//! on the left of a `≤`), and two cone constraints: hyperbolic `a·b ≥ w²` and
//! the exponential cone `y·e^{x/y} ≤ z`. The method is a primal log-barrier
//! interior point with a phase-I feasibility search; equalities are removed
//! by a null-space parameterization.

mod cones;
mod ipm;
mod kkt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::HermMat;

pub use ipm::{solve_convex, solve_convex_from, solve_convex_with};
pub use kkt::{check_kkt, KktReport};

/// Handle to a matrix block of a [`ConvexProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatVar(pub usize);

/// Handle to a scalar variable of a [`ConvexProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarVar(pub usize);

/// `constant + Σ a·x + Σ Re tr(C·X)`.
#[derive(Debug, Clone, Default)]
pub struct Affine {
    pub constant: f64,
    pub scalar_terms: Vec<(ScalarVar, f64)>,
    pub matrix_terms: Vec<(MatVar, HermMat)>,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Affine { constant: c, ..Self::default() }
    }

    pub fn var(x: ScalarVar) -> Self {
        Self::zero().scalar(x, 1.0)
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scalar(mut self, x: ScalarVar, coef: f64) -> Self {
        self.scalar_terms.push((x, coef));
        self
    }

    pub fn matrix(mut self, m: MatVar, coef: HermMat) -> Self {
        self.matrix_terms.push((m, coef));
        self
    }

    /// Adds `Re tr(X)`.
    pub fn trace(self, m: MatVar, dim: usize) -> Self {
        self.matrix(m, HermMat::identity(dim))
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.scalar_terms {
            t.1 *= s;
        }
        for t in &mut self.matrix_terms {
            t.1 = t.1.scale(s);
        }
        self
    }

    pub fn add(mut self, other: Affine) -> Self {
        self.constant += other.constant;
        self.scalar_terms.extend(other.scalar_terms);
        self.matrix_terms.extend(other.matrix_terms);
        self
    }

    pub fn eval(&self, x: &Solution) -> f64 {
        self.constant
            + self.scalar_terms.iter().map(|(v, a)| a * x.scalars[v.0]).sum::<f64>()
            + self.matrix_terms.iter().map(|(m, c)| c.inner(&x.matrices[m.0])).sum::<f64>()
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0
            && self.scalar_terms.iter().all(|t| t.1 == 0.0)
            && self.matrix_terms.iter().all(|t| t.1.frobenius() == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `lhs + c·e^x  (relation)  rhs`. The exponential term is only allowed with `≤`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub lhs: Affine,
    pub relation: Relation,
    pub rhs: f64,
    pub exp_term: Option<(ScalarVar, f64)>,
}

/// Nonlinear cone memberships beyond affine constraints.
#[derive(Debug, Clone)]
pub enum ConeConstraint {
    /// `a·b ≥ w²` with `a, b ≥ 0`.
    Hyperbolic { a: Affine, b: Affine, w: Affine },
    /// `y·e^{x/y} ≤ z` with `y > 0`: the closure of the exponential cone.
    ExpCone { x: Affine, y: Affine, z: Affine },
}

#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub matrix_vars: Vec<(String, usize)>,
    /// Scalar variables with an optional lower bound (`None` means free).
    pub scalar_vars: Vec<(String, Option<f64>)>,
    /// Maximized.
    pub objective: Affine,
    pub constraints: Vec<Constraint>,
    pub cones: Vec<ConeConstraint>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("constraint {0} references an undeclared variable")]
    UndeclaredVariable(usize),
    #[error("constraint {0}: exponential term coefficient must be positive")]
    BadExpCoefficient(usize),
    #[error("constraint {0}: exponential term requires a `<=` relation")]
    NonConvexExpTerm(usize),
    #[error("constraint {0}: coefficient matrix has the wrong dimension")]
    DimensionMismatch(usize),
    #[error("non-finite data in constraint {0}")]
    NonFinite(usize),
    #[error("objective references an undeclared variable")]
    BadObjective,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, dim: usize) -> MatVar {
        self.matrix_vars.push((name.into(), dim));
        MatVar(self.matrix_vars.len() - 1)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, lower: Option<f64>) -> ScalarVar {
        self.scalar_vars.push((name.into(), lower));
        ScalarVar(self.scalar_vars.len() - 1)
    }

    pub fn maximize(&mut self, objective: Affine) {
        self.objective = objective;
    }

    pub fn add(&mut self, lhs: Affine, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { lhs, relation, rhs, exp_term: None });
    }

    pub fn le(&mut self, lhs: Affine, rhs: f64) {
        self.add(lhs, Relation::Le, rhs);
    }

    pub fn ge(&mut self, lhs: Affine, rhs: f64) {
        self.add(lhs, Relation::Ge, rhs);
    }

    pub fn eq(&mut self, lhs: Affine, rhs: f64) {
        self.add(lhs, Relation::Eq, rhs);
    }

    /// `lhs + c·e^x ≤ rhs`.
    pub fn le_with_exp(&mut self, lhs: Affine, x: ScalarVar, c: f64, rhs: f64) {
        self.constraints.push(Constraint { lhs, relation: Relation::Le, rhs, exp_term: Some((x, c)) });
    }

    pub fn hyperbolic(&mut self, a: Affine, b: Affine, w: Affine) {
        self.cones.push(ConeConstraint::Hyperbolic { a, b, w });
    }

    pub fn exp_cone(&mut self, x: Affine, y: Affine, z: Affine) {
        self.cones.push(ConeConstraint::ExpCone { x, y, z });
    }

    pub fn matrix_dim(&self, m: MatVar) -> usize {
        self.matrix_vars[m.0].1
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let check_affine = |a: &Affine, idx: usize| -> Result<(), ProgramError> {
            if !a.constant.is_finite() {
                return Err(ProgramError::NonFinite(idx));
            }
            for (v, c) in &a.scalar_terms {
                if v.0 >= self.scalar_vars.len() {
                    return Err(ProgramError::UndeclaredVariable(idx));
                }
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite(idx));
                }
            }
            for (m, c) in &a.matrix_terms {
                let Some((_, dim)) = self.matrix_vars.get(m.0) else {
                    return Err(ProgramError::UndeclaredVariable(idx));
                };
                if c.dim() != *dim {
                    return Err(ProgramError::DimensionMismatch(idx));
                }
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite(idx));
                }
            }
            Ok(())
        };
        check_affine(&self.objective, usize::MAX).map_err(|_| ProgramError::BadObjective)?;
        for (idx, c) in self.constraints.iter().enumerate() {
            check_affine(&c.lhs, idx)?;
            if !c.rhs.is_finite() {
                return Err(ProgramError::NonFinite(idx));
            }
            if let Some((x, coef)) = c.exp_term {
                if x.0 >= self.scalar_vars.len() {
                    return Err(ProgramError::UndeclaredVariable(idx));
                }
                if !(coef > 0.0 && coef.is_finite()) {
                    return Err(ProgramError::BadExpCoefficient(idx));
                }
                if c.relation != Relation::Le {
                    return Err(ProgramError::NonConvexExpTerm(idx));
                }
            }
        }
        let base = self.constraints.len();
        for (off, cone) in self.cones.iter().enumerate() {
            let (a, b, c) = match cone {
                ConeConstraint::Hyperbolic { a, b, w } => (a, b, w),
                ConeConstraint::ExpCone { x, y, z } => (x, y, z),
            };
            for part in [a, b, c] {
                check_affine(part, base + off)?;
            }
        }
        for (_, lb) in &self.scalar_vars {
            if let Some(l) = lb {
                if !l.is_finite() {
                    return Err(ProgramError::NonFinite(usize::MAX));
                }
            }
        }
        Ok(())
    }

    /// Largest absolute constant in the constraints; sets the feasibility scale.
    pub fn constraint_scale(&self) -> f64 {
        let mut s: f64 = 0.0;
        for c in &self.constraints {
            s = s.max((c.rhs - c.lhs.constant).abs());
        }
        for cone in &self.cones {
            let parts = match cone {
                ConeConstraint::Hyperbolic { a, b, w } => [a, b, w],
                ConeConstraint::ExpCone { x, y, z } => [x, y, z],
            };
            for p in parts {
                s = s.max(p.constant.abs());
            }
        }
        for (_, lb) in &self.scalar_vars {
            if let Some(l) = lb {
                s = s.max(l.abs());
            }
        }
        s
    }

    /// Largest violation of any constraint, bound or cone at `x`.
    pub fn max_violation(&self, x: &Solution) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let mut lhs = c.lhs.eval(x);
            if let Some((v, coef)) = c.exp_term {
                lhs += coef * x.scalars[v.0].exp();
            }
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for cone in &self.cones {
            let v = match cone {
                ConeConstraint::Hyperbolic { a, b, w } => {
                    let (a, b, w) = (a.eval(x), b.eval(x), w.eval(x));
                    (-a).max(-b).max(w * w - a.max(0.0) * b.max(0.0))
                }
                ConeConstraint::ExpCone { x: xa, y, z } => {
                    let (xv, yv, zv) = (xa.eval(x), y.eval(x), z.eval(x));
                    if yv > 0.0 {
                        (yv * (xv / yv).exp() - zv).max(0.0)
                    } else if yv == 0.0 && xv <= 0.0 && zv >= 0.0 {
                        0.0
                    } else {
                        (-yv).max(0.0).max(xv.max(0.0))
                    }
                }
            };
            worst = worst.max(v);
        }
        for ((_, lb), val) in self.scalar_vars.iter().zip(&x.scalars) {
            if let Some(l) = lb {
                worst = worst.max(l - val);
            }
        }
        for m in &x.matrices {
            worst = worst.max(-m.min_eigenvalue());
        }
        worst.max(0.0)
    }
}

/// Values of all program variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub matrices: Vec<HermMat>,
    pub scalars: Vec<f64>,
}

impl Solution {
    pub fn matrix(&self, m: MatVar) -> &HermMat {
        &self.matrices[m.0]
    }

    pub fn scalar(&self, x: ScalarVar) -> f64 {
        self.scalars[x.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Newton steps over both phases.
    pub iterations: usize,
    pub values: Solution,
    pub max_violation: f64,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Barrier-method parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub t0: f64,
    pub mu: f64,
    /// Outer stop once `ν/t` falls below this.
    pub gap_tol: f64,
    /// Inner stop once `λ²/2` falls below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Phase-I optimum above `feas_tol·(1+scale)` means infeasible.
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { t0: 1.0, mu: 10.0, gap_tol: 1e-8, newton_tol: 1e-10, max_newton: 4000, feas_tol: 1e-7 }
    }
}

fn fmt_affine(f: &mut fmt::Formatter<'_>, p: &ConvexProgram, a: &Affine) -> fmt::Result {
    write!(f, "{:e}", a.constant)?;
    for (v, c) in &a.scalar_terms {
        write!(f, " {:+e}*{}", c, p.scalar_vars[v.0].0)?;
    }
    for (m, c) in &a.matrix_terms {
        write!(f, " +tr({}*[", p.matrix_vars[m.0].0)?;
        let n = c.dim();
        for r in 0..n {
            if r > 0 {
                write!(f, ";")?;
            }
            for col in 0..n {
                let z = c.get(r, col);
                write!(f, "{}{:e}{:+e}i", if col > 0 { " " } else { "" }, z.re, z.im)?;
            }
        }
        write!(f, "])")?;
    }
    Ok(())
}

/// Plain-text canonical dump: variables first, then one constraint per line.
impl fmt::Display for ConvexProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, dim) in &self.matrix_vars {
            writeln!(f, "matrix {name} {dim}")?;
        }
        for (name, lb) in &self.scalar_vars {
            match lb {
                Some(l) => writeln!(f, "scalar {name} >= {l:e}")?,
                None => writeln!(f, "scalar {name} free")?,
            }
        }
        write!(f, "maximize ")?;
        fmt_affine(f, self, &self.objective)?;
        writeln!(f)?;
        for c in &self.constraints {
            write!(f, "subject to ")?;
            fmt_affine(f, self, &c.lhs)?;
            if let Some((x, coef)) = c.exp_term {
                write!(f, " +{:e}*exp({})", coef, self.scalar_vars[x.0].0)?;
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "==",
                Relation::Ge => ">=",
            };
            writeln!(f, " {rel} {:e}", c.rhs)?;
        }
        for cone in &self.cones {
            let (tag, parts) = match cone {
                ConeConstraint::Hyperbolic { a, b, w } => ("hyperbolic", [a, b, w]),
                ConeConstraint::ExpCone { x, y, z } => ("expcone", [x, y, z]),
            };
            write!(f, "{tag}")?;
            for p in parts {
                write!(f, " (")?;
                fmt_affine(f, self, p)?;
                write!(f, ")")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
