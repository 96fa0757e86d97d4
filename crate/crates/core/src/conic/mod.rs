//! Backend-neutral description of the small conic programs the optimizers
//! issue: Hermitian PSD blocks, scalar variables, affine trace constraints,
//! real LMIs and second-order cones. [`solve`] lowers a problem onto the
//! Clarabel interior-point solver.

mod clarabel_backend;

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, trace_re, CMat};

pub use crate::linalg::principal_eigpair;
pub use clarabel_backend::solve;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScalarVar(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HermitianVar(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bounds {
    pub const FREE: Bounds = Bounds { lower: None, upper: None };

    pub fn nonneg() -> Self {
        Self::at_least(0.0)
    }

    pub fn at_least(lower: f64) -> Self {
        Bounds { lower: Some(lower), upper: None }
    }

    pub fn between(lower: f64, upper: f64) -> Self {
        Bounds { lower: Some(lower), upper: Some(upper) }
    }
}

/// `constant + Σ c·s + Σ Tr(A·X)`. Trace coefficients are used through their
/// Hermitian part, so every expression is real-valued.
#[derive(Clone, Debug, Default)]
pub struct Affine {
    pub constant: f64,
    pub scalars: Vec<(ScalarVar, f64)>,
    pub traces: Vec<(HermitianVar, CMat)>,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Affine { constant: c, ..Self::default() }
    }

    pub fn scalar(v: ScalarVar) -> Self {
        Self::zero().plus_scalar(v, 1.0)
    }

    pub fn trace(x: HermitianVar, a: CMat) -> Self {
        Self::zero().plus_trace(x, a, 1.0)
    }

    pub fn plus_scalar(mut self, v: ScalarVar, coef: f64) -> Self {
        self.scalars.push((v, coef));
        self
    }

    pub fn plus_trace(mut self, x: HermitianVar, a: CMat, coef: f64) -> Self {
        let a = if coef == 1.0 { a } else { a.map(|z| z * coef) };
        self.traces.push((x, a));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.constant += other.constant;
        self.scalars.extend(other.scalars.iter().cloned());
        self.traces.extend(other.traces.iter().cloned());
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        self.scalars.iter_mut().for_each(|(_, c)| *c *= k);
        self.traces.iter_mut().for_each(|(_, a)| *a *= num_complex::Complex64::from(k));
        self
    }

    pub fn minus(self, other: &Affine) -> Self {
        self.plus(&other.clone().scaled(-1.0))
    }

    /// Evaluates the expression at concrete variable values.
    pub fn eval(&self, scalars: &[f64], hermitians: &[CMat]) -> f64 {
        let s: f64 = self.scalars.iter().map(|(v, c)| c * scalars[v.0]).sum();
        let t: f64 = self
            .traces
            .iter()
            .map(|(x, a)| trace_re(&hermitian_part(a), &hermitians[x.0]))
            .sum();
        self.constant + s + t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    /// `expr ≥ 0`
    Ge,
    /// `expr ≤ 0`
    Le,
    /// `expr = 0`
    Eq,
}

#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub expr: Affine,
    pub sense: Sense,
    pub label: String,
}

/// Real symmetric matrix of affine entries constrained to be PSD. Only the
/// upper triangle is read.
#[derive(Clone, Debug)]
pub struct Lmi {
    pub entries: Vec<Vec<Affine>>,
    pub label: String,
}

/// `‖tail‖₂ ≤ head`.
#[derive(Clone, Debug)]
pub struct SocConstraint {
    pub head: Affine,
    pub tail: Vec<Affine>,
    pub label: String,
}

/// A maximization problem over Hermitian PSD blocks and bounded scalars.
#[derive(Clone, Debug, Default)]
pub struct SdpProblem {
    scalars: Vec<(String, Bounds)>,
    hermitians: Vec<(String, usize)>,
    objective: Affine,
    linear: Vec<LinearConstraint>,
    lmis: Vec<Lmi>,
    socs: Vec<SocConstraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, bounds: Bounds) -> ScalarVar {
        self.scalars.push((name.into(), bounds));
        ScalarVar(self.scalars.len() - 1)
    }

    /// Declares an `n×n` Hermitian variable constrained to be PSD.
    pub fn add_psd(&mut self, name: impl Into<String>, n: usize) -> HermitianVar {
        self.hermitians.push((name.into(), n));
        HermitianVar(self.hermitians.len() - 1)
    }

    pub fn maximize(&mut self, objective: Affine) {
        self.objective = objective;
    }

    /// `lhs ≥ rhs`
    pub fn add_ge(&mut self, label: impl Into<String>, lhs: Affine, rhs: Affine) {
        self.push_linear(label, lhs.minus(&rhs), Sense::Ge);
    }

    /// `lhs ≤ rhs`
    pub fn add_le(&mut self, label: impl Into<String>, lhs: Affine, rhs: Affine) {
        self.push_linear(label, lhs.minus(&rhs), Sense::Le);
    }

    /// `lhs = rhs`
    pub fn add_eq(&mut self, label: impl Into<String>, lhs: Affine, rhs: Affine) {
        self.push_linear(label, lhs.minus(&rhs), Sense::Eq);
    }

    fn push_linear(&mut self, label: impl Into<String>, expr: Affine, sense: Sense) {
        self.linear.push(LinearConstraint { expr, sense, label: label.into() });
    }

    pub fn add_lmi(&mut self, label: impl Into<String>, entries: Vec<Vec<Affine>>) {
        self.lmis.push(Lmi { entries, label: label.into() });
    }

    pub fn add_soc(&mut self, label: impl Into<String>, head: Affine, tail: Vec<Affine>) {
        self.socs.push(SocConstraint { head, tail, label: label.into() });
    }

    /// `Σ zᵢ² ≤ bound`, encoded as the rotated cone
    /// `‖(2z, bound − 1)‖ ≤ bound + 1`.
    pub fn add_sum_squares_le(&mut self, label: impl Into<String>, z: Vec<Affine>, bound: Affine) {
        let mut tail: Vec<Affine> = z.into_iter().map(|e| e.scaled(2.0)).collect();
        tail.push(bound.clone().plus_const(-1.0));
        self.add_soc(label, bound.plus_const(1.0), tail);
    }

    pub fn scalar_vars(&self) -> &[(String, Bounds)] {
        &self.scalars
    }

    pub fn psd_vars(&self) -> &[(String, usize)] {
        &self.hermitians
    }

    pub fn objective(&self) -> &Affine {
        &self.objective
    }

    pub fn linear_constraints(&self) -> &[LinearConstraint] {
        &self.linear
    }

    pub fn lmis(&self) -> &[Lmi] {
        &self.lmis
    }

    pub fn socs(&self) -> &[SocConstraint] {
        &self.socs
    }

    /// Linear constraints + LMIs + SOCs, excluding variable bounds.
    pub fn num_constraints(&self) -> usize {
        self.linear.len() + self.lmis.len() + self.socs.len()
    }

    pub fn linear_with_label(&self, prefix: &str) -> usize {
        self.linear.iter().filter(|c| c.label.starts_with(prefix)).count()
    }

    /// Checks that every referenced variable exists, trace coefficients have
    /// the declared dimension and are Hermitian, and LMIs are square.
    pub fn validate(&self) -> Result<()> {
        let check = |e: &Affine, what: &str| -> Result<()> {
            for (v, _) in &e.scalars {
                if v.0 >= self.scalars.len() {
                    return Err(Error::Shape(format!("{what}: undeclared scalar #{}", v.0)));
                }
            }
            for (x, a) in &e.traces {
                let Some((name, n)) = self.hermitians.get(x.0) else {
                    return Err(Error::Shape(format!("{what}: undeclared PSD block #{}", x.0)));
                };
                if a.nrows() != *n || a.ncols() != *n {
                    return Err(Error::Shape(format!(
                        "{what}: coefficient {}x{} against {name} ({n}x{n})",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                let skew = (a - a.adjoint()).norm();
                if skew > 1e-9 * (1.0 + a.norm()) {
                    return Err(Error::Shape(format!("{what}: non-Hermitian coefficient (skew {skew:e})")));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for c in &self.linear {
            check(&c.expr, &c.label)?;
        }
        for l in &self.lmis {
            let d = l.entries.len();
            if d == 0 || l.entries.iter().any(|r| r.len() != d) {
                return Err(Error::Shape(format!("{}: LMI is not square", l.label)));
            }
            for e in l.entries.iter().flatten() {
                check(e, &l.label)?;
            }
        }
        for s in &self.socs {
            check(&s.head, &s.label)?;
            for e in &s.tail {
                check(e, &s.label)?;
            }
        }
        for (name, b) in &self.scalars {
            if let (Some(l), Some(u)) = (b.lower, b.upper) {
                if l > u {
                    return Err(Error::Shape(format!("{name}: empty bounds [{l}, {u}]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct SolutionValues {
    pub scalars: Vec<f64>,
    pub hermitians: Vec<CMat>,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Objective at the returned point; `NaN` unless optimal.
    pub objective: f64,
    pub iterations: u32,
    /// Largest cone violation of the returned primal point (lowered form).
    pub primal_violation: f64,
    values: Option<SolutionValues>,
}

impl SdpSolution {
    pub(crate) fn failed(status: SolveStatus, iterations: u32) -> Self {
        SdpSolution { status, objective: f64::NAN, iterations, primal_violation: f64::NAN, values: None }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn values(&self) -> Option<&SolutionValues> {
        self.values.as_ref()
    }

    pub fn scalar(&self, v: ScalarVar) -> Option<f64> {
        self.values.as_ref().map(|vals| vals.scalars[v.0])
    }

    pub fn psd(&self, x: HermitianVar) -> Option<&CMat> {
        self.values.as_ref().map(|vals| &vals.hermitians[x.0])
    }

    /// Evaluates an expression at the solution.
    pub fn eval(&self, e: &Affine) -> Option<f64> {
        self.values.as_ref().map(|v| e.eval(&v.scalars, &v.hermitians))
    }
}
