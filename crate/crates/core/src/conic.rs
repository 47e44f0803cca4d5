//! Conic programs with linear objective, affine rows and (rotated)
//! second-order cones, solved with Clarabel.

use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultInfo, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("solver reported a numerical breakdown")]
    NumericalBreakdown,
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// `constant + Σ coeff · x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr { constant: c, terms: vec![] }
    }

    pub fn var(index: usize) -> Self {
        AffineExpr { constant: 0.0, terms: vec![(index, 1.0)] }
    }

    pub fn term(mut self, index: usize, coeff: f64) -> Self {
        self.terms.push((index, coeff));
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add(mut self, other: &AffineExpr) -> Self {
        self.constant += other.constant;
        self.terms.extend_from_slice(&other.terms);
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.terms {
            t.1 *= s;
        }
        self
    }

    /// Merge repeated variables and drop zero coefficients.
    pub fn normalized(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Eq,
    Le,
}

/// `coeffs · x (= | ≤) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl LinearRow {
    /// `expr ≥ 0`.
    pub fn nonneg(expr: &AffineExpr) -> Self {
        LinearRow {
            coeffs: expr.terms.iter().map(|&(v, c)| (v, -c)).collect(),
            sense: RowSense::Le,
            rhs: expr.constant,
        }
    }

    /// `expr ≤ 0`.
    pub fn nonpos(expr: &AffineExpr) -> Self {
        LinearRow { coeffs: expr.terms.clone(), sense: RowSense::Le, rhs: -expr.constant }
    }

    /// `expr = 0`.
    pub fn zero(expr: &AffineExpr) -> Self {
        LinearRow { coeffs: expr.terms.clone(), sense: RowSense::Eq, rhs: -expr.constant }
    }

    fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let r = self.lhs(x) - self.rhs;
        match self.sense {
            RowSense::Eq => r.abs(),
            RowSense::Le => r.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    /// `‖v‖ ≤ t`.
    SecondOrder { t: AffineExpr, v: Vec<AffineExpr> },
    /// `‖v‖² ≤ s·t`, `s ≥ 0`, `t ≥ 0`.
    Rotated { s: AffineExpr, t: AffineExpr, v: Vec<AffineExpr> },
}

impl Cone {
    /// Distance-like infeasibility; zero inside the cone.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Cone::SecondOrder { t, v } => {
                let n = v.iter().map(|e| e.evaluate(x).powi(2)).sum::<f64>().sqrt();
                (n - t.evaluate(x)).max(0.0)
            }
            Cone::Rotated { s, t, v } => {
                let (s, t) = (s.evaluate(x), t.evaluate(x));
                let n2 = (s - t).powi(2) + 4.0 * v.iter().map(|e| e.evaluate(x).powi(2)).sum::<f64>();
                (0.5 * (n2.sqrt() - (s + t))).max(0.0)
            }
        }
    }

    fn width(&self) -> usize {
        match self {
            Cone::SecondOrder { v, .. } => 1 + v.len(),
            Cone::Rotated { v, .. } => 2 + v.len(),
        }
    }

    /// Rows of the equivalent standard second-order cone.
    fn soc_rows(&self) -> Vec<AffineExpr> {
        match self {
            Cone::SecondOrder { t, v } => std::iter::once(t.clone()).chain(v.iter().cloned()).collect(),
            Cone::Rotated { s, t, v } => {
                let mut rows = vec![s.clone().add(t), s.clone().add(&t.clone().scale(-1.0))];
                rows.extend(v.iter().map(|e| e.clone().scale(2.0)));
                rows
            }
        }
    }
}

/// Minimize `objective · x + objective_constant` subject to rows and cones.
#[derive(Debug, Clone, Default)]
pub struct ConeProgram {
    names: Vec<String>,
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn add_row(&mut self, row: LinearRow) {
        self.rows.push(row);
    }

    pub fn add_cone(&mut self, cone: Cone) {
        self.cones.push(cone);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// Largest violation over all rows and cones.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x));
        let cones = self.cones.iter().map(|c| c.violation(x));
        rows.chain(cones).fold(0.0, f64::max)
    }

    fn check(&self) -> Result<(), ConicError> {
        let n = self.num_vars();
        let bad_var = |v: usize| v >= n;
        let exprs = self.cones.iter().flat_map(|c| c.soc_rows());
        if self.objective.iter().any(|t| bad_var(t.0))
            || self.rows.iter().any(|r| r.coeffs.iter().any(|t| bad_var(t.0)))
            || exprs.clone().any(|e| e.terms.iter().any(|t| bad_var(t.0)))
        {
            return Err(ConicError::Malformed("variable index out of range".into()));
        }
        let finite = self.objective.iter().all(|t| t.1.is_finite())
            && self.rows.iter().all(|r| r.rhs.is_finite() && r.coeffs.iter().all(|t| t.1.is_finite()))
            && exprs.clone().all(|e| e.constant.is_finite() && e.terms.iter().all(|t| t.1.is_finite()));
        if !finite {
            return Err(ConicError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Human-readable listing of the program.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let expr = |e: &AffineExpr| {
            let mut s = format!("{}", e.constant);
            for &(v, c) in &e.terms {
                let _ = write!(s, " + {c}*{}", self.names[v]);
            }
            s
        };
        let _ = writeln!(out, "variables {}", self.num_vars());
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "  x{i} {n}");
        }
        let obj = AffineExpr { constant: self.objective_constant, terms: self.objective.clone() };
        let _ = writeln!(out, "minimize {}", expr(&obj));
        for (k, r) in self.rows.iter().enumerate() {
            let lhs = expr(&AffineExpr { constant: 0.0, terms: r.coeffs.clone() });
            let op = if r.sense == RowSense::Eq { "=" } else { "<=" };
            let _ = writeln!(out, "row {k}: {lhs} {op} {}", r.rhs);
        }
        for (k, c) in self.cones.iter().enumerate() {
            match c {
                Cone::SecondOrder { t, v } => {
                    let vs: Vec<String> = v.iter().map(expr).collect();
                    let _ = writeln!(out, "cone {k}: ||[{}]|| <= {}", vs.join("; "), expr(t));
                }
                Cone::Rotated { s, t, v } => {
                    let vs: Vec<String> = v.iter().map(expr).collect();
                    let _ = writeln!(out, "cone {k}: ||[{}]||^2 <= ({}) * ({})", vs.join("; "), expr(s), expr(t));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Converged to the solver's relaxed tolerances.
    ReducedAccuracy,
    /// Stopped without progress; the returned point may still be usable.
    Stalled,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Recomputed from `x` against the program, independent of the solver.
    pub max_violation: f64,
    pub iterations: u32,
    /// Primal and dual residuals per solver iteration.
    pub residuals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tolerance: 1e-8, max_iter: 200, verbose: false }
    }
}

pub fn solve(program: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution, ConicError> {
    program.check()?;
    let n = program.num_vars();
    let mut q = vec![0.0; n];
    for &(v, c) in &program.objective {
        q[v] += c;
    }
    let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut push_row = |coeffs: &[(usize, f64)], rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for &(v, c) in coeffs {
            ri.push(r);
            ci.push(v);
            vals.push(c);
        }
        b.push(rhs);
    };
    for sense in [RowSense::Eq, RowSense::Le] {
        let rows: Vec<&LinearRow> = program.rows.iter().filter(|r| r.sense == sense).collect();
        if rows.is_empty() {
            continue;
        }
        for r in &rows {
            push_row(&r.coeffs, r.rhs, &mut b);
        }
        cones.push(match sense {
            RowSense::Eq => SupportedConeT::ZeroConeT(rows.len()),
            RowSense::Le => SupportedConeT::NonnegativeConeT(rows.len()),
        });
    }
    for cone in &program.cones {
        for e in cone.soc_rows() {
            let neg: Vec<(usize, f64)> = e.terms.iter().map(|&(v, c)| (v, -c)).collect();
            push_row(&neg, e.constant, &mut b);
        }
        cones.push(SupportedConeT::SecondOrderConeT(cone.width()));
    }
    let a = CscMatrix::new_from_triplets(b.len(), n, ri, ci, vals);
    let p = CscMatrix::zeros((n, n));
    let opts = DefaultSettingsBuilder::default()
        .max_iter(settings.max_iter)
        .tol_feas(settings.tolerance)
        .tol_gap_abs(settings.tolerance)
        .tol_gap_rel(settings.tolerance)
        .verbose(settings.verbose)
        .build()
        .map_err(|e| ConicError::Setup(e.to_string()))?;
    let mut solver =
        DefaultSolver::new(&p, &q, &a, &b, &cones, opts).map_err(|e| ConicError::Setup(e.to_string()))?;
    let trace = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&trace);
    solver.set_termination_callback(move |info: &DefaultInfo<f64>| {
        sink.lock().expect("trace lock").push((info.res_primal, info.res_dual));
        false
    });
    solver.solve();
    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::ReducedAccuracy,
        SolverStatus::InsufficientProgress => SolveStatus::Stalled,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
        _ => return Err(ConicError::NumericalBreakdown),
    };
    let x = solver.solution.x.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ConicError::NumericalBreakdown);
    }
    let residuals = trace.lock().expect("trace lock").clone();
    Ok(ConeSolution {
        status,
        objective: program.objective_value(&x),
        max_violation: program.max_violation(&x),
        iterations: solver.solution.iterations,
        residuals,
        x,
    })
}

/// Conic form of `M ⪯ θI` for `M = [[a, v₁, v₂], [v₁, −2, 0], [v₂, 0, −2]]`.
///
/// Returns the rotated cone `‖v‖² ≤ (2 + θ)(θ − a)` and the affine
/// expressions `θ − a` and `2 + θ`, each of which must be nonnegative.
pub fn lmi_to_rotated_cone(a: &AffineExpr, v: [&AffineExpr; 2], theta: &AffineExpr) -> (Cone, [AffineExpr; 2]) {
    let gap = theta.clone().add(&a.clone().scale(-1.0)).normalized();
    let shift = theta.clone().plus_constant(2.0).normalized();
    let cone = Cone::Rotated {
        s: shift.clone(),
        t: gap.clone(),
        v: vec![v[0].clone().normalized(), v[1].clone().normalized()],
    };
    (cone, [gap, shift])
}

/// Numeric membership test of the reduced form.
pub fn rotated_cone_holds(a: f64, v: [f64; 2], theta: f64, tol: f64) -> bool {
    let gap = theta - a;
    let shift = theta + 2.0;
    gap >= -tol && shift >= -tol && v[0] * v[0] + v[1] * v[1] <= shift * gap + tol
}
