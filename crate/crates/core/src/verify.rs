//! Independent certificate checking, controller extraction and simulation
//! audits.
//!
//! Nothing here touches the conic layer: the decrease condition is evaluated
//! directly from vertex values, classifier values and the dataset.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpa::{CpaError, CpaFunction};
use crate::dataset::{BoxBounds, Dataset, LipschitzInfo};
use crate::dynamics::{Controller, DynamicsError, DynamicsOracle};
use crate::geometry::{Point, Triangulation};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("mesh has {vertices} vertices but the dataset has {samples} samples")]
    Mismatch { vertices: usize, samples: usize },
    #[error("expected {expected} {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("input selection {index} out of range for simplex {simplex}")]
    BadSelection { simplex: usize, index: usize },
    #[error("the safe set is empty")]
    EmptySafeSet,
    #[error("this audit needs an autonomous system")]
    NeedsAutonomous,
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Constants the certificate is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub epsilon: f64,
    pub rho: f64,
    /// Required strict decrease margin.
    pub eta: f64,
    pub lipschitz: LipschitzInfo,
    /// Slack allowed on the gradient bound.
    pub gradient_tolerance: f64,
}

impl VerifyParams {
    pub fn new(epsilon: f64, rho: f64, eta: f64, lipschitz: LipschitzInfo) -> Self {
        VerifyParams { epsilon, rho, eta, lipschitz, gradient_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `W ≥ ε` where every successor leaves the mesh.
    ExitValue,
    /// `W ≥ −ρ` at every vertex.
    LowerBound,
    /// `‖∇W_i‖ ≤ b` on every simplex.
    GradientBound,
    /// Strict decrease with interpolation error on every simplex.
    Decrease,
    /// `γ_i ≥ 0`.
    ClassifierSign,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::ExitValue,
        Condition::LowerBound,
        Condition::GradientBound,
        Condition::Decrease,
        Condition::ClassifierSign,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::ExitValue => "exit-value",
            Condition::LowerBound => "lower-bound",
            Condition::GradientBound => "gradient-bound",
            Condition::Decrease => "decrease",
            Condition::ClassifierSign => "gamma-sign",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub simplex: Option<usize>,
    pub vertex: Option<usize>,
    pub margin: f64,
}

/// Outcome of one condition. Margins are nonnegative when satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub passed: bool,
    pub checked: usize,
    pub worst_margin: f64,
    pub offender_count: usize,
    /// The worst offenders, at most [`MAX_OFFENDERS`].
    pub offenders: Vec<Offender>,
}

pub const MAX_OFFENDERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub passed: bool,
    pub b: f64,
    pub params: VerifyParams,
    pub conditions: Vec<ConditionReport>,
}

impl CertificateReport {
    pub fn condition(&self, c: Condition) -> &ConditionReport {
        self.conditions.iter().find(|r| r.condition == c).expect("every condition is reported")
    }
}

struct Collector {
    condition: Condition,
    checked: usize,
    worst: f64,
    offenders: Vec<Offender>,
}

impl Collector {
    fn new(condition: Condition) -> Self {
        Collector { condition, checked: 0, worst: f64::INFINITY, offenders: vec![] }
    }

    fn record(&mut self, simplex: Option<usize>, vertex: Option<usize>, margin: f64) {
        self.checked += 1;
        self.worst = self.worst.min(margin);
        if margin < 0.0 || margin.is_nan() {
            self.offenders.push(Offender { simplex, vertex, margin });
        }
    }

    fn finish(mut self) -> ConditionReport {
        self.offenders.sort_by(|a, b| a.margin.total_cmp(&b.margin));
        let count = self.offenders.len();
        self.offenders.truncate(MAX_OFFENDERS);
        ConditionReport {
            condition: self.condition,
            passed: count == 0,
            checked: self.checked,
            worst_margin: if self.checked == 0 { 0.0 } else { self.worst },
            offender_count: count,
            offenders: self.offenders,
        }
    }
}

/// Check all five certificate conditions.
///
/// The decrease condition passes on simplex `i` when some input index `k`
/// gives `max_j [W̄(x⁺_{i,j,k}) − γ_i W(x_{i,j})] + b·e_i(k) ≤ −η`, where
/// `e_i(k)` is the interpolation error factor of the simplex with the inputs
/// of index `k` stacked onto its vertices.
pub fn check_certificate(
    tri: &Triangulation,
    dataset: &Dataset,
    values: &[f64],
    gamma: &[f64],
    b: f64,
    params: &VerifyParams,
) -> Result<CertificateReport, VerifyError> {
    if tri.vertex_count() != dataset.len() {
        return Err(VerifyError::Mismatch { vertices: tri.vertex_count(), samples: dataset.len() });
    }
    if gamma.len() != tri.simplex_count() {
        return Err(VerifyError::Length { what: "classifier values", expected: tri.simplex_count(), got: gamma.len() });
    }
    let w = CpaFunction::new(tri, values.to_vec(), params.epsilon)?;
    let successor_values: Vec<Vec<f64>> = dataset
        .samples()
        .iter()
        .map(|s| s.transitions.iter().map(|t| w.evaluate_extended(&t.successor)).collect())
        .collect();
    let exits: Vec<bool> = dataset
        .samples()
        .iter()
        .map(|s| s.transitions.iter().all(|t| tri.locate(&t.successor).is_none()))
        .collect();

    let mut exit = Collector::new(Condition::ExitValue);
    let mut lower = Collector::new(Condition::LowerBound);
    for (v, &wv) in values.iter().enumerate() {
        if exits[v] {
            exit.record(None, Some(v), wv - params.epsilon);
        }
        lower.record(None, Some(v), wv + params.rho);
    }

    let mut grad = Collector::new(Condition::GradientBound);
    let mut dec = Collector::new(Condition::Decrease);
    let mut sign = Collector::new(Condition::ClassifierSign);
    let m = dataset.transitions_per_state();
    for i in 0..tri.simplex_count() {
        let norm = w.gradient_norm(i, Default::default())?;
        grad.record(Some(i), None, b + params.gradient_tolerance - norm);
        sign.record(Some(i), None, gamma[i]);

        let ids = tri.simplex(i).vertex_ids();
        let mut best = f64::INFINITY;
        for k in 0..m {
            let inputs: Vec<Vec<f64>> =
                ids.iter().map(|&v| dataset.samples()[v].transitions[k].input.clone()).collect();
            let err = params.lipschitz.error_factor(tri, i, &inputs);
            let worst = ids
                .iter()
                .map(|&v| successor_values[v][k] - gamma[i] * values[v])
                .fold(f64::NEG_INFINITY, f64::max);
            best = best.min(worst + b * err);
        }
        dec.record(Some(i), None, -params.eta - best);
    }

    let conditions = vec![exit.finish(), lower.finish(), grad.finish(), dec.finish(), sign.finish()];
    Ok(CertificateReport {
        passed: conditions.iter().all(|c| c.passed),
        b,
        params: *params,
        conditions,
    })
}

/// Feedback law `u(x) = Σ_j λ_j(x) u_{i,j,ξ_i}` on the simplex containing `x`.
#[derive(Debug, Clone)]
pub struct SafeController {
    tri: Triangulation,
    /// Per simplex, the selected input at each of its vertices.
    inputs: Vec<Vec<Vec<f64>>>,
}

impl SafeController {
    pub fn inputs(&self, simplex: usize) -> &[Vec<f64>] {
        &self.inputs[simplex]
    }
}

impl Controller for SafeController {
    fn control(&self, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let (i, lambda) = self
            .tri
            .locate_with_weights(x)
            .ok_or_else(|| DynamicsError::OutsideDomain(Point(x.to_vec())))?;
        let m = self.inputs[i][0].len();
        let mut u = vec![0.0; m];
        for (l, ui) in lambda.weights().iter().zip(&self.inputs[i]) {
            for k in 0..m {
                u[k] += l * ui[k];
            }
        }
        Ok(u)
    }
}

pub fn extract_controller(tri: &Triangulation, dataset: &Dataset, xi: &[usize]) -> Result<SafeController, VerifyError> {
    if tri.vertex_count() != dataset.len() {
        return Err(VerifyError::Mismatch { vertices: tri.vertex_count(), samples: dataset.len() });
    }
    if xi.len() != tri.simplex_count() {
        return Err(VerifyError::Length { what: "input selections", expected: tri.simplex_count(), got: xi.len() });
    }
    let m = dataset.transitions_per_state();
    let mut inputs = Vec::with_capacity(xi.len());
    for (i, &k) in xi.iter().enumerate() {
        if k >= m {
            return Err(VerifyError::BadSelection { simplex: i, index: k });
        }
        inputs.push(
            tri.simplex(i)
                .vertex_ids()
                .iter()
                .map(|&v| dataset.samples()[v].transitions[k].input.clone())
                .collect(),
        );
    }
    Ok(SafeController { tri: tri.clone(), inputs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceViolation {
    pub initial: Point,
    pub step: usize,
    pub state: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceAudit {
    pub samples: usize,
    pub horizon: usize,
    pub violations: Vec<InvarianceViolation>,
    /// Largest input magnitude applied along all rollouts.
    pub max_abs_input: f64,
}

/// Draw initial states uniformly from `{W ≤ 0}` (rejection sampling on the
/// mesh's bounding box) and roll out `horizon` steps, flagging any state with
/// `W̄ > 0`.
pub fn empirical_invariance(
    oracle: &dyn DynamicsOracle,
    controller: Option<&dyn Controller>,
    barrier: &CpaFunction,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<InvarianceAudit, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = barrier.triangulation().bounding_box();
    let mut audit = InvarianceAudit { samples: 0, horizon, violations: vec![], max_abs_input: 0.0 };
    let budget = samples.saturating_mul(10_000).max(10_000);
    let mut attempts = 0usize;
    while audit.samples < samples {
        if attempts >= budget {
            return Err(VerifyError::EmptySafeSet);
        }
        attempts += 1;
        let x0: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
        if barrier.evaluate_extended(&x0) > 0.0 {
            continue;
        }
        audit.samples += 1;
        let mut x = Point(x0.clone());
        for step in 1..=horizon {
            let u = match controller {
                Some(c) if oracle.input_dim() > 0 => c.control(&x)?,
                None if oracle.input_dim() > 0 => return Err(DynamicsError::ControllerRequired.into()),
                _ => vec![],
            };
            audit.max_abs_input = u.iter().fold(audit.max_abs_input, |m, v| m.max(v.abs()));
            x = oracle.step(&x, &u)?;
            if barrier.evaluate_extended(&x) > 0.0 {
                audit.violations.push(InvarianceViolation { initial: Point(x0), step, state: x });
                break;
            }
        }
    }
    Ok(audit)
}

/// Cells of a uniform grid over a box, marked safe when the rollout from the
/// cell center stays in the box for the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeGrid {
    pub lower: Vec<f64>,
    pub spacing: f64,
    pub counts: Vec<usize>,
    pub safe: Vec<bool>,
}

impl SafeGrid {
    /// Center of the cell with flat index `idx` (last axis fastest).
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut c = vec![0.0; self.counts.len()];
        for k in (0..self.counts.len()).rev() {
            let q = rem % self.counts[k];
            rem /= self.counts[k];
            c[k] = self.lower[k] + (q as f64 + 0.5) * self.spacing;
        }
        c
    }

    pub fn len(&self) -> usize {
        self.safe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.safe.is_empty()
    }

    pub fn safe_fraction(&self) -> f64 {
        self.safe.iter().filter(|&&s| s).count() as f64 / self.safe.len().max(1) as f64
    }
}

/// Brute-force approximation of the maximal invariant set of an autonomous
/// system within `bounds`.
pub fn maximal_set_oracle(
    oracle: &dyn DynamicsOracle,
    bounds: &BoxBounds,
    spacing: f64,
    horizon: usize,
) -> Result<SafeGrid, VerifyError> {
    if oracle.input_dim() != 0 {
        return Err(VerifyError::NeedsAutonomous);
    }
    let counts: Vec<usize> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(lo, hi)| (((hi - lo) / spacing).round() as usize).max(1))
        .collect();
    let mut grid = SafeGrid { lower: bounds.lower.clone(), spacing, safe: vec![], counts };
    let total: usize = grid.counts.iter().product();
    let mut safe = Vec::with_capacity(total);
    for idx in 0..total {
        let mut x = Point(grid.center(idx));
        let mut ok = true;
        for _ in 0..horizon {
            x = oracle.step(&x, &[])?;
            if !bounds.contains(&x, 0.0) {
                ok = false;
                break;
            }
        }
        safe.push(ok);
    }
    grid.safe = safe;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzAudit {
    pub pairs: usize,
    /// Largest `‖f(z) − f(z')‖ / bound(z, z')`; at most one when the
    /// declared constants hold on the sampled pairs.
    pub worst_ratio: f64,
    pub violations: usize,
}

/// Check the declared Lipschitz information on random pairs from the boxes.
pub fn lipschitz_audit(
    oracle: &dyn DynamicsOracle,
    state_box: &BoxBounds,
    input_box: Option<&BoxBounds>,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzAudit, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |b: &BoxBounds| -> Vec<f64> {
        b.lower.iter().zip(&b.upper).map(|(&l, &h)| rng.gen_range(l..=h)).collect()
    };
    let info = oracle.lipschitz();
    let mut audit = LipschitzAudit { pairs, worst_ratio: 0.0, violations: 0 };
    for _ in 0..pairs {
        let (x, y) = (draw(state_box), draw(state_box));
        let (u, v) = match input_box {
            Some(ub) => (draw(ub), draw(ub)),
            None => (vec![], vec![]),
        };
        let df = crate::geometry::squared_distance(&oracle.step(&x, &u)?, &oracle.step(&y, &v)?).sqrt();
        let dx = crate::geometry::squared_distance(&x, &y).sqrt();
        let du = crate::geometry::squared_distance(&u, &v).sqrt();
        let bound = match info {
            LipschitzInfo::Joint { l } => l * (dx * dx + du * du).sqrt(),
            LipschitzInfo::Split { l_x, l_u } => l_x * dx + l_u * du,
        };
        if bound == 0.0 {
            continue;
        }
        let ratio = df / bound;
        audit.worst_ratio = audit.worst_ratio.max(ratio);
        if df > bound * (1.0 + 1e-12) {
            audit.violations += 1;
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{OneStepSample, Transition};
    use crate::geometry::Simplex;

    fn tiny() -> (Triangulation, Dataset) {
        let pts = vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0]), Point::from([0.0, 1.0])];
        let tri = Triangulation::from_parts(pts.clone(), vec![Simplex(vec![0, 1, 2])]).unwrap();
        let samples = pts
            .iter()
            .map(|p| OneStepSample {
                state: p.clone(),
                transitions: vec![Transition { input: vec![], successor: Point::from([0.1, 0.1]) }],
            })
            .collect();
        let ds = Dataset::new(
            samples,
            BoxBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            None,
            LipschitzInfo::Joint { l: 0.1 },
        )
        .unwrap();
        (tri, ds)
    }

    #[test]
    fn constant_negative_certificate() {
        let (tri, ds) = tiny();
        let params = VerifyParams::new(0.1, 1.0, 1e-8, LipschitzInfo::Joint { l: 0.1 });
        // W = -1 everywhere, γ = 2: max_j(-1 + 2) would fail, γ = 0.5 gives -1 + 0.5 = -0.5
        let rep = check_certificate(&tri, &ds, &[-1.0; 3], &[0.5], 0.0, &params).unwrap();
        assert!(rep.passed, "{rep:?}");
        let rep = check_certificate(&tri, &ds, &[-1.0; 3], &[2.0], 0.0, &params).unwrap();
        assert!(!rep.condition(Condition::Decrease).passed);
        assert!(rep.condition(Condition::ExitValue).passed);
    }

    #[test]
    fn gradient_condition_flags() {
        let (tri, ds) = tiny();
        let params = VerifyParams::new(0.1, 1.0, 1e-8, LipschitzInfo::Joint { l: 0.0 });
        let rep = check_certificate(&tri, &ds, &[-1.0, 0.0, -1.0], &[0.5], 0.5, &params).unwrap();
        let g = rep.condition(Condition::GradientBound);
        assert!(!g.passed);
        assert!((g.worst_margin - (0.5 + 1e-9 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn controller_interpolates() {
        let pts = vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0]), Point::from([0.0, 1.0])];
        let tri = Triangulation::from_parts(pts.clone(), vec![Simplex(vec![0, 1, 2])]).unwrap();
        let us = [-1.0, 1.0, 0.5];
        let samples = pts
            .iter()
            .zip(us)
            .map(|(p, u)| OneStepSample {
                state: p.clone(),
                transitions: vec![
                    Transition { input: vec![0.0], successor: p.clone() },
                    Transition { input: vec![u], successor: p.clone() },
                ],
            })
            .collect();
        let ds = Dataset::new(
            samples,
            BoxBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            Some(BoxBounds::new(vec![-1.0], vec![1.0])),
            LipschitzInfo::Split { l_x: 1.0, l_u: 1.0 },
        )
        .unwrap();
        let c = extract_controller(&tri, &ds, &[1]).unwrap();
        let u = c.control(&[0.25, 0.25]).unwrap();
        assert!((u[0] - (0.5 * -1.0 + 0.25 * 1.0 + 0.25 * 0.5)).abs() < 1e-15);
        assert!(matches!(c.control(&[2.0, 2.0]), Err(DynamicsError::OutsideDomain(_))));
        assert!(matches!(extract_controller(&tri, &ds, &[2]), Err(VerifyError::BadSelection { .. })));
    }

    #[test]
    fn grid_centers() {
        let g = SafeGrid { lower: vec![0.0, 0.0], spacing: 0.5, counts: vec![2, 2], safe: vec![true; 4] };
        assert_eq!(g.center(1), vec![0.25, 0.75]);
        assert_eq!(g.center(2), vec![0.75, 0.25]);
    }
}
