//! Barrier synthesis by iterative convex overbounding (ICO).
//!
//! Each iteration linearizes the bilinear decrease condition around the
//! current vertex values `W̲` and classifier values `γ̲`, overbounds the
//! remaining product `δγ·δW` by a completed square, and solves the resulting
//! conic program for the increments. Phase one minimizes the total slack until
//! it vanishes; phase two then shrinks the positive part of `W` to enlarge the
//! certified safe set.

use std::fs;
use std::io;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, AffineExpr, Cone, ConeProgram, ConicError, LinearRow, SolveStatus, SolverSettings};
use crate::cpa::{affine_gradient, CpaError, CpaFunction, Segment};
use crate::dataset::{Dataset, DatasetError, LipschitzInfo, OneStepSample, Transition};
use crate::dynamics::{DynamicsError, DynamicsOracle};
use crate::geometry::{delaunay_triangulate, GeometryError, Point, Triangulation};
use crate::verify::{check_certificate, CertificateReport, VerifyError, VerifyParams};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error("mesh and dataset disagree: {0}")]
    Mismatch(String),
    #[error("solver returned {status:?} at iteration {iteration}")]
    SolverFailure { status: SolveStatus, iteration: usize },
    #[error("no sign-changing simplex to refine")]
    NothingToRefine,
    #[error("refinement is pending: {0} new vertices still need transitions")]
    PendingRefinement(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the gradient bound enters the decrease constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BMode {
    /// `b` is optimized jointly with the increments.
    #[default]
    DecisionVariable,
    /// `b` stays at its initial value and bounds every gradient.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementMode {
    #[default]
    None,
    /// Bisect the worst simplex when phase one stalls.
    Feasibility,
    /// Bisect sign-changing simplices after phase two.
    Boundary,
    Both,
}

impl RefinementMode {
    fn feasibility(self) -> bool {
        matches!(self, RefinementMode::Feasibility | RefinementMode::Both)
    }

    fn boundary(self) -> bool {
        matches!(self, RefinementMode::Boundary | RefinementMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Feasibility,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Value of the barrier outside the mesh.
    pub epsilon: f64,
    /// Lower bound on vertex values.
    pub rho: f64,
    /// Stop a phase when the cost decreases by less than this.
    pub chi: f64,
    pub gamma_max: f64,
    /// Bound on `|W|`; `None` means `10·max(ρ, ε)`.
    pub w_max: Option<f64>,
    /// Strict decrease margin required by the verifier.
    pub eta: f64,
    /// Extra margin added inside the subproblem so solver inaccuracy cannot
    /// eat into `eta`.
    pub solver_margin: f64,
    /// Phase one succeeds once every slack is at most this.
    pub slack_tolerance: f64,
    /// Phase-one iterations per mesh before positive slack counts as a stall.
    pub max_iter_feasibility: usize,
    /// Treat phase one as stalled after this many iterations on one mesh,
    /// even while the cost still decreases by more than `chi`.
    pub refine_after: Option<usize>,
    pub max_iter_expansion: usize,
    pub b_mode: BMode,
    /// Overrides the dataset's Lipschitz information.
    pub lipschitz: Option<LipschitzInfo>,
    pub solver: SolverSettings,
    pub refinement: RefinementMode,
    /// Maximum number of refinement rounds of each kind.
    pub max_refinements: usize,
    /// Write each subproblem as `subproblem_<iter>.cone` here.
    pub dump_dir: Option<PathBuf>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            epsilon: 0.1,
            rho: 1.0,
            chi: 1e-6,
            gamma_max: 1e3,
            w_max: None,
            eta: 1e-8,
            solver_margin: 1e-6,
            slack_tolerance: 1e-7,
            max_iter_feasibility: 200,
            refine_after: None,
            max_iter_expansion: 200,
            b_mode: BMode::DecisionVariable,
            lipschitz: None,
            solver: SolverSettings::default(),
            refinement: RefinementMode::None,
            max_refinements: 20,
            dump_dir: None,
        }
    }
}

impl SynthesisConfig {
    pub fn w_max(&self) -> f64 {
        self.w_max.unwrap_or(10.0 * self.rho.max(self.epsilon))
    }

    /// Allowed cost increase between iterations before it counts as a
    /// monotonicity violation.
    pub fn monotonicity_tolerance(&self) -> f64 {
        10.0 * self.solver.tolerance
    }

    pub fn verify_params(&self, lipschitz: LipschitzInfo) -> VerifyParams {
        VerifyParams::new(self.epsilon, self.rho, self.eta, lipschitz)
    }
}

/// Supplies transitions for states inserted by refinement.
pub trait TransitionSource {
    fn transitions(&self, state: &[f64]) -> Result<Vec<Transition>, DynamicsError>;
}

/// Queries an oracle at a fixed list of inputs.
pub struct OracleSource<'a> {
    oracle: &'a dyn DynamicsOracle,
    inputs: Vec<Vec<f64>>,
}

impl<'a> OracleSource<'a> {
    pub fn new(oracle: &'a dyn DynamicsOracle, inputs: Vec<Vec<f64>>) -> Self {
        OracleSource { oracle, inputs }
    }

    /// Reuse the inputs of the dataset's first sample.
    pub fn matching(oracle: &'a dyn DynamicsOracle, dataset: &Dataset) -> Self {
        let inputs = dataset
            .samples()
            .first()
            .map(|s| s.transitions.iter().map(|t| t.input.clone()).collect())
            .unwrap_or_else(|| vec![vec![]]);
        OracleSource { oracle, inputs }
    }
}

impl TransitionSource for OracleSource<'_> {
    fn transitions(&self, state: &[f64]) -> Result<Vec<Transition>, DynamicsError> {
        self.inputs
            .iter()
            .map(|u| Ok(Transition { input: u.clone(), successor: self.oracle.step(state, u)? }))
            .collect()
    }
}

/// Where a successor landed: simplex and barycentric weights per vertex.
#[derive(Debug, Clone, PartialEq)]
struct Located {
    weights: Vec<(usize, f64)>,
}

/// A vertex created by refinement that still needs transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSample {
    pub vertex: usize,
    pub point: Point,
    pub edge: (usize, usize),
}

/// Column ranges of one assembled subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub delta_w: usize,
    pub delta_gamma: usize,
    pub b: usize,
    pub theta: Option<usize>,
    pub hinge: Option<usize>,
    pub vertices: usize,
    pub simplices: usize,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConeProgram,
    pub layout: VariableLayout,
    /// Number of gradient cones (one per simplex).
    pub gradient_cones: usize,
    /// Number of decrease cones (one per simplex vertex).
    pub decrease_cones: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub phase: Phase,
    pub cost: f64,
    pub max_slack: f64,
    pub b: f64,
    pub solver_iterations: u32,
    pub solver_status: SolveStatus,
    pub solver_violation: f64,
    pub wall_ms: f64,
}

/// Mutable synthesis state: mesh, data and current iterate.
#[derive(Debug, Clone)]
pub struct IcoState {
    tri: Triangulation,
    dataset: Dataset,
    lipschitz: LipschitzInfo,
    located: Vec<Vec<Option<Located>>>,
    values: Vec<f64>,
    gamma: Vec<f64>,
    xi: Vec<usize>,
    b: f64,
    slack: Vec<f64>,
    phase: Phase,
    iteration: usize,
    pending: Vec<PendingSample>,
}

impl IcoState {
    /// Triangulate the dataset's states and initialize.
    pub fn from_dataset(dataset: Dataset, config: &SynthesisConfig) -> Result<Self, SynthesisError> {
        if dataset.is_empty() {
            return Err(SynthesisError::EmptyDataset);
        }
        let tri = delaunay_triangulate(&dataset.states())?;
        Self::initialize(dataset, tri, config)
    }

    /// Initial iterate: `W = −ρ` at vertices with some successor in the mesh
    /// and `ε` elsewhere; `γ = 0.1` on simplices whose vertices are all at
    /// `−ρ` and `1` otherwise; inputs by the min–max rule; `b` from the
    /// initial gradients.
    pub fn initialize(dataset: Dataset, tri: Triangulation, config: &SynthesisConfig) -> Result<Self, SynthesisError> {
        if dataset.is_empty() {
            return Err(SynthesisError::EmptyDataset);
        }
        if tri.vertex_count() != dataset.len() {
            return Err(SynthesisError::Mismatch(format!(
                "{} vertices vs {} samples",
                tri.vertex_count(),
                dataset.len()
            )));
        }
        for (v, s) in dataset.samples().iter().enumerate() {
            if tri.vertex(v) != &s.state {
                return Err(SynthesisError::Mismatch(format!("vertex {v} is not sample {v}")));
            }
        }
        let lipschitz = config.lipschitz.unwrap_or(dataset.lipschitz());
        let mut state = IcoState {
            lipschitz,
            located: vec![],
            values: vec![],
            gamma: vec![],
            xi: vec![0; tri.simplex_count()],
            b: 0.0,
            slack: vec![0.0; tri.vertex_count()],
            phase: Phase::Feasibility,
            iteration: 0,
            pending: vec![],
            tri,
            dataset,
        };
        state.relocate();
        state.values = (0..state.tri.vertex_count())
            .map(|v| if state.is_exit(v) { config.epsilon } else { -config.rho })
            .collect();
        state.gamma = (0..state.tri.simplex_count())
            .map(|i| {
                let all_low = state.tri.simplex(i).vertex_ids().iter().all(|&v| state.values[v] == -config.rho);
                if all_low {
                    0.1
                } else {
                    1.0
                }
            })
            .collect();
        state.b = state.gradient_bound()?;
        state.xi = state.select_inputs(config.epsilon);
        state.slack = state.required_slack(config);
        Ok(state)
    }

    /// Rebuild a state from stored iterate data, e.g. a result bundle.
    pub fn restore(
        dataset: Dataset,
        tri: Triangulation,
        values: Vec<f64>,
        gamma: Vec<f64>,
        xi: Vec<usize>,
        b: f64,
        config: &SynthesisConfig,
    ) -> Result<Self, SynthesisError> {
        let mut state = Self::initialize(dataset, tri, config)?;
        let (nv, ns) = (state.tri.vertex_count(), state.tri.simplex_count());
        if values.len() != nv || gamma.len() != ns || xi.len() != ns {
            return Err(SynthesisError::Mismatch(format!(
                "iterate sizes ({}, {}, {}) do not match mesh ({nv} vertices, {ns} simplices)",
                values.len(),
                gamma.len(),
                xi.len()
            )));
        }
        let m = state.dataset.transitions_per_state();
        if let Some(&k) = xi.iter().find(|&&k| k >= m) {
            return Err(SynthesisError::Mismatch(format!("input index {k} out of range")));
        }
        state.values = values;
        state.gamma = gamma;
        state.xi = xi;
        state.b = b.max(state.gradient_bound()?);
        state.slack = state.required_slack(config).into_iter().map(|t| t.max(0.0)).collect();
        Ok(state)
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.tri
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn lipschitz(&self) -> LipschitzInfo {
        self.lipschitz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Selected input index per simplex (zero-based).
    pub fn xi(&self) -> &[usize] {
        &self.xi
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Per-vertex slack of the last phase-one solve.
    pub fn slack(&self) -> &[f64] {
        &self.slack
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn barrier(&self, config: &SynthesisConfig) -> Result<CpaFunction<'_>, SynthesisError> {
        Ok(CpaFunction::new(&self.tri, self.values.clone(), config.epsilon)?)
    }

    /// Whether every successor of vertex `v` leaves the mesh.
    pub fn is_exit(&self, v: usize) -> bool {
        self.located[v].iter().all(Option::is_none)
    }

    fn relocate(&mut self) {
        let tri = &self.tri;
        self.located = self
            .dataset
            .samples()
            .iter()
            .map(|s| {
                s.transitions
                    .iter()
                    .map(|t| {
                        tri.locate_with_weights(&t.successor).map(|(i, l)| Located {
                            weights: tri.simplex(i).vertex_ids().iter().copied().zip(l.0).collect(),
                        })
                    })
                    .collect()
            })
            .collect();
    }

    fn gradient_bound(&self) -> Result<f64, SynthesisError> {
        let mut b = 0.0f64;
        for i in 0..self.tri.simplex_count() {
            let g = affine_gradient(&self.tri, i, &self.values)?;
            b = b.max(g.iter().map(|c| c * c).sum::<f64>().sqrt());
        }
        Ok(b)
    }

    fn successor_value(&self, v: usize, k: usize, epsilon: f64) -> f64 {
        match &self.located[v][k] {
            Some(loc) => loc.weights.iter().map(|&(u, l)| l * self.values[u]).sum(),
            None => epsilon,
        }
    }

    fn successor_expr(&self, v: usize, k: usize, epsilon: f64, dw: usize) -> AffineExpr {
        match &self.located[v][k] {
            Some(loc) => {
                let mut e = AffineExpr::constant(0.0);
                for &(u, l) in &loc.weights {
                    e.constant += l * self.values[u];
                    e.terms.push((dw + u, l));
                }
                e
            }
            None => AffineExpr::constant(epsilon),
        }
    }

    fn error_factor(&self, i: usize, k: usize) -> f64 {
        let inputs: Vec<Vec<f64>> = self
            .tri
            .simplex(i)
            .vertex_ids()
            .iter()
            .map(|&v| self.dataset.samples()[v].transitions[k].input.clone())
            .collect();
        self.lipschitz.error_factor(&self.tri, i, &inputs)
    }

    /// `max_j [W̄(x⁺_{i,j,k}) − γ_i W(x_{i,j})] + b·e_i(k)` at the current iterate.
    fn selection_criterion(&self, i: usize, k: usize, epsilon: f64) -> f64 {
        let worst = self
            .tri
            .simplex(i)
            .vertex_ids()
            .iter()
            .map(|&v| self.successor_value(v, k, epsilon) - self.gamma[i] * self.values[v])
            .fold(f64::NEG_INFINITY, f64::max);
        worst + self.b * self.error_factor(i, k)
    }

    /// Min–max input choice per simplex, smallest index on ties.
    pub fn select_inputs(&self, epsilon: f64) -> Vec<usize> {
        let m = self.dataset.transitions_per_state();
        (0..self.tri.simplex_count())
            .map(|i| argmin((0..m).map(|k| (k, self.selection_criterion(i, k, epsilon)))))
            .collect()
    }

    /// Min–max choice restricted to inputs that do not worsen any vertex's
    /// successor value or the simplex error factor relative to the current
    /// choice, so the previous iterate stays feasible.
    fn reselect_inputs(&self, epsilon: f64) -> Vec<usize> {
        let m = self.dataset.transitions_per_state();
        (0..self.tri.simplex_count())
            .map(|i| {
                let cur = self.xi[i];
                let ids = self.tri.simplex(i).vertex_ids();
                let cur_vals: Vec<f64> = ids.iter().map(|&v| self.successor_value(v, cur, epsilon)).collect();
                let cur_err = self.error_factor(i, cur);
                let admissible = (0..m).filter(|&k| {
                    k == cur
                        || (self.error_factor(i, k) <= cur_err
                            && ids
                                .iter()
                                .zip(&cur_vals)
                                .all(|(&v, &c)| self.successor_value(v, k, epsilon) <= c))
                });
                argmin(admissible.map(|k| (k, self.selection_criterion(i, k, epsilon))))
            })
            .collect()
    }

    /// Smallest per-vertex slack that makes the current iterate satisfy the
    /// decrease constraints with zero increments.
    pub fn required_slack(&self, config: &SynthesisConfig) -> Vec<f64> {
        let margin = config.eta + config.solver_margin;
        let mut slack = vec![0.0f64; self.tri.vertex_count()];
        for i in 0..self.tri.simplex_count() {
            let k = self.xi[i];
            let err = self.b * self.error_factor(i, k);
            for &v in self.tri.simplex(i).vertex_ids() {
                let a = self.successor_value(v, k, config.epsilon) - self.gamma[i] * self.values[v] + err + margin;
                slack[v] = slack[v].max(a);
            }
        }
        slack
    }

    /// Build the conic subproblem for the current phase.
    pub fn assemble(&self, config: &SynthesisConfig) -> Result<Subproblem, SynthesisError> {
        if !self.pending.is_empty() {
            return Err(SynthesisError::PendingRefinement(self.pending.len()));
        }
        let nv = self.tri.vertex_count();
        let ns = self.tri.simplex_count();
        let mut p = ConeProgram::new();
        let dw = p.num_vars();
        for v in 0..nv {
            p.add_var(format!("dW[{v}]"));
        }
        let dg = p.num_vars();
        for i in 0..ns {
            p.add_var(format!("dgamma[{i}]"));
        }
        let bv = p.add_var("b");
        let (theta, hinge) = match self.phase {
            Phase::Feasibility => {
                let t = p.num_vars();
                for v in 0..nv {
                    p.add_var(format!("theta[{v}]"));
                }
                (Some(t), None)
            }
            Phase::Expansion => {
                let h = p.num_vars();
                for v in 0..nv {
                    p.add_var(format!("h[{v}]"));
                }
                (None, Some(h))
            }
        };
        let layout = VariableLayout { delta_w: dw, delta_gamma: dg, b: bv, theta, hinge, vertices: nv, simplices: ns };
        let w_expr = |v: usize| AffineExpr::var(dw + v).plus_constant(self.values[v]);
        let w_max = config.w_max();

        for v in 0..nv {
            let lower = if self.is_exit(v) { config.epsilon } else { -config.rho };
            p.add_row(LinearRow::nonneg(&w_expr(v).plus_constant(-lower)));
            p.add_row(LinearRow::nonpos(&w_expr(v).plus_constant(-w_max)));
            if let Some(t) = theta {
                p.add_row(LinearRow::nonneg(&AffineExpr::var(t + v)));
            }
            if let Some(h) = hinge {
                p.add_row(LinearRow::nonneg(&AffineExpr::var(h + v)));
                p.add_row(LinearRow::nonneg(&AffineExpr::var(h + v).add(&w_expr(v).scale(-1.0))));
            }
        }
        for i in 0..ns {
            let g = AffineExpr::var(dg + i).plus_constant(self.gamma[i]);
            p.add_row(LinearRow::nonneg(&g));
            p.add_row(LinearRow::nonpos(&g.plus_constant(-config.gamma_max)));
        }

        // gradient bound: ‖X_i⁻¹ ΔW_i‖ ≤ b
        if config.b_mode == BMode::Frozen {
            p.add_row(LinearRow::zero(&AffineExpr::var(bv).plus_constant(-self.b)));
        }
        let n = self.tri.dim();
        for i in 0..ns {
            let inv = self.tri.difference_inverse(i)?;
            let ids = self.tri.simplex(i).vertex_ids();
            let base = affine_gradient(&self.tri, i, &self.values)?;
            let rows = (0..n)
                .map(|r| {
                    let mut e = AffineExpr::constant(base[r]);
                    let mut sum = 0.0;
                    for j in 0..n {
                        let c = inv[r * n + j];
                        e.terms.push((dw + ids[j + 1], c));
                        sum += c;
                    }
                    e.terms.push((dw + ids[0], -sum));
                    e.normalized()
                })
                .collect();
            p.add_cone(Cone::SecondOrder { t: AffineExpr::var(bv), v: rows });
        }

        // decrease: M(x⁺, x) ⪯ θ I
        let margin = config.eta + config.solver_margin;
        let mut decrease_cones = 0;
        for i in 0..ns {
            let k = self.xi[i];
            let err = self.error_factor(i, k);
            for &v in self.tri.simplex(i).vertex_ids() {
                let mut a = self.successor_expr(v, k, config.epsilon, dw);
                a.constant += -self.gamma[i] * self.values[v] + margin;
                a.terms.push((dg + i, -self.values[v]));
                a.terms.push((dw + v, -self.gamma[i]));
                match config.b_mode {
                    BMode::DecisionVariable => a.terms.push((bv, err)),
                    BMode::Frozen => a.constant += self.b * err,
                }
                let a = a.normalized();
                let th = match theta {
                    Some(t) => AffineExpr::var(t + v),
                    None => AffineExpr::constant(0.0),
                };
                let (cone, rows) = conic::lmi_to_rotated_cone(&a, [&AffineExpr::var(dg + i), &AffineExpr::var(dw + v)], &th);
                p.add_cone(cone);
                for r in &rows {
                    p.add_row(LinearRow::nonneg(r));
                }
                decrease_cones += 1;
            }
        }

        p.objective = match (theta, hinge) {
            (Some(t), _) => (0..nv).map(|v| (t + v, 1.0)).collect(),
            (_, Some(h)) => (0..nv).map(|v| (h + v, 1.0)).collect(),
            _ => unreachable!("one of theta or hinge is present"),
        };
        Ok(Subproblem { program: p, layout, gradient_cones: ns, decrease_cones })
    }

    /// Phase-two cost `Σ max(0, W)`.
    pub fn expansion_cost(&self) -> f64 {
        self.values.iter().map(|w| w.max(0.0)).sum()
    }

    /// Solve one subproblem and apply the increments.
    pub fn step(&mut self, config: &SynthesisConfig) -> Result<StepReport, SynthesisError> {
        let started = Instant::now();
        let sub = self.assemble(config)?;
        if let Some(dir) = &config.dump_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("subproblem_{}.cone", self.iteration)), sub.program.dump())?;
        }
        let sol = conic::solve(&sub.program, &config.solver)?;
        let usable = match sol.status {
            SolveStatus::Optimal => true,
            SolveStatus::ReducedAccuracy | SolveStatus::Stalled | SolveStatus::MaxIter => sol.max_violation <= 1e-6,
            SolveStatus::Infeasible | SolveStatus::Unbounded => false,
        };
        if !usable {
            return Err(SynthesisError::SolverFailure { status: sol.status, iteration: self.iteration });
        }
        let l = &sub.layout;
        let w_max = config.w_max();
        for v in 0..l.vertices {
            let lower = if self.is_exit(v) { config.epsilon } else { -config.rho };
            self.values[v] = (self.values[v] + sol.x[l.delta_w + v]).clamp(lower, w_max);
        }
        for i in 0..l.simplices {
            self.gamma[i] = (self.gamma[i] + sol.x[l.delta_gamma + i]).clamp(0.0, config.gamma_max);
        }
        let actual = self.gradient_bound()?;
        self.b = match config.b_mode {
            BMode::DecisionVariable => sol.x[l.b].max(actual),
            // fixed unless clipping or round-off pushed a gradient past it
            BMode::Frozen => self.b.max(actual),
        };
        if let Some(t) = l.theta {
            self.slack = (0..l.vertices).map(|v| sol.x[t + v].max(0.0)).collect();
        } else {
            self.slack = vec![0.0; l.vertices];
        }
        self.xi = self.reselect_inputs(config.epsilon);
        let cost = match self.phase {
            Phase::Feasibility => self.slack.iter().sum(),
            Phase::Expansion => self.expansion_cost(),
        };
        let report = StepReport {
            iteration: self.iteration,
            phase: self.phase,
            cost,
            max_slack: self.slack.iter().copied().fold(0.0, f64::max),
            b: self.b,
            solver_iterations: sol.iterations,
            solver_status: sol.status,
            solver_violation: sol.max_violation,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.iteration += 1;
        Ok(report)
    }

    pub fn verify(&self, config: &SynthesisConfig) -> Result<CertificateReport, SynthesisError> {
        Ok(check_certificate(
            &self.tri,
            &self.dataset,
            &self.values,
            &self.gamma,
            self.b,
            &config.verify_params(self.lipschitz),
        )?)
    }

    /// Per-simplex sum of vertex slacks.
    pub fn simplex_slack(&self) -> Vec<f64> {
        (0..self.tri.simplex_count())
            .map(|i| self.tri.simplex(i).vertex_ids().iter().map(|&v| self.slack[v]).sum())
            .collect()
    }

    /// Simplices ordered by decreasing slack sum, at most `count`.
    pub fn worst_simplices(&self, count: usize) -> Vec<(usize, f64)> {
        let mut s: Vec<(usize, f64)> = self.simplex_slack().into_iter().enumerate().collect();
        s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        s.truncate(count);
        s
    }

    fn bisect(&mut self, a: usize, b: usize) -> Result<PendingSample, SynthesisError> {
        let bis = self.tri.bisect_edge(a, b)?;
        self.values.push(0.5 * (self.values[a] + self.values[b]));
        self.slack.push(self.slack[a].max(self.slack[b]));
        for &(parent, child) in &bis.splits {
            debug_assert_eq!(child, self.gamma.len());
            self.gamma.push(self.gamma[parent]);
            self.xi.push(self.xi[parent]);
        }
        let p = PendingSample { vertex: bis.vertex, point: bis.midpoint, edge: bis.edge };
        self.pending.push(p.clone());
        Ok(p)
    }

    /// Bisect the longest edge of the simplex with the largest slack sum.
    pub fn refine_feasibility(&mut self) -> Result<PendingSample, SynthesisError> {
        let (worst, _) = *self.worst_simplices(1).first().ok_or(SynthesisError::NothingToRefine)?;
        let (a, b) = self.tri.longest_edge(worst);
        self.bisect(a, b)
    }

    /// Bisect the longest edge of every simplex the zero level set crosses.
    /// Edges are collected before any split and each is bisected once.
    pub fn refine_boundary(&mut self) -> Result<Vec<PendingSample>, SynthesisError> {
        let crossing: Vec<usize> = (0..self.tri.simplex_count())
            .filter(|&i| {
                let ids = self.tri.simplex(i).vertex_ids();
                ids.iter().any(|&v| self.values[v] < 0.0) && ids.iter().any(|&v| self.values[v] > 0.0)
            })
            .collect();
        if crossing.is_empty() {
            return Err(SynthesisError::NothingToRefine);
        }
        let mut edges: Vec<(usize, usize)> = crossing.iter().map(|&i| self.tri.longest_edge(i)).collect();
        edges.sort_unstable();
        edges.dedup();
        edges.into_iter().map(|(a, b)| self.bisect(a, b)).collect()
    }

    pub fn pending(&self) -> &[PendingSample] {
        &self.pending
    }

    /// Attach sampled transitions to a pending vertex. Once every pending
    /// vertex is supplied, successors are relocated on the refined mesh and
    /// new exit-labeled vertices are lifted to `ε`.
    pub fn supply(
        &mut self,
        vertex: usize,
        transitions: Vec<Transition>,
        config: &SynthesisConfig,
    ) -> Result<(), SynthesisError> {
        let pos = self
            .pending
            .iter()
            .position(|p| p.vertex == vertex)
            .ok_or_else(|| SynthesisError::Mismatch(format!("vertex {vertex} is not pending")))?;
        if vertex != self.dataset.len() {
            return Err(SynthesisError::Mismatch(format!(
                "transitions must be supplied in vertex order; next is {}",
                self.dataset.len()
            )));
        }
        let p = self.pending.remove(pos);
        self.dataset.push(OneStepSample { state: p.point, transitions })?;
        if self.pending.is_empty() {
            self.relocate();
            for v in 0..self.values.len() {
                if self.is_exit(v) && self.values[v] < config.epsilon {
                    self.values[v] = config.epsilon;
                }
            }
            self.b = self.gradient_bound()?.max(if config.b_mode == BMode::DecisionVariable { self.b } else { 0.0 });
        }
        Ok(())
    }

    /// Refine and sample every new vertex from `source`.
    pub fn supply_all(&mut self, source: &dyn TransitionSource, config: &SynthesisConfig) -> Result<(), SynthesisError> {
        let mut pending = self.pending.clone();
        pending.sort_by_key(|p| p.vertex);
        for p in pending {
            let t = source.transitions(&p.point)?;
            self.supply(p.vertex, t, config)?;
        }
        Ok(())
    }
}

fn argmin(items: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in items {
        match best {
            Some((_, bv)) if v >= bv => {}
            _ => best = Some((k, v)),
        }
    }
    best.map_or(0, |b| b.0)
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub phase: Phase,
    pub cost: f64,
    pub max_slack: f64,
    pub b: f64,
    pub solver_iters: u32,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertedPoint {
    pub round: usize,
    pub kind: RefinementMode,
    pub vertex: usize,
    pub point: Point,
    pub edge: (usize, usize),
}

/// Cost increase larger than the allowed tolerance within one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub iter: usize,
    pub phase: Phase,
    pub previous: f64,
    pub current: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub state: IcoState,
    pub config: SynthesisConfig,
    /// Phase one drove every slack below tolerance.
    pub phase1_converged: bool,
    pub certificate: CertificateReport,
    pub log: Vec<IterationRecord>,
    pub inserted: Vec<InsertedPoint>,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    /// Worst simplices by slack when phase one stalled.
    pub stalled_on: Vec<(usize, f64)>,
    /// Boundary rounds that were discarded because the refined mesh did not
    /// certify at least the previous safe set.
    pub rejected_rounds: Vec<usize>,
}

impl SynthesisResult {
    /// A verified certificate was produced.
    pub fn feasible(&self) -> bool {
        self.certificate.passed
    }

    pub fn triangulation(&self) -> &Triangulation {
        self.state.triangulation()
    }

    pub fn dataset(&self) -> &Dataset {
        self.state.dataset()
    }

    pub fn values(&self) -> &[f64] {
        self.state.values()
    }

    pub fn gamma(&self) -> &[f64] {
        self.state.gamma()
    }

    pub fn xi(&self) -> &[usize] {
        self.state.xi()
    }

    pub fn b(&self) -> f64 {
        self.state.b()
    }

    pub fn barrier(&self) -> CpaFunction<'_> {
        CpaFunction::new(self.state.triangulation(), self.state.values().to_vec(), self.config.epsilon)
            .expect("iterate values are finite")
    }

    pub fn boundary(&self) -> Result<Vec<Segment>, SynthesisError> {
        Ok(self.barrier().zero_level_set()?)
    }

    pub fn safe_area(&self) -> Result<f64, SynthesisError> {
        Ok(self.barrier().sublevel_region_area()?)
    }

    pub fn iterations(&self, phase: Phase) -> usize {
        self.log.iter().filter(|r| r.phase == phase).count()
    }
}

/// Slack allowed when comparing safe-set areas across a boundary round.
pub const AREA_TOLERANCE: f64 = 1e-9;

fn certified_area(state: &IcoState, config: &SynthesisConfig) -> Result<f64, SynthesisError> {
    Ok(state.barrier(config)?.sublevel_region_area()?)
}

/// Run both phases on a fixed dataset.
pub fn synthesize(dataset: Dataset, config: &SynthesisConfig) -> Result<SynthesisResult, SynthesisError> {
    synthesize_with(dataset, config, None)
}

/// Run both phases, refining the mesh with new samples from `source` as
/// permitted by `config.refinement`.
pub fn synthesize_with(
    dataset: Dataset,
    config: &SynthesisConfig,
    source: Option<&dyn TransitionSource>,
) -> Result<SynthesisResult, SynthesisError> {
    resume(IcoState::from_dataset(dataset, config)?, config, source)
}

/// Continue the two-phase loop from an existing state, starting in phase one.
pub fn resume(
    mut state: IcoState,
    config: &SynthesisConfig,
    source: Option<&dyn TransitionSource>,
) -> Result<SynthesisResult, SynthesisError> {
    let mut run = Run { config, log: vec![], inserted: vec![], violations: vec![], prev: None };
    let mut feas_rounds = 0;
    let mut boundary_rounds = 0;
    let mut best: Option<IcoState> = None;
    let mut phase1_converged;
    let mut stalled_on = vec![];
    // last certified state before the current boundary round, its safe-set
    // area and the number of points logged before the round
    let mut anchor: Option<(IcoState, f64, usize)> = None;
    let mut rejected_rounds = vec![];

    loop {
        state.set_phase(Phase::Feasibility);
        run.prev = None;
        phase1_converged = false;
        let mut seg_iters = 0;
        let budget = config.refine_after.unwrap_or(usize::MAX).min(config.max_iter_feasibility);
        // An iterate that already needs no slack (a restored bundle, or a mesh
        // just refined along the boundary) skips phase one: with a zero
        // optimum the solver would return an arbitrary feasible point and
        // could throw away most of the safe set.
        let needed = state.required_slack(config);
        if needed.iter().all(|&t| t <= config.slack_tolerance) {
            state.slack = vec![0.0; needed.len()];
            phase1_converged = true;
        }
        while !phase1_converged {
            let rep = match state.step(config) {
                Ok(r) => r,
                Err(SynthesisError::SolverFailure { .. }) => break,
                Err(e) => return Err(e),
            };
            seg_iters += 1;
            let prev = run.record(&rep);
            if rep.max_slack <= config.slack_tolerance {
                phase1_converged = true;
                break;
            }
            let slow = prev.is_some_and(|p| p - rep.cost < config.chi);
            if !slow && seg_iters < budget {
                continue;
            }
            let can_refine = config.refinement.feasibility() && feas_rounds < config.max_refinements;
            match source {
                Some(src) if can_refine => {
                    feas_rounds += 1;
                    let p = state.refine_feasibility()?;
                    state.supply_all(src, config)?;
                    run.inserted.push(InsertedPoint {
                        round: feas_rounds,
                        kind: RefinementMode::Feasibility,
                        vertex: p.vertex,
                        point: p.point,
                        edge: p.edge,
                    });
                    run.prev = None;
                    seg_iters = 0;
                }
                _ => break,
            }
        }
        if !phase1_converged {
            if let Some((prev, _, n)) = anchor.take() {
                // the refined mesh could not be made slack-free again
                rejected_rounds.push(boundary_rounds);
                run.inserted.truncate(n);
                best = Some(prev);
                phase1_converged = true;
            } else {
                stalled_on = state.worst_simplices(10);
            }
            break;
        }
        if state.verify(config)?.passed {
            best = Some(state.clone());
        }

        state.set_phase(Phase::Expansion);
        run.prev = Some(state.expansion_cost());
        let mut iters = 0;
        while iters < config.max_iter_expansion {
            let rep = match state.step(config) {
                Ok(r) => r,
                Err(SynthesisError::SolverFailure { .. }) => break,
                Err(e) => return Err(e),
            };
            iters += 1;
            let prev = run.record(&rep);
            if !state.verify(config)?.passed {
                break;
            }
            best = Some(state.clone());
            if prev.is_some_and(|p| p - rep.cost < config.chi) {
                break;
            }
        }

        if let Some((prev, area, n)) = anchor.take() {
            let grown = match &best {
                Some(b) => certified_area(b, config)? >= area - AREA_TOLERANCE,
                None => false,
            };
            if !grown {
                rejected_rounds.push(boundary_rounds);
                run.inserted.truncate(n);
                best = Some(prev);
                break;
            }
        }

        let can_refine = config.refinement.boundary() && boundary_rounds < config.max_refinements;
        match (source, best.take()) {
            (Some(src), Some(b)) if can_refine => {
                state = b.clone();
                anchor = Some((b, certified_area(&state, config)?, run.inserted.len()));
                boundary_rounds += 1;
                let pending = match state.refine_boundary() {
                    Ok(p) => p,
                    Err(SynthesisError::NothingToRefine) => {
                        best = anchor.take().map(|a| a.0);
                        break;
                    }
                    Err(e) => return Err(e),
                };
                state.supply_all(src, config)?;
                for p in pending {
                    run.inserted.push(InsertedPoint {
                        round: boundary_rounds,
                        kind: RefinementMode::Boundary,
                        vertex: p.vertex,
                        point: p.point,
                        edge: p.edge,
                    });
                }
            }
            (_, b) => {
                best = b;
                break;
            }
        }
    }

    let state = best.unwrap_or(state);
    let certificate = state.verify(config)?;
    Ok(SynthesisResult {
        state,
        config: config.clone(),
        phase1_converged,
        certificate,
        log: run.log,
        inserted: run.inserted,
        monotonicity_violations: run.violations,
        stalled_on,
        rejected_rounds,
    })
}

struct Run<'a> {
    config: &'a SynthesisConfig,
    log: Vec<IterationRecord>,
    inserted: Vec<InsertedPoint>,
    violations: Vec<MonotonicityViolation>,
    prev: Option<f64>,
}

impl Run<'_> {
    /// Log a step and return the previous cost within the current segment.
    fn record(&mut self, rep: &StepReport) -> Option<f64> {
        self.log.push(IterationRecord {
            iter: rep.iteration,
            phase: rep.phase,
            cost: rep.cost,
            max_slack: rep.max_slack,
            b: rep.b,
            solver_iters: rep.solver_iterations,
            wall_ms: rep.wall_ms,
        });
        let prev = self.prev.replace(rep.cost);
        if let Some(p) = prev {
            if rep.cost > p + self.config.monotonicity_tolerance() {
                self.violations.push(MonotonicityViolation {
                    iter: rep.iteration,
                    phase: rep.phase,
                    previous: p,
                    current: rep.cost,
                });
            }
        }
        prev
    }
}
