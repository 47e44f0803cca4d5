//! One-step transition oracles, controllers and closed-loop simulation.

use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BoxBounds, LipschitzInfo};
use crate::geometry::Point;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("input {value} exceeds the admissible bound {bound}")]
    InputOutOfRange { value: f64, bound: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the system has inputs but no controller was given")]
    ControllerRequired,
    #[error("controller undefined at {0}")]
    OutsideDomain(Point),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Black-box one-step map `x⁺ = f(x, u)`.
pub trait DynamicsOracle: Send + Sync {
    fn state_dim(&self) -> usize;
    /// Zero for autonomous systems.
    fn input_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Point, DynamicsError>;
    fn lipschitz(&self) -> LipschitzInfo;
}

/// A state-feedback law.
pub trait Controller {
    fn control(&self, x: &[f64]) -> Result<Vec<f64>, DynamicsError>;
}

/// `x⁺ = A x + B u` with optional bound `|u_k| ≤ input_bound`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    input_bound: Option<f64>,
    lipschitz: LipschitzInfo,
}

impl LinearSystem {
    /// `a` is row-major n×n, `b` row-major n×m.
    pub fn new(
        n: usize,
        m: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        input_bound: Option<f64>,
        lipschitz: LipschitzInfo,
    ) -> Self {
        assert_eq!(a.len(), n * n, "A must be n×n");
        assert_eq!(b.len(), n * m, "B must be n×m");
        LinearSystem { n, m, a, b, input_bound, lipschitz }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }
}

const INPUT_SLACK: f64 = 1e-12;

impl DynamicsOracle for LinearSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Point, DynamicsError> {
        check_len(x, self.n)?;
        check_len(u, self.m)?;
        if let Some(bound) = self.input_bound {
            if let Some(&value) = u.iter().find(|v| v.abs() > bound + INPUT_SLACK) {
                return Err(DynamicsError::InputOutOfRange { value, bound });
            }
        }
        let mut out = vec![0.0; self.n];
        for r in 0..self.n {
            let mut s = 0.0;
            for c in 0..self.n {
                s += self.a[r * self.n + c] * x[c];
            }
            for c in 0..self.m {
                s += self.b[r * self.m + c] * u[c];
            }
            out[r] = s;
        }
        Ok(Point(out))
    }

    fn lipschitz(&self) -> LipschitzInfo {
        self.lipschitz
    }
}

/// `x1⁺ = 0.5 x1 − 0.7 x2²`, `x2⁺ = 0.9 x2³ + x1 x2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NonlinearAutonomous;

impl DynamicsOracle for NonlinearAutonomous {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Point, DynamicsError> {
        check_len(x, 2)?;
        check_len(u, 0)?;
        let (x1, x2) = (x[0], x[1]);
        Ok(Point(vec![0.5 * x1 - 0.7 * x2 * x2, 0.9 * x2 * x2 * x2 + x1 * x2]))
    }

    fn lipschitz(&self) -> LipschitzInfo {
        LipschitzInfo::Joint { l: 4.05 }
    }
}

fn check_len(v: &[f64], n: usize) -> Result<(), DynamicsError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(DynamicsError::DimensionMismatch { expected: n, got: v.len() })
    }
}

/// State matrix shared by both linear benchmarks.
pub const BENCHMARK_A: [f64; 4] = [0.22, 0.4013, -0.5364, 0.2109];
/// Upper bound on the spectral norm of [`BENCHMARK_A`].
pub const BENCHMARK_A_NORM: f64 = 0.5837;

/// The three reference systems with their default sampling setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    LinearAuto,
    LinearNonauto,
    NonlinearAuto,
}

impl Benchmark {
    pub fn oracle(self) -> Box<dyn DynamicsOracle> {
        match self {
            Benchmark::LinearAuto => Box::new(LinearSystem::new(
                2,
                0,
                BENCHMARK_A.to_vec(),
                vec![],
                None,
                LipschitzInfo::Joint { l: BENCHMARK_A_NORM },
            )),
            Benchmark::LinearNonauto => Box::new(LinearSystem::new(
                2,
                1,
                BENCHMARK_A.to_vec(),
                vec![0.0, 1.0],
                Some(1.0),
                LipschitzInfo::Split { l_x: BENCHMARK_A_NORM, l_u: 1.0 },
            )),
            Benchmark::NonlinearAuto => Box::new(NonlinearAutonomous),
        }
    }

    pub fn state_box(self) -> BoxBounds {
        match self {
            Benchmark::LinearAuto | Benchmark::LinearNonauto => BoxBounds::new(vec![-0.25, -1.0], vec![1.0, 0.25]),
            Benchmark::NonlinearAuto => BoxBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
        }
    }

    pub fn input_box(self) -> Option<BoxBounds> {
        match self {
            Benchmark::LinearNonauto => Some(BoxBounds::new(vec![-1.0], vec![1.0])),
            _ => None,
        }
    }

    pub fn state_spacing(self) -> f64 {
        match self {
            Benchmark::LinearAuto | Benchmark::LinearNonauto => 0.0625,
            Benchmark::NonlinearAuto => 0.1,
        }
    }

    pub fn input_spacing(self) -> Option<f64> {
        match self {
            Benchmark::LinearNonauto => Some(0.1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::LinearAuto => "linear-auto",
            Benchmark::LinearNonauto => "linear-nonauto",
            Benchmark::NonlinearAuto => "nonlinear-auto",
        }
    }
}

impl FromStr for Benchmark {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear-auto" => Ok(Benchmark::LinearAuto),
            "linear-nonauto" => Ok(Benchmark::LinearNonauto),
            "nonlinear-auto" => Ok(Benchmark::NonlinearAuto),
            other => Err(DynamicsError::UnknownBenchmark(other.to_string())),
        }
    }
}

/// States `x_0..x_K` and the inputs `u_0..u_{K-1}` applied between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Point>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Write `step,x1..xn,u1..um`; the last row has empty input cells.
    pub fn write_csv(&self, path: &Path) -> Result<(), DynamicsError> {
        let n = self.states.first().map(Point::dim).unwrap_or(0);
        let m = self.inputs.first().map(Vec::len).unwrap_or(0);
        let mut out = String::from("step");
        for k in 1..=n {
            out.push_str(&format!(",x{k}"));
        }
        for k in 1..=m {
            out.push_str(&format!(",u{k}"));
        }
        out.push('\n');
        for (step, x) in self.states.iter().enumerate() {
            out.push_str(&step.to_string());
            for c in x.iter() {
                out.push_str(&format!(",{c}"));
            }
            match self.inputs.get(step) {
                Some(u) => u.iter().for_each(|c| out.push_str(&format!(",{c}"))),
                None => (0..m).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Roll out `horizon` steps from `x0`.
pub fn simulate(
    oracle: &dyn DynamicsOracle,
    controller: Option<&dyn Controller>,
    x0: &[f64],
    horizon: usize,
) -> Result<Trajectory, DynamicsError> {
    check_len(x0, oracle.state_dim())?;
    let m = oracle.input_dim();
    if m > 0 && controller.is_none() {
        return Err(DynamicsError::ControllerRequired);
    }
    let mut states = vec![Point(x0.to_vec())];
    let mut inputs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = states.last().unwrap();
        let u = match controller {
            Some(c) if m > 0 => c.control(x)?,
            _ => vec![],
        };
        let next = oracle.step(x, &u)?;
        inputs.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, inputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonlinear_reference_values() {
        let f = NonlinearAutonomous;
        let y = f.step(&[1.0, 1.0], &[]).unwrap();
        assert!((y[0] + 0.2).abs() < 1e-15);
        assert!((y[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn linear_input_bounds() {
        let sys = Benchmark::LinearNonauto.oracle();
        let y = sys.step(&[0.0, 0.0], &[1.0]).unwrap();
        assert_eq!(y.0, vec![0.0, 1.0]);
        assert!(matches!(sys.step(&[0.0, 0.0], &[1.5]), Err(DynamicsError::InputOutOfRange { .. })));
    }

    #[test]
    fn simulate_autonomous_linear() {
        let sys = Benchmark::LinearAuto.oracle();
        let tr = simulate(sys.as_ref(), None, &[1.0, 0.0], 3).unwrap();
        assert_eq!(tr.states.len(), 4);
        assert_eq!(tr.states[1].0, vec![0.22, -0.5364]);
    }

    #[test]
    fn controller_required() {
        let sys = Benchmark::LinearNonauto.oracle();
        assert!(matches!(simulate(sys.as_ref(), None, &[0.0, 0.0], 1), Err(DynamicsError::ControllerRequired)));
    }

    #[test]
    fn benchmark_names_round_trip() {
        for b in [Benchmark::LinearAuto, Benchmark::LinearNonauto, Benchmark::NonlinearAuto] {
            assert_eq!(b.name().parse::<Benchmark>().unwrap(), b);
        }
    }
}
