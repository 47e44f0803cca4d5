//! Sampled one-step transitions and their CSV + JSON storage.
//!
//! A dataset is a CSV file with header `state_id,x1..xn,u1..um,xp1..xpn`
//! (input columns omitted for autonomous systems) plus a JSON sidecar next to
//! it carrying dimensions, sampling boxes and the Lipschitz information.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, DynamicsOracle};
use crate::geometry::{Point, Triangulation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn schema(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema { line, message: message.into() }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds must have equal length");
        BoxBounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    /// Uniform grid with `round(width / spacing) + 1` points per axis,
    /// ordered with the last axis varying fastest.
    pub fn grid(&self, spacing: f64) -> Result<Vec<Vec<f64>>, DatasetError> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(DatasetError::Sampling(format!("spacing must be positive, got {spacing}")));
        }
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                let width = hi - lo;
                let count = (width / spacing).round() as usize + 1;
                if count == 1 {
                    vec![lo]
                } else {
                    (0..count).map(|k| lo + k as f64 * width / (count - 1) as f64).collect()
                }
            })
            .collect();
        let mut out = vec![vec![]];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &c in axis {
                    let mut p = prefix.clone();
                    p.push(c);
                    next.push(p);
                }
            }
            out = next;
        }
        Ok(out)
    }
}

/// Lipschitz constant(s) of the dynamics on the sampled region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "L_mode", rename_all = "lowercase")]
pub enum LipschitzInfo {
    /// `‖f(z) − f(z')‖ ≤ L ‖z − z'‖` with `z = (x, u)`.
    Joint {
        #[serde(rename = "L")]
        l: f64,
    },
    /// `‖f(x, u) − f(x', u')‖ ≤ L_x ‖x − x'‖ + L_u ‖u − u'‖`.
    Split {
        #[serde(rename = "L_x")]
        l_x: f64,
        #[serde(rename = "L_u")]
        l_u: f64,
    },
}

impl LipschitzInfo {
    /// Interpolation error factor for simplex `i` with per-vertex inputs.
    pub fn error_factor(&self, tri: &Triangulation, i: usize, inputs: &[Vec<f64>]) -> f64 {
        match *self {
            LipschitzInfo::Joint { l } => l * tri.simplex_diameter(i, Some(inputs)),
            LipschitzInfo::Split { l_x, l_u } => {
                let mut du = 0.0f64;
                for r in 0..inputs.len() {
                    for s in (r + 1)..inputs.len() {
                        du = du.max(crate::geometry::squared_distance(&inputs[r], &inputs[s]));
                    }
                }
                l_x * tri.simplex_diameter(i, None) + l_u * du.sqrt()
            }
        }
    }

    /// Constant for the stacked vector `(x, u)` implied by this information.
    /// For the split form this is `√(L_x² + L_u²)` by Cauchy–Schwarz.
    pub fn joint_equivalent(&self) -> f64 {
        match *self {
            LipschitzInfo::Joint { l } => l,
            LipschitzInfo::Split { l_x, l_u } => l_x.hypot(l_u),
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let ok = match *self {
            LipschitzInfo::Joint { l } => l.is_finite() && l >= 0.0,
            LipschitzInfo::Split { l_x, l_u } => l_x.is_finite() && l_u.is_finite() && l_x >= 0.0 && l_u >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DatasetError::Invalid(format!("bad Lipschitz constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub input: Vec<f64>,
    pub successor: Point,
}

/// A state with one successor per sampled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepSample {
    pub state: Point,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    m: usize,
    state_box: BoxBounds,
    input_box: Option<BoxBounds>,
    #[serde(flatten)]
    lipschitz: LipschitzInfo,
}

/// Tolerance for box membership of stored states and inputs.
const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<OneStepSample>,
    state_dim: usize,
    input_dim: usize,
    state_box: BoxBounds,
    input_box: Option<BoxBounds>,
    lipschitz: LipschitzInfo,
}

impl Dataset {
    pub fn new(
        samples: Vec<OneStepSample>,
        state_box: BoxBounds,
        input_box: Option<BoxBounds>,
        lipschitz: LipschitzInfo,
    ) -> Result<Self, DatasetError> {
        let ds = Dataset {
            state_dim: state_box.dim(),
            input_dim: input_box.as_ref().map_or(0, BoxBounds::dim),
            samples,
            state_box,
            input_box,
            lipschitz,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        self.lipschitz.validate()?;
        let m_count = self.transitions_per_state();
        for (k, s) in self.samples.iter().enumerate() {
            self.check_sample(k, s)?;
            if s.transitions.len() != m_count {
                return Err(DatasetError::Invalid(format!(
                    "state {k} has {} transitions, expected {m_count}",
                    s.transitions.len()
                )));
            }
        }
        Ok(())
    }

    fn check_sample(&self, k: usize, s: &OneStepSample) -> Result<(), DatasetError> {
        if s.state.dim() != self.state_dim || !s.state.is_finite() {
            return Err(DatasetError::Invalid(format!("state {k} has wrong dimension or non-finite entries")));
        }
        if !self.state_box.contains(&s.state, BOX_TOL) {
            return Err(DatasetError::Invalid(format!("state {k} at {} lies outside the state box", s.state)));
        }
        if s.transitions.is_empty() {
            return Err(DatasetError::Invalid(format!("state {k} has no transitions")));
        }
        for t in &s.transitions {
            if t.input.len() != self.input_dim || t.successor.dim() != self.state_dim || !t.successor.is_finite() {
                return Err(DatasetError::Invalid(format!("state {k} has a malformed transition")));
            }
            if let Some(ub) = &self.input_box {
                if !ub.contains(&t.input, BOX_TOL) {
                    return Err(DatasetError::Invalid(format!("state {k} uses an input outside the input box")));
                }
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[OneStepSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn is_autonomous(&self) -> bool {
        self.input_dim == 0
    }

    pub fn state_box(&self) -> &BoxBounds {
        &self.state_box
    }

    pub fn input_box(&self) -> Option<&BoxBounds> {
        self.input_box.as_ref()
    }

    pub fn lipschitz(&self) -> LipschitzInfo {
        self.lipschitz
    }

    pub fn set_lipschitz(&mut self, l: LipschitzInfo) {
        self.lipschitz = l;
    }

    /// Number of sampled inputs per state (`M`).
    pub fn transitions_per_state(&self) -> usize {
        self.samples.first().map_or(0, |s| s.transitions.len())
    }

    pub fn states(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.state.clone()).collect()
    }

    /// Append a sample; it must match the dataset's shape.
    pub fn push(&mut self, sample: OneStepSample) -> Result<(), DatasetError> {
        self.check_sample(self.samples.len(), &sample)?;
        if !self.samples.is_empty() && sample.transitions.len() != self.transitions_per_state() {
            return Err(DatasetError::Invalid("new sample has a different number of transitions".into()));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// For each transition, the simplex containing its successor.
    pub fn annotate_containment(&self, tri: &Triangulation) -> Vec<Vec<Option<usize>>> {
        self.samples
            .iter()
            .map(|s| s.transitions.iter().map(|t| tri.locate(&t.successor)).collect())
            .collect()
    }

    /// Largest observed `‖f(z) − f(z')‖ / ‖z − z'‖` over all transition pairs.
    pub fn estimate_lipschitz_lower_bound(&self) -> f64 {
        let pts: Vec<(Vec<f64>, &Point)> = self
            .samples
            .iter()
            .flat_map(|s| {
                s.transitions.iter().map(move |t| {
                    let mut z = s.state.0.clone();
                    z.extend_from_slice(&t.input);
                    (z, &t.successor)
                })
            })
            .collect();
        let mut best = 0.0f64;
        for a in 0..pts.len() {
            for b in (a + 1)..pts.len() {
                let dz = crate::geometry::squared_distance(&pts[a].0, &pts[b].0);
                if dz == 0.0 {
                    continue;
                }
                let df = crate::geometry::squared_distance(pts[a].1, pts[b].1);
                best = best.max((df / dz).sqrt());
            }
        }
        best
    }

    /// Path of the JSON sidecar belonging to a CSV path.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Write the CSV and its sidecar. Floats use the shortest representation
    /// that parses back to the same bits.
    pub fn save(&self, csv_path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(self.header())?;
        for (id, s) in self.samples.iter().enumerate() {
            for t in &s.transitions {
                let mut row = vec![id.to_string()];
                row.extend(s.state.iter().map(|c| c.to_string()));
                row.extend(t.input.iter().map(|c| c.to_string()));
                row.extend(t.successor.iter().map(|c| c.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        let side = Sidecar {
            n: self.state_dim,
            m: self.input_dim,
            state_box: self.state_box.clone(),
            input_box: self.input_box.clone(),
            lipschitz: self.lipschitz,
        };
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        fs::write(Self::sidecar_path(csv_path), text)?;
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["state_id".to_string()];
        h.extend((1..=self.state_dim).map(|k| format!("x{k}")));
        h.extend((1..=self.input_dim).map(|k| format!("u{k}")));
        h.extend((1..=self.state_dim).map(|k| format!("xp{k}")));
        h
    }

    /// Read a CSV written by [`Dataset::save`] together with its sidecar.
    pub fn load(csv_path: &Path) -> Result<Self, DatasetError> {
        let side_path = Self::sidecar_path(csv_path);
        let side_text = fs::read_to_string(&side_path).map_err(|e| DatasetError::Sidecar {
            path: side_path.clone(),
            message: e.to_string(),
        })?;
        let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| DatasetError::Sidecar {
            path: side_path.clone(),
            message: e.to_string(),
        })?;
        if side.state_box.dim() != side.n || side.input_box.as_ref().map_or(0, BoxBounds::dim) != side.m {
            return Err(DatasetError::Sidecar {
                path: side_path,
                message: "box dimensions disagree with n and m".into(),
            });
        }
        let (n, m) = (side.n, side.m);
        let width = 1 + n + m + n;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(csv_path)?;
        let mut records = reader.records();
        let header = records.next().ok_or_else(|| schema(1, "missing header"))??;
        let expected = Dataset {
            samples: vec![],
            state_dim: n,
            input_dim: m,
            state_box: side.state_box.clone(),
            input_box: side.input_box.clone(),
            lipschitz: side.lipschitz,
        }
        .header();
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != expected {
            return Err(schema(1, format!("expected header {}, got {}", expected.join(","), got.join(","))));
        }
        let mut order: Vec<String> = Vec::new();
        let mut by_id: HashMap<String, OneStepSample> = HashMap::new();
        for (k, rec) in records.enumerate() {
            let line = k + 2;
            let rec = rec?;
            if rec.len() != width {
                return Err(schema(line, format!("expected {width} columns, got {}", rec.len())));
            }
            let nums = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| schema(line, format!("non-numeric value `{c}`")))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let id = rec[0].trim().to_string();
            let state = Point(nums[..n].to_vec());
            let transition = Transition {
                input: nums[n..n + m].to_vec(),
                successor: Point(nums[n + m..].to_vec()),
            };
            match by_id.get_mut(&id) {
                Some(s) => {
                    if s.state != state {
                        return Err(schema(line, format!("state_id {id} repeats with different coordinates")));
                    }
                    s.transitions.push(transition);
                }
                None => {
                    order.push(id.clone());
                    by_id.insert(id, OneStepSample { state, transitions: vec![transition] });
                }
            }
        }
        let samples: Vec<OneStepSample> = order.iter().map(|id| by_id.remove(id).unwrap()).collect();
        if let Some(first) = samples.first() {
            let mc = first.transitions.len();
            if let Some((k, s)) = samples.iter().enumerate().find(|(_, s)| s.transitions.len() != mc) {
                return Err(schema(
                    0,
                    format!("state_id {} has {} transitions, expected {mc}", order[k], s.transitions.len()),
                ));
            }
        }
        Dataset::new(samples, side.state_box, side.input_box, side.lipschitz)
    }
}

/// Sample `oracle` on a uniform state grid, crossed with a uniform input grid
/// for systems with inputs.
pub fn grid_sample(
    oracle: &dyn DynamicsOracle,
    state_box: &BoxBounds,
    state_spacing: f64,
    inputs: Option<(&BoxBounds, f64)>,
) -> Result<Dataset, DatasetError> {
    if state_box.dim() != oracle.state_dim() {
        return Err(DatasetError::Sampling("state box dimension differs from the system".into()));
    }
    let input_grid = match (oracle.input_dim(), inputs) {
        (0, _) => vec![vec![]],
        (m, Some((ub, h))) if ub.dim() == m => ub.grid(h)?,
        _ => return Err(DatasetError::Sampling("system has inputs; an input box and spacing are required".into())),
    };
    let mut samples = Vec::new();
    for x in state_box.grid(state_spacing)? {
        let transitions = input_grid
            .iter()
            .map(|u| {
                Ok(Transition { input: u.clone(), successor: oracle.step(&x, u)? })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        samples.push(OneStepSample { state: Point(x), transitions });
    }
    Dataset::new(
        samples,
        state_box.clone(),
        if oracle.input_dim() == 0 { None } else { inputs.map(|(b, _)| b.clone()) },
        oracle.lipschitz(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Benchmark;

    #[test]
    fn grid_counts_and_order() {
        let b = Benchmark::LinearAuto.state_box();
        let g = b.grid(0.0625).unwrap();
        assert_eq!(g.len(), 441);
        assert_eq!(g[0], vec![-0.25, -1.0]);
        assert_eq!(g[1], vec![-0.25, -0.9375]);
        assert_eq!(g[440], vec![1.0, 0.25]);
    }

    #[test]
    fn nonautonomous_counts() {
        let bm = Benchmark::LinearNonauto;
        let oracle = bm.oracle();
        let ub = bm.input_box().unwrap();
        let ds = grid_sample(oracle.as_ref(), &bm.state_box(), 0.0625, Some((&ub, 0.1))).unwrap();
        assert_eq!(ds.len(), 441);
        assert_eq!(ds.transitions_per_state(), 21);
        assert!(matches!(
            grid_sample(oracle.as_ref(), &bm.state_box(), 0.0625, None),
            Err(DatasetError::Sampling(_))
        ));
    }

    #[test]
    fn lipschitz_sidecar_shape() {
        let j = serde_json::to_value(LipschitzInfo::Joint { l: 0.5 }).unwrap();
        assert_eq!(j["L_mode"], "joint");
        assert_eq!(j["L"], 0.5);
        let s = serde_json::to_value(LipschitzInfo::Split { l_x: 0.5, l_u: 1.0 }).unwrap();
        assert_eq!(s["L_mode"], "split");
    }

    #[test]
    fn split_error_factor() {
        use crate::geometry::Simplex;
        let tri = Triangulation::from_parts(
            vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0]), Point::from([0.0, 1.0])],
            vec![Simplex(vec![0, 1, 2])],
        )
        .unwrap();
        let inputs = vec![vec![0.0], vec![0.5], vec![-0.5]];
        let e = LipschitzInfo::Split { l_x: 2.0, l_u: 3.0 }.error_factor(&tri, 0, &inputs);
        assert!((e - (2.0 * 2f64.sqrt() + 3.0)).abs() < 1e-15);
    }
}
