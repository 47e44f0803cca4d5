//! On-disk result bundles.
//!
//! A bundle directory holds everything needed to re-verify and reuse a
//! synthesized barrier:
//!
//! | file | content |
//! |---|---|
//! | `vertices.csv`, `simplices.csv` | mesh |
//! | `dataset.csv`, `dataset.json` | transitions and sidecar |
//! | `w_values.csv` | `vertex_id,W` |
//! | `gamma.csv` | `simplex_id,gamma` |
//! | `xi.csv` | `simplex_id,xi` (zero-based input index) |
//! | `gradients.csv`, `boundary.csv` | derived CPA data |
//! | `certificate.json` | verifier report, including `b` |
//! | `config.json` | synthesis configuration |
//! | `run_log.jsonl` | one JSON object per ICO iteration |
//! | `inserted_points.csv` | vertices added by refinement |
//! | `summary.json` | headline numbers |

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpa::{CpaError, CpaFunction};
use crate::dataset::{Dataset, DatasetError};
use crate::geometry::{GeometryError, Triangulation};
use crate::synthesis::{IcoState, SynthesisConfig, SynthesisError, SynthesisResult};
use crate::verify::{check_certificate, extract_controller, CertificateReport, SafeController, VerifyError};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_err(file: &str, message: impl ToString) -> BundleError {
    BundleError::Format { file: file.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub feasible: bool,
    pub phase1_converged: bool,
    pub b: f64,
    pub safe_area: f64,
    pub vertices: usize,
    pub simplices: usize,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub inserted_points: usize,
    pub monotonicity_violations: usize,
    /// Worst simplices by slack sum when phase one stalled.
    pub stalled_on: Vec<(usize, f64)>,
    /// Boundary rounds discarded because they would have shrunk the safe set.
    pub rejected_rounds: Vec<usize>,
}

/// Write a synthesis result to `dir`, creating it if needed.
pub fn write_result(result: &SynthesisResult, dir: &Path) -> Result<Summary, BundleError> {
    fs::create_dir_all(dir)?;
    let tri = result.triangulation();
    tri.write_csv(dir)?;
    result.dataset().save(&dir.join("dataset.csv"))?;
    let w = result.barrier();
    write_cpa(&w, dir)?;
    write_column(&dir.join("gamma.csv"), "simplex_id,gamma", result.gamma())?;
    let xi: Vec<String> = result.xi().iter().map(|k| k.to_string()).collect();
    write_column(&dir.join("xi.csv"), "simplex_id,xi", &xi)?;
    write_json(&dir.join("certificate.json"), &result.certificate)?;
    write_json(&dir.join("config.json"), &result.config)?;
    let mut log = String::new();
    for r in &result.log {
        log.push_str(&serde_json::to_string(r).expect("log record serializes"));
        log.push('\n');
    }
    fs::write(dir.join("run_log.jsonl"), log)?;
    let mut pts = String::from("round,kind,vertex,edge_a,edge_b");
    for k in 1..=tri.dim() {
        pts.push_str(&format!(",x{k}"));
    }
    pts.push('\n');
    for p in &result.inserted {
        let kind = serde_json::to_value(p.kind).expect("kind serializes");
        pts.push_str(&format!(
            "{},{},{},{},{}",
            p.round,
            kind.as_str().unwrap_or_default(),
            p.vertex,
            p.edge.0,
            p.edge.1
        ));
        for c in p.point.iter() {
            pts.push_str(&format!(",{c}"));
        }
        pts.push('\n');
    }
    fs::write(dir.join("inserted_points.csv"), pts)?;
    let summary = Summary {
        feasible: result.feasible(),
        phase1_converged: result.phase1_converged,
        b: result.b(),
        safe_area: w.sublevel_region_area()?,
        vertices: tri.vertex_count(),
        simplices: tri.simplex_count(),
        phase1_iterations: result.iterations(crate::synthesis::Phase::Feasibility),
        phase2_iterations: result.iterations(crate::synthesis::Phase::Expansion),
        inserted_points: result.inserted.len(),
        monotonicity_violations: result.monotonicity_violations.len(),
        stalled_on: result.stalled_on.clone(),
        rejected_rounds: result.rejected_rounds.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Write `w_values.csv`, `gradients.csv` and `boundary.csv` for a CPA function.
pub fn write_cpa(w: &CpaFunction, dir: &Path) -> Result<(), BundleError> {
    w.write_values_csv(&dir.join("w_values.csv"))?;
    w.write_gradients_csv(&dir.join("gradients.csv"))?;
    if w.triangulation().dim() == 2 {
        w.write_boundary_csv(&dir.join("boundary.csv"))?;
    }
    Ok(())
}

fn write_column<T: ToString>(path: &Path, header: &str, values: &[T]) -> Result<(), BundleError> {
    let mut out = format!("{header}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", v.to_string()));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("value serializes"))?;
    Ok(())
}

fn read_column<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>, BundleError>
where
    T::Err: std::fmt::Display,
{
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("?").to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let id: usize = cells
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| format_err(&name, format!("line {}: bad id", k + 1)))?;
        if id != out.len() {
            return Err(format_err(&name, format!("line {}: ids must be consecutive from 0", k + 1)));
        }
        let cell = cells.next().ok_or_else(|| format_err(&name, format!("line {}: missing value", k + 1)))?;
        out.push(cell.trim().parse::<T>().map_err(|e| format_err(&name, format!("line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("?").to_string();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(&name, e))
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub triangulation: Triangulation,
    pub dataset: Dataset,
    pub values: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<usize>,
    pub b: f64,
    pub config: SynthesisConfig,
}

impl Bundle {
    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let triangulation = Triangulation::read_csv(dir)?;
        let dataset = Dataset::load(&dir.join("dataset.csv"))?;
        let values = read_column(&dir.join("w_values.csv"))?;
        let gamma = read_column(&dir.join("gamma.csv"))?;
        let xi = read_column(&dir.join("xi.csv"))?;
        let cert: CertificateReport = read_json(&dir.join("certificate.json"))?;
        let config: SynthesisConfig = read_json(&dir.join("config.json"))?;
        Ok(Bundle { triangulation, dataset, values, gamma, xi, b: cert.b, config })
    }

    pub fn barrier(&self) -> Result<CpaFunction<'_>, BundleError> {
        Ok(CpaFunction::new(&self.triangulation, self.values.clone(), self.config.epsilon)?)
    }

    /// Re-run the certificate check with the bundle's own configuration.
    pub fn verify(&self) -> Result<CertificateReport, BundleError> {
        self.verify_with(&self.config)
    }

    pub fn verify_with(&self, config: &SynthesisConfig) -> Result<CertificateReport, BundleError> {
        let lipschitz = config.lipschitz.unwrap_or(self.dataset.lipschitz());
        Ok(check_certificate(
            &self.triangulation,
            &self.dataset,
            &self.values,
            &self.gamma,
            self.b,
            &config.verify_params(lipschitz),
        )?)
    }

    pub fn controller(&self) -> Result<SafeController, BundleError> {
        Ok(extract_controller(&self.triangulation, &self.dataset, &self.xi)?)
    }

    /// Synthesis state positioned at the stored iterate.
    pub fn into_state(self, config: &SynthesisConfig) -> Result<IcoState, BundleError> {
        Ok(IcoState::restore(self.dataset, self.triangulation, self.values, self.gamma, self.xi, self.b, config)?)
    }
}
