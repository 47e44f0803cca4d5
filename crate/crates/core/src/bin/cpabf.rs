use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpabf::bundle::{self, Bundle, BundleError};
use cpabf::conic::ConicError;
use cpabf::dataset::{grid_sample, Dataset, OneStepSample, Transition};
use cpabf::dynamics::{simulate, Benchmark, Controller};
use cpabf::plot::{render_svg, PlotOptions};
use cpabf::synthesis::{self, BMode, OracleSource, RefinementMode, SynthesisConfig, SynthesisError};
use cpabf::verify::{empirical_invariance, CertificateReport};
use cpabf::Point;

const EXIT_USAGE: u8 = 2;
const EXIT_STALL: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_VERIFY: u8 = 5;

#[derive(Parser)]
#[command(name = "cpabf", version, about = "Synthesize and verify CPA barrier functions from sampled transitions")]
struct Cli {
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random sampling and simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Conic solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Synthesis configuration as JSON; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefineArg {
    None,
    Feasibility,
    Boundary,
    Both,
}

impl From<RefineArg> for RefinementMode {
    fn from(r: RefineArg) -> Self {
        match r {
            RefineArg::None => RefinementMode::None,
            RefineArg::Feasibility => RefinementMode::Feasibility,
            RefineArg::Boundary => RefinementMode::Boundary,
            RefineArg::Both => RefinementMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BModeArg {
    Decision,
    Frozen,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one-step transitions of a reference system.
    Sample {
        #[arg(long)]
        system: Benchmark,
        /// State grid spacing (defaults to the system's reference spacing).
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        input_spacing: Option<f64>,
        /// Draw this many uniformly random states instead of a grid.
        #[arg(long)]
        random: Option<usize>,
    },
    /// Run synthesis on a dataset and write a result bundle.
    Synth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        refine: Option<RefineArg>,
        /// System queried for refinement samples.
        #[arg(long)]
        oracle: Option<Benchmark>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        max_iter_phase1: Option<usize>,
        #[arg(long)]
        max_iter_phase2: Option<usize>,
        #[arg(long, value_enum)]
        b_mode: Option<BModeArg>,
    },
    /// Re-check a bundle's certificate.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        /// Override the required decrease margin.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Simulate from inside the certified safe set.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        system: Benchmark,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Also write the trajectory from this initial state, e.g. `0.1,-0.2`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Refine a bundle's mesh and resume synthesis.
    Refine {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        oracle: Benchmark,
        #[arg(long, value_enum, default_value = "boundary")]
        mode: RefineArg,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
    },
    /// Write CSV and SVG views of a bundle.
    Export {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::Synthesis(s) => s.into(),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Conic(ConicError::NumericalBreakdown) | SynthesisError::SolverFailure { .. } => {
                Failure::Numeric(e.to_string())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Usage(e.to_string())
            }
        }
    )*};
}

usage_from!(
    std::io::Error,
    serde_json::Error,
    cpabf::dataset::DatasetError,
    cpabf::dynamics::DynamicsError,
    cpabf::verify::VerifyError,
    cpabf::cpa::CpaError,
    cpabf::geometry::GeometryError
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

fn load_config(cli: &Cli) -> Result<SynthesisConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => SynthesisConfig::default(),
    };
    if let Some(t) = cli.tol {
        config.solver.tolerance = t;
    }
    Ok(config)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_certificate(report: &CertificateReport) {
    for c in &report.conditions {
        println!(
            "  {:<15} {:<4} worst margin {:+.3e} over {} checks, {} offenders",
            c.condition,
            if c.passed { "ok" } else { "FAIL" },
            c.worst_margin,
            c.checked,
            c.offender_count
        );
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Sample { system, spacing, input_spacing, random } => {
            let oracle = system.oracle();
            let sbox = system.state_box();
            let ubox = system.input_box();
            let h_u = input_spacing.or(system.input_spacing());
            let ds = match random {
                None => {
                    let h = spacing.unwrap_or(system.state_spacing());
                    grid_sample(oracle.as_ref(), &sbox, h, ubox.as_ref().zip(h_u))?
                }
                Some(count) => {
                    let inputs = match (&ubox, h_u) {
                        (Some(b), Some(h)) => b.grid(h)?,
                        _ => vec![vec![]],
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
                    let mut samples = Vec::with_capacity(*count);
                    for _ in 0..*count {
                        let x: Vec<f64> =
                            sbox.lower.iter().zip(&sbox.upper).map(|(&l, &h)| rng.gen_range(l..=h)).collect();
                        let transitions = inputs
                            .iter()
                            .map(|u| Ok(Transition { input: u.clone(), successor: oracle.step(&x, u)? }))
                            .collect::<Result<Vec<_>, cpabf::dynamics::DynamicsError>>()?;
                        samples.push(OneStepSample { state: Point(x), transitions });
                    }
                    Dataset::new(samples, sbox, ubox, oracle.lipschitz())?
                }
            };
            let out = out_path(cli, "data.csv");
            ds.save(&out)?;
            println!(
                "wrote {} states x {} inputs to {} (sidecar {})",
                ds.len(),
                ds.transitions_per_state(),
                out.display(),
                Dataset::sidecar_path(&out).display()
            );
            Ok(0)
        }
        Command::Synth { data, refine, oracle, rounds, max_iter_phase1, max_iter_phase2, b_mode } => {
            let mut config = load_config(cli)?;
            if let Some(r) = refine {
                config.refinement = (*r).into();
            }
            if let Some(n) = rounds {
                config.max_refinements = *n;
            }
            if let Some(n) = max_iter_phase1 {
                config.max_iter_feasibility = *n;
            }
            if let Some(n) = max_iter_phase2 {
                config.max_iter_expansion = *n;
            }
            if let Some(b) = b_mode {
                config.b_mode = match b {
                    BModeArg::Decision => BMode::DecisionVariable,
                    BModeArg::Frozen => BMode::Frozen,
                };
            }
            let ds = Dataset::load(data)?;
            let boxed = oracle.map(|b| b.oracle());
            if config.refinement != RefinementMode::None && boxed.is_none() {
                return Err(Failure::Usage("refinement needs --oracle".into()));
            }
            let source = boxed.as_deref().map(|o| OracleSource::matching(o, &ds));
            let result = synthesis::synthesize_with(
                ds,
                &config,
                source.as_ref().map(|s| s as &dyn synthesis::TransitionSource),
            )?;
            let out = out_path(cli, "bundle");
            let summary = bundle::write_result(&result, &out)?;
            report_synthesis(&summary, &result.certificate, &out);
            Ok(exit_for(&summary, &result.certificate))
        }
        Command::Verify { bundle, eta } => {
            let b = Bundle::read(bundle)?;
            let mut config = b.config.clone();
            if let Some(e) = eta {
                config.eta = *e;
            }
            let report = b.verify_with(&config)?;
            println!("certificate {}", if report.passed { "verified" } else { "REJECTED" });
            print_certificate(&report);
            if let Some(out) = &cli.out {
                fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.passed { 0 } else { EXIT_VERIFY })
        }
        Command::Simulate { bundle, system, samples, horizon, x0 } => {
            let b = Bundle::read(bundle)?;
            let oracle = system.oracle();
            let w = b.barrier()?;
            let controller = b.controller()?;
            let ctrl: Option<&dyn Controller> = if oracle.input_dim() > 0 { Some(&controller) } else { None };
            let audit = empirical_invariance(oracle.as_ref(), ctrl, &w, *samples, *horizon, cli.seed)?;
            println!(
                "{} rollouts of {} steps: {} left the safe set; max |u| = {}",
                audit.samples,
                audit.horizon,
                audit.violations.len(),
                audit.max_abs_input
            );
            let out = out_path(cli, "simulation");
            fs::create_dir_all(&out)?;
            fs::write(out.join("audit.json"), serde_json::to_string_pretty(&audit)?)?;
            if let Some(x0) = x0 {
                let traj = simulate(oracle.as_ref(), ctrl, x0, *horizon)?;
                traj.write_csv(&out.join("trajectory.csv"))?;
            }
            Ok(if audit.violations.is_empty() { 0 } else { EXIT_VERIFY })
        }
        Command::Refine { bundle, oracle, mode, rounds } => {
            let b = Bundle::read(bundle)?;
            let mut config = load_config(cli).map(|c| if cli.config.is_some() { c } else { b.config.clone() })?;
            if let Some(t) = cli.tol {
                config.solver.tolerance = t;
            }
            config.refinement = (*mode).into();
            config.max_refinements = *rounds;
            let sys = oracle.oracle();
            let source = OracleSource::matching(sys.as_ref(), &b.dataset);
            let state = b.into_state(&config)?;
            let result = synthesis::resume(state, &config, Some(&source))?;
            let out = out_path(cli, "bundle-refined");
            let summary = bundle::write_result(&result, &out)?;
            report_synthesis(&summary, &result.certificate, &out);
            Ok(exit_for(&summary, &result.certificate))
        }
        Command::Export { bundle, svg } => {
            let b = Bundle::read(bundle)?;
            let out = out_path(cli, "export");
            fs::create_dir_all(&out)?;
            b.triangulation.write_csv(&out)?;
            let w = b.barrier()?;
            bundle::write_cpa(&w, &out)?;
            if *svg {
                let markers = read_inserted(bundle);
                let opts = PlotOptions { markers, ..Default::default() };
                fs::write(out.join("barrier.svg"), render_svg(&w, &opts)?)?;
            }
            println!("exported to {}", out.display());
            Ok(0)
        }
    }
}

fn read_inserted(bundle: &Path) -> Vec<Point> {
    let Ok(text) = fs::read_to_string(bundle.join("inserted_points.csv")) else {
        return vec![];
    };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let coords: Option<Vec<f64>> = l.split(',').skip(5).map(|c| c.parse().ok()).collect();
            coords.filter(|c| !c.is_empty()).map(Point)
        })
        .collect()
}

fn report_synthesis(summary: &bundle::Summary, cert: &CertificateReport, out: &Path) {
    println!(
        "phase 1: {} iterations ({}), phase 2: {} iterations",
        summary.phase1_iterations,
        if summary.phase1_converged { "slack-free" } else { "stalled" },
        summary.phase2_iterations
    );
    if !summary.phase1_converged {
        println!("worst simplices by slack:");
        for (i, s) in &summary.stalled_on {
            println!("  simplex {i}: {s:.3e}");
        }
    }
    if summary.inserted_points > 0 {
        println!("inserted {} points", summary.inserted_points);
    }
    if !summary.rejected_rounds.is_empty() {
        println!("boundary rounds {:?} discarded: they did not certify the previous safe set", summary.rejected_rounds);
    }
    println!("certificate {}, b = {:.6}, safe area = {:.6}", if cert.passed { "verified" } else { "not verified" }, summary.b, summary.safe_area);
    print_certificate(cert);
    if cert.passed && summary.safe_area <= 0.0 {
        println!("warning: the certified safe set is empty");
    }
    println!("bundle written to {}", out.display());
}

fn exit_for(summary: &bundle::Summary, cert: &CertificateReport) -> u8 {
    if cert.passed {
        0
    } else if !summary.phase1_converged {
        EXIT_STALL
    } else {
        EXIT_VERIFY
    }
}
