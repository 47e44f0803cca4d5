//! Data-driven barrier functions for discrete-time systems.
//!
//! From one-step transition samples `(x, u, x⁺)` and a Lipschitz bound on the
//! dynamics, this crate synthesizes a continuous piecewise-affine (CPA)
//! barrier function `W` on a triangulation of the sampled states, together
//! with a per-simplex classifier `γ`. The zero sublevel set of `W` is then a
//! certified (control) invariant set, and every certificate is re-checked by
//! an independent verifier.
//!
//! Modules, bottom up:
//!
//! - [`geometry`]: Delaunay triangulation, point location, longest-edge bisection
//! - [`cpa`]: CPA interpolation, gradients, zero level set, safe-set area
//! - [`dataset`]: sampled transitions, grid sampling, CSV + JSON storage
//! - [`dynamics`]: oracles for the reference systems and closed-loop simulation
//! - [`conic`]: conic programs and the matrix-inequality to rotated-cone reduction
//! - [`synthesis`]: the iterative convex overbounding loop and mesh refinement
//! - [`verify`]: certificate checking, controller extraction, simulation audits
//! - [`bundle`], [`plot`]: result files and SVG output

pub mod bundle;
pub mod conic;
pub mod cpa;
pub mod dataset;
pub mod dynamics;
pub mod geometry;
pub mod plot;
pub mod synthesis;
pub mod verify;

pub use cpa::CpaFunction;
pub use dataset::{Dataset, LipschitzInfo};
pub use dynamics::{Benchmark, DynamicsOracle};
pub use geometry::{delaunay_triangulate, Point, Triangulation};
pub use synthesis::{synthesize, synthesize_with, SynthesisConfig, SynthesisResult};
pub use verify::check_certificate;
