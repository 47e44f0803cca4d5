use cpabf::dataset::{grid_sample, Dataset, LipschitzInfo};
use cpabf::dynamics::Benchmark;
use cpabf::geometry::Triangulation;
use cpabf::synthesis::{
    synthesize, synthesize_with, BMode, IcoState, OracleSource, Phase, RefinementMode, SynthesisConfig, SynthesisResult,
};

fn dataset(bm: Benchmark, h: f64, h_u: f64) -> Dataset {
    let ub = bm.input_box();
    grid_sample(bm.oracle().as_ref(), &bm.state_box(), h, ub.as_ref().map(|b| (b, h_u))).unwrap()
}

/// Plain-arithmetic evaluation of the extended CPA function: brute force over
/// simplices with Cramer's rule, ε outside.
fn extended_value(tri: &Triangulation, values: &[f64], eps: f64, x: &[f64]) -> f64 {
    for s in tri.simplices() {
        let ids = s.vertex_ids();
        let (a, b, c) = (tri.vertex(ids[0]), tri.vertex(ids[1]), tri.vertex(ids[2]));
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        let l0 = 1.0 - l1 - l2;
        if l0 >= -1e-9 && l1 >= -1e-9 && l2 >= -1e-9 {
            return l0 * values[ids[0]] + l1 * values[ids[1]] + l2 * values[ids[2]];
        }
    }
    eps
}

fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Worst `W̄(x⁺_{i,j,ξ_i}) − γ_i W_j + b·err_i + η` over all simplices and
/// vertices, computed without the library's verifier.
fn worst_decrease(r: &SynthesisResult) -> f64 {
    let (tri, ds, w, g, xi) = (r.triangulation(), r.dataset(), r.values(), r.gamma(), r.xi());
    let cfg = &r.config;
    let l = cfg.lipschitz.unwrap_or(ds.lipschitz());
    let mut worst = f64::NEG_INFINITY;
    for i in 0..tri.simplex_count() {
        let ids = tri.simplex(i).vertex_ids();
        let k = xi[i];
        let tr = |v: usize| &ds.samples()[v].transitions[k];
        let (mut dx, mut du, mut dz) = (0.0f64, 0.0f64, 0.0f64);
        for &p in ids {
            for &q in ids {
                let (a, b) = (dist(tri.vertex(p), tri.vertex(q)), dist(&tr(p).input, &tr(q).input));
                dx = dx.max(a);
                du = du.max(b);
                dz = dz.max(a.hypot(b));
            }
        }
        let err = match l {
            LipschitzInfo::Joint { l } => l * dz,
            LipschitzInfo::Split { l_x, l_u } => l_x * dx + l_u * du,
        };
        for &v in ids {
            let next = extended_value(tri, w, cfg.epsilon, &tr(v).successor);
            worst = worst.max(next - g[i] * w[v] + r.b() * err + cfg.eta);
        }
    }
    worst
}

/// Within a phase the logged cost never rises by more than the tolerance.
/// Only meaningful for runs without refinement, where each phase is a single
/// segment.
fn assert_monotone(r: &SynthesisResult) {
    assert!(r.monotonicity_violations.is_empty(), "{:?}", r.monotonicity_violations);
    if !r.inserted.is_empty() {
        return;
    }
    let tol = r.config.monotonicity_tolerance();
    for pair in r.log.windows(2) {
        if pair[0].phase == pair[1].phase {
            assert!(pair[1].cost <= pair[0].cost + tol, "{:?} -> {:?}", pair[0], pair[1]);
        }
    }
}

#[test]
fn coarse_linear_certificate_is_sound() {
    let config = SynthesisConfig { max_iter_expansion: 10, ..Default::default() };
    let r = synthesize(dataset(Benchmark::LinearAuto, 0.125, 0.0), &config).unwrap();
    assert!(r.phase1_converged);
    assert!(r.feasible());
    assert!(r.safe_area().unwrap() > 0.0);
    assert!(worst_decrease(&r) <= 1e-9, "{}", worst_decrease(&r));
    assert!(r.values().iter().all(|&w| w >= -config.rho - 1e-12));
    assert!(r.gamma().iter().all(|&g| g >= 0.0));
    assert_monotone(&r);
}

#[test]
fn input_system_certificate_is_sound() {
    let config = SynthesisConfig { max_iter_expansion: 5, ..Default::default() };
    let r = synthesize(dataset(Benchmark::LinearNonauto, 0.125, 0.25), &config).unwrap();
    assert!(r.feasible());
    assert!(worst_decrease(&r) <= 1e-9);
    assert_monotone(&r);
}

#[test]
fn frozen_gradient_bound_still_verifies_when_feasible() {
    let config = SynthesisConfig { b_mode: BMode::Frozen, max_iter_expansion: 5, ..Default::default() };
    let r = synthesize(dataset(Benchmark::LinearAuto, 0.125, 0.0), &config).unwrap();
    if r.feasible() {
        assert!(worst_decrease(&r) <= 1e-9);
    }
    assert_monotone(&r);
}

#[test]
fn coarse_grid_without_refinement_stalls() {
    let config = SynthesisConfig { max_iter_feasibility: 40, ..Default::default() };
    let r = synthesize(dataset(Benchmark::LinearAuto, 0.25, 0.0), &config).unwrap();
    assert!(!r.phase1_converged);
    assert!(!r.feasible());
    assert!(!r.stalled_on.is_empty());
    assert!(r.stalled_on.windows(2).all(|w| w[0].1 >= w[1].1));
    assert_eq!(r.iterations(Phase::Expansion), 0);
}

#[test]
fn feasibility_refinement_inserts_logged_midpoints() {
    let bm = Benchmark::LinearAuto;
    let data = dataset(bm, 0.25, 0.0);
    let before = data.len();
    let oracle = bm.oracle();
    let source = OracleSource::matching(oracle.as_ref(), &data);
    let config = SynthesisConfig {
        refinement: RefinementMode::Feasibility,
        refine_after: Some(10),
        max_refinements: 60,
        max_iter_expansion: 5,
        ..Default::default()
    };
    let r = synthesize_with(data, &config, Some(&source)).unwrap();
    assert!(!r.inserted.is_empty());
    assert_eq!(r.dataset().len(), before + r.inserted.len());
    for p in &r.inserted {
        let (a, b) = p.edge;
        let tri = r.triangulation();
        let mid = tri.vertex(a).midpoint(tri.vertex(b));
        assert_eq!(tri.vertex(p.vertex), &mid);
        assert_eq!(&p.point, &mid);
        assert_eq!(r.dataset().samples()[p.vertex].state, mid);
    }
    if r.feasible() {
        assert!(worst_decrease(&r) <= 1e-9);
    }
    assert!(r.monotonicity_violations.is_empty());
}

#[test]
fn subproblem_shape() {
    let config = SynthesisConfig::default();
    let state = IcoState::from_dataset(dataset(Benchmark::LinearAuto, 0.25, 0.0), &config).unwrap();
    let (nv, ns) = (state.triangulation().vertex_count(), state.triangulation().simplex_count());
    let sub = state.assemble(&config).unwrap();
    assert_eq!(sub.program.num_vars(), nv + ns + 1 + nv);
    assert_eq!(sub.gradient_cones, ns);
    assert_eq!(sub.decrease_cones, 3 * ns);
    assert_eq!(sub.program.cones.len(), 4 * ns);
    assert!(sub.layout.theta.is_some() && sub.layout.hinge.is_none());
}

#[test]
fn subproblems_are_dumped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthesisConfig {
        max_iter_feasibility: 2,
        max_iter_expansion: 0,
        dump_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    synthesize(dataset(Benchmark::LinearAuto, 0.25, 0.0), &config).unwrap();
    let text = std::fs::read_to_string(dir.path().join("subproblem_0.cone")).unwrap();
    assert!(text.contains("theta[0]"));
}

#[test]
fn config_json_uses_defaults_for_missing_fields() {
    let c: SynthesisConfig = serde_json::from_str(r#"{"epsilon": 0.2, "max_iter_expansion": 7}"#).unwrap();
    assert_eq!(c.epsilon, 0.2);
    assert_eq!(c.max_iter_expansion, 7);
    assert_eq!(c.rho, 1.0);
    assert_eq!(c.w_max(), 10.0);
    assert_eq!(c.monotonicity_tolerance(), 1e-7);
    let back: SynthesisConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}
