use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpabf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpabf")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn full_pipeline_with_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.json"), r#"{"max_iter_expansion": 3}"#).unwrap();

    let out = cpabf(d, &["sample", "--system", "linear-nonauto", "--spacing", "0.125", "--input-spacing", "0.25", "--out", "data.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("data.json").exists());

    let out = cpabf(d, &["synth", "--data", "data.csv", "--config", "cfg.json", "--out", "bundle"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    for f in [
        "vertices.csv", "simplices.csv", "w_values.csv", "gamma.csv", "xi.csv", "gradients.csv", "boundary.csv",
        "certificate.json", "config.json", "run_log.jsonl", "inserted_points.csv", "summary.json", "dataset.csv",
    ] {
        assert!(d.join("bundle").join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("bundle/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["feasible"], true);
    assert_eq!(summary["phase2_iterations"], 3);

    let out = cpabf(d, &["verify", "--bundle", "bundle", "--out", "report.json"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("verified"));
    assert!(d.join("report.json").exists());

    let out = cpabf(d, &["simulate", "--bundle", "bundle", "--system", "linear-nonauto", "--samples", "100", "--x0", "0.1,-0.2", "--out", "sim"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(d.join("sim/audit.json").exists());
    assert!(fs::read_to_string(d.join("sim/trajectory.csv")).unwrap().starts_with("step,x1,x2,u1"));

    let out = cpabf(d, &["export", "--bundle", "bundle", "--svg", "--out", "view"]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(d.join("view/barrier.svg")).unwrap().starts_with("<svg"));

    let out = cpabf(d, &["refine", "--bundle", "bundle", "--oracle", "linear-nonauto", "--mode", "boundary", "--config", "cfg.json", "--out", "finer"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let inserted = fs::read_to_string(d.join("finer/inserted_points.csv")).unwrap();
    assert!(inserted.lines().count() > 1);

    // sink every value: exit vertices drop below epsilon
    let w = fs::read_to_string(d.join("bundle/w_values.csv")).unwrap();
    let lifted: Vec<String> = w
        .lines()
        .enumerate()
        .map(|(k, l)| {
            if k == 0 {
                return l.to_string();
            }
            let (id, v) = l.split_once(',').unwrap();
            format!("{id},{}", v.parse::<f64>().unwrap() - 5.0)
        })
        .collect();
    fs::write(d.join("bundle/w_values.csv"), lifted.join("\n")).unwrap();
    let out = cpabf(d, &["verify", "--bundle", "bundle"]);
    assert_eq!(code(&out), 5, "{}", stdout(&out));
    assert!(stdout(&out).contains("exit-value      FAIL"));
}

#[test]
fn stalled_feasibility_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&cpabf(d, &["sample", "--system", "linear-auto", "--spacing", "0.25", "--out", "la.csv"])), 0);
    let out = cpabf(d, &["synth", "--data", "la.csv", "--max-iter-phase1", "5", "--out", "b"]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert!(stdout(&out).contains("worst simplices"));
}

#[test]
fn random_sampling_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for name in ["a.csv", "b.csv"] {
        let out = cpabf(d, &["sample", "--system", "nonlinear-auto", "--random", "50", "--seed", "4", "--out", name]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
    assert_eq!(fs::read_to_string(d.join("a.csv")).unwrap().lines().count(), 51);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&cpabf(d, &["frobnicate"])), 2);
    assert_eq!(code(&cpabf(d, &["sample", "--system", "pendulum"])), 2);
    assert_eq!(code(&cpabf(d, &["verify", "--bundle", "nowhere"])), 2);
    assert_eq!(code(&cpabf(d, &["sample", "--system", "linear-auto", "--spacing", "0.5", "--out", "x.csv"])), 0);
    let out = cpabf(d, &["synth", "--data", "x.csv", "--refine", "feasibility"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--oracle"));
    fs::write(d.join("bad.json"), "{not json").unwrap();
    assert_eq!(code(&cpabf(d, &["synth", "--data", "x.csv", "--config", "bad.json"])), 2);
}
