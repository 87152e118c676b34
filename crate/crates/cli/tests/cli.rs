use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use klioc::estimation::Dataset;
use klioc::format::{read_cost, read_policy, write_cost, write_gaussian_model, write_policy, write_transition};
use klioc::ioc::{cost_discrepancy, FeatureBasis};
use klioc::lqg::{lqg_recursion, scalar_model};
use klioc::sim::{pendulum_cost_table, pendulum_features, PendulumParams};
use klioc::{CostTable, ExtendedReal, GridSpace, PolicyKernel, TransitionKernel};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn klioc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klioc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = klioc(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn extended(v: &Value) -> ExtendedReal {
    serde_json::from_value(v.clone()).unwrap()
}

fn toy_grids() -> (Arc<GridSpace>, Arc<GridSpace>) {
    (Arc::new(GridSpace::indexed(3).unwrap()), Arc::new(GridSpace::indexed(2).unwrap()))
}

#[test]
fn foc_with_zero_cost_and_matching_dynamics_returns_the_reference_policy() {
    let dir = tempfile::tempdir().unwrap();
    let (s, a) = toy_grids();
    let rows = vec![vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4, 0.0, 1.0, 0.0, 0.6, 0.0, 0.4, 0.2, 0.2, 0.6]];
    let kernel = TransitionKernel::from_dense(s.clone(), a.clone(), &rows).unwrap();
    let q = PolicyKernel::new(s, a, vec![vec![0.7, 0.3, 0.5, 0.5, 0.1, 0.9]]).unwrap();
    fs::write(dir.path().join("p.txt"), write_transition(&kernel)).unwrap();
    fs::write(dir.path().join("qu.txt"), write_policy(&q)).unwrap();
    fs::write(
        dir.path().join("toy.toml"),
        "horizon = 3\ntarget = \"p.txt\"\nreference_dynamics = \"p.txt\"\nreference_policy = \"qu.txt\"\ncost = { builtin = \"zero\" }\n",
    )
    .unwrap();
    ok(dir.path(), &["foc", "toy.toml", "--out-dir", "out"]);
    let policy = read_policy(&fs::read_to_string(dir.path().join("out/policy.txt")).unwrap()).unwrap();
    for k in 1..=3 {
        for (got, want) in policy.at(k).iter().zip(q.at(1)) {
            assert!((got - want).abs() < 1e-14, "step {k}: {got} vs {want}");
        }
    }
    let report = json(dir.path().join("out/report.json"));
    let cost = extended(&report["optimal_cost"]).finite().unwrap();
    assert!(cost.abs() < 1e-12, "{cost}");
    let manifest = json(dir.path().join("out/manifest.json"));
    let names: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(names, ["policy.txt", "cost.txt", "report.json"]);
    assert!(dir.path().join("out/timing.json").exists());
}

const FOC_BUNDLE: &str = r#"
target = "kt/kernel.txt"
reference_dynamics = "kr/kernel.txt"
reference_policy = { builtin = "swing_up" }
cost = { builtin = "pendulum" }
"#;

const FIT_BUNDLE: &str = r#"
target = "kt/kernel.txt"
reference_dynamics = "kr/kernel.txt"
reference_policy = { builtin = "swing_up" }
observations = "rollouts/rollouts.txt"
wrap_coordinate = 0

[[feature]]
name = "abs_theta"
family = "absolute_deviation"
coord = 0
target = 0.0

[[feature]]
name = "abs_omega"
family = "absolute_deviation"
coord = 1
target = 0.0
"#;

const STAGES: [&str; 8] = ["db_t", "db_r", "kt", "kr", "foc", "rollouts", "fit", "eval"];

/// Runs the pendulum pipeline in `root` with relative paths throughout.
fn pendulum_pipeline(root: &Path) -> i32 {
    fs::write(root.join("foc.toml"), FOC_BUNDLE).unwrap();
    fs::write(root.join("fit.toml"), FIT_BUNDLE).unwrap();
    ok(root, &["simulate", "--system", "pendulum", "--episodes", "400", "--steps", "60", "--seed", "3", "--out-dir", "db_t"]);
    ok(root, &["simulate", "--system", "pendulum-reference", "--episodes", "400", "--steps", "60", "--seed", "4", "--out-dir", "db_r"]);
    ok(root, &["estimate", "--database", "db_t/database.txt", "--system", "pendulum", "--out-dir", "kt"]);
    ok(root, &["estimate", "--database", "db_r/database.txt", "--system", "pendulum", "--smoothing", "0.01", "--out-dir", "kr"]);
    ok(root, &["foc", "foc.toml", "--out-dir", "foc"]);
    ok(
        root,
        &["simulate", "--system", "pendulum", "--policy", "foc/policy.txt", "--runs", "4", "--steps", "80", "--seed", "9", "--out-dir", "rollouts"],
    );
    let fit = klioc(root, &["ioc-fit", "fit.toml", "--out-dir", "fit"]).status.code().unwrap();
    ok(
        root,
        &[
            "eval",
            "--true-cost",
            "foc/cost.txt",
            "--estimated-cost",
            "fit/cost.txt",
            "--policy",
            "foc/policy.txt",
            "--system",
            "pendulum",
            "--runs",
            "3",
            "--seed",
            "5",
            "--out-dir",
            "eval",
        ],
    );
    fit
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    for stage in STAGES {
        let mut names: Vec<PathBuf> = fs::read_dir(root.join(stage)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            if p.file_name().unwrap() != "timing.json" {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files
}

#[test]
fn pendulum_pipeline_is_reproducible_and_eval_matches_the_library() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fit_a = pendulum_pipeline(a.path());
    let fit_b = pendulum_pipeline(b.path());
    assert!(fit_a == 0 || fit_a == 4, "ioc-fit exit {fit_a}");
    assert_eq!(fit_a, fit_b);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), tb.len());
    for ((pa, ca), (pb, cb)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs between runs", pa.display());
    }
    for stage in STAGES {
        let m = json(a.path().join(stage).join("manifest.json"));
        for o in m["outputs"].as_array().unwrap() {
            let bytes = fs::read(a.path().join(stage).join(o["path"].as_str().unwrap())).unwrap();
            let digest = hex::encode(Sha256::digest(&bytes));
            assert_eq!(o["sha256"].as_str().unwrap(), digest);
        }
    }

    ok(a.path(), &["--sequential", "foc", "foc.toml", "--out-dir", "foc_seq"]);
    for name in ["policy.txt", "report.json", "manifest.json"] {
        assert_eq!(fs::read(a.path().join("foc").join(name)).unwrap(), fs::read(a.path().join("foc_seq").join(name)).unwrap(), "{name}");
    }

    let truth = read_cost(&fs::read_to_string(a.path().join("foc/cost.txt")).unwrap()).unwrap();
    let est = read_cost(&fs::read_to_string(a.path().join("fit/cost.txt")).unwrap()).unwrap();
    let direct = cost_discrepancy(truth.at(1), est.at(1)).unwrap();
    let eval = json(a.path().join("eval/eval.json"));
    assert_eq!(extended(&eval["discrepancy"]), direct);
    assert_eq!(eval["closed_loop"]["runs"], 3);
}

#[test]
fn eval_of_a_finite_discrepancy_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let states = PendulumParams::target().state_grid().unwrap();
    let truth = pendulum_cost_table(states.clone()).unwrap();
    let table = FeatureBasis::new(pendulum_features(), 2).unwrap().on_grid(&states).unwrap();
    let w = [-6.0, -4.5];
    let est =
        CostTable::stationary(states.clone(), (0..states.len()).map(|x| -w.iter().zip(table.cell(x)).map(|(a, h)| a * h).sum::<f64>()).collect())
            .unwrap();
    fs::write(dir.path().join("true.txt"), write_cost(&truth)).unwrap();
    fs::write(dir.path().join("est.txt"), write_cost(&est)).unwrap();
    ok(dir.path(), &["eval", "--true-cost", "true.txt", "--estimated-cost", "est.txt", "--out-dir", "out"]);
    let got = extended(&json(dir.path().join("out/eval.json"))["discrepancy"]).finite().expect("finite discrepancy");
    let want = cost_discrepancy(truth.at(1), est.at(1)).unwrap().finite().unwrap();
    assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0), "{got} vs {want}");
    assert!(want > 0.0);
}

#[test]
fn gaussian_closed_form_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = scalar_model(0.8, 1.2, 0.16, 0.5, 2.0, 0.6, 0.7, 0.3, 4);
    fs::write(dir.path().join("model.txt"), write_gaussian_model(&model)).unwrap();
    ok(dir.path(), &["foc", "--gaussian", "model.txt", "--x0", "0.25", "--out-dir", "out"]);
    let out = json(dir.path().join("out/gaussian.json"));
    let state = lqg_recursion(&model).unwrap();
    assert_eq!(out["horizon"], 4);
    for k in 1..=4 {
        let s = state.step(k);
        let got = out["steps"][k - 1]["sigma_star"][0][0].as_f64().unwrap();
        assert!((got - s.sigma_star[(0, 0)]).abs() < 1e-15);
        let gain = out["steps"][k - 1]["gain"][0][0].as_f64().unwrap();
        assert!((gain - s.gain[(0, 0)]).abs() < 1e-15);
    }
    let value = out["at_x0"]["value"].as_f64().unwrap();
    let want = state.value(&nalgebra::DVector::from_element(1, 0.25));
    assert!((value - want).abs() <= 1e-14 * want.abs().max(1.0));
}

#[test]
fn obstacle_field_policy_reaches_the_goal_in_closed_loop() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("robot.toml"), "target = { builtin = \"obstacle_field\" }\ncost = { builtin = \"obstacle_field\" }\n").unwrap();
    ok(dir.path(), &["foc", "robot.toml", "--out-dir", "foc"]);
    let report = json(dir.path().join("foc/report.json"));
    assert!(report["optimal_cost"].is_null());
    assert_eq!(report["notes"].as_array().unwrap().len(), 1);
    ok(
        dir.path(),
        &["simulate", "--system", "robot", "--policy", "foc/policy.txt", "--runs", "1", "--steps", "2500", "--seed", "10", "--out-dir", "sim"],
    );
    let summary = json(dir.path().join("sim/summary.json"));
    assert_eq!(summary["runs"], 4);
    assert_eq!(summary["reached"], 4, "{summary}");
    let rollouts = fs::read_to_string(dir.path().join("sim/rollouts.txt")).unwrap();
    assert_eq!(klioc::estimation::Database::parse(&rollouts).unwrap().datasets.len(), 4);
}

fn error_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr carries the error record");
    serde_json::from_str(line).unwrap()
}

#[test]
fn validation_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = klioc(dir.path(), &["estimate", "--database", "missing.txt", "--system", "pendulum", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "validation");
    assert_eq!(rec["error"]["exit_code"], 2);
    assert_eq!(json(dir.path().join("out/error.json")), rec);

    let out = klioc(dir.path(), &["foc", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "validation");

    fs::write(dir.path().join("bad.toml"), "target = \"p.txt\"\ncost = { builtin = \"zero\" }\nhorizn = 2\n").unwrap();
    let out = klioc(dir.path(), &["foc", "bad.toml", "--out-dir", "out2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsupported_transitions_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let s = Arc::new(GridSpace::indexed(2).unwrap());
    let a = Arc::new(GridSpace::indexed(1).unwrap());
    let target = TransitionKernel::from_dense(s.clone(), a.clone(), &[vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
    let reference = TransitionKernel::from_dense(s, a, &[vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
    fs::write(dir.path().join("p.txt"), write_transition(&target)).unwrap();
    fs::write(dir.path().join("q.txt"), write_transition(&reference)).unwrap();
    fs::write(dir.path().join("b.toml"), "target = \"p.txt\"\nreference_dynamics = \"q.txt\"\ncost = { builtin = \"zero\" }\n").unwrap();
    let out = klioc(dir.path(), &["foc", "b.toml", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_record(&out)["error"]["kind"], "numerical");
}

#[test]
fn unconverged_fits_write_artifacts_and_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let (s, a) = toy_grids();
    let rows = vec![vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4, 0.0, 1.0, 0.0, 0.6, 0.0, 0.4, 0.2, 0.2, 0.6]];
    fs::write(dir.path().join("p.txt"), write_transition(&TransitionKernel::from_dense(s, a, &rows).unwrap())).unwrap();
    let xs = [0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0].iter().map(|&x| vec![x]).collect();
    let us = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0].iter().map(|&u| vec![u]).collect();
    fs::write(dir.path().join("obs.txt"), Dataset::new(xs, us).unwrap().to_text()).unwrap();
    let bundle = r#"
target = "p.txt"
observations = "obs.txt"
[solver]
max_iter = 1
[[feature]]
name = "to_one"
family = "squared_deviation"
coord = 0
target = 1.0
"#;
    fs::write(dir.path().join("fit.toml"), bundle).unwrap();
    let out = klioc(dir.path(), &["ioc-fit", "fit.toml", "--out-dir", "fit"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_record(&out)["error"]["kind"], "non_convergence");
    let weights = json(dir.path().join("fit/weights.json"));
    assert_eq!(weights["status"], "max_iterations");
    assert_eq!(weights["observations"], 6);
    assert!(dir.path().join("fit/cost.txt").exists());
    assert!(dir.path().join("fit/manifest.json").exists());

    fs::write(dir.path().join("fit.toml"), bundle.replace("max_iter = 1", "max_iter = 200")).unwrap();
    ok(dir.path(), &["ioc-fit", "fit.toml", "--out-dir", "fit2"]);
    assert_eq!(json(dir.path().join("fit2/weights.json"))["status"], "converged");
}
