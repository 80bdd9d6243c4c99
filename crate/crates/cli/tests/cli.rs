use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clfkit::clf::{ClfCandidate, ClfForm};
use clfkit::controllers::{ClfControllerParams, Controller};
use clfkit::diffcore::FeatureNet;
use clfkit::linalg::Matrix;
use clfkit::trainer::TrainConfig;
use clfkit_cli::sweep::schedule;
use clfkit_cli::{Checkpoint, RunConfig};

fn clfkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clfkit")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const FAST_PENDULUM: &str = r#"
[system]
name = "pendulum"

[train]
delta_learn = 0.1
delta_verify = 0.02
seed = 10
max_step = 50
"#;

/// `ṡ = ±s` on `[−4, 4]²` with an inert input channel.
fn linear_config(sign: f64) -> String {
    format!(
        r#"
[system]
name = "linear"
a = [[{sign:?}, 0.0], [0.0, {sign:?}]]
b = [[0.0], [0.0]]
region = [[-4.0, 4.0], [-4.0, 4.0]]
u_min = [-1.0]
u_max = [1.0]

[controller]
q1 = 0.5
q2 = 10.0

[train]
delta_learn = 0.1
delta_verify = 0.02

[simulate]
initial_states = [[1.0, -2.0], [3.0, 0.5]]
"#
    )
}

/// `V(s) ≈ ‖s‖²`: identity features plus a negligible log term.
fn quadratic_checkpoint(cfg: &RunConfig) -> Checkpoint {
    let system = cfg.build_system().unwrap();
    let net = FeatureNet::affine(&Matrix::identity(2), &[0.0, 0.0]).unwrap();
    let clf = ClfCandidate::new(net, 1e-12, vec![0.0, 0.0], ClfForm::SumOfSquares).unwrap();
    let ctrl = Controller::Clf(ClfControllerParams::uniform(0.5, 10.0, vec![-1.0], vec![1.0], vec![0.0]).unwrap());
    Checkpoint::new(&system, &clf, &ctrl, &TrainConfig::pendulum(2))
}

#[test]
fn missing_config_names_the_path() {
    let out = clfkit(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/nonexistent/run.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[system]\nname = \"pendulum\"\n\n[train]\nlearning_rate = 0.1\n");
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn key_for_another_system_is_rejected() {
    let err = RunConfig::parse("[system]\nname = \"pendulum\"\ncurvature = 1.0\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("curvature"));
}

#[test]
fn module_invariants_are_checked_at_load() {
    for (text, key) in [
        ("[system]\nname = \"pendulum\"\n[controller]\nq1 = 25.0\n", "q1"),
        ("[system]\nname = \"pendulum\"\n[train]\ndelta_verify = 0.5\n", "delta_verify"),
        ("[system]\nname = \"pendulum\"\n[train]\nh = [[1.0, 1.0], [0.0, 1.0]]\n", "orthogonal"),
        ("[system]\nname = \"pendulum\"\n[train]\nloss_mode = \"fancy\"\n", "loss_mode"),
        ("[system]\nname = \"rocket\"\n", "rocket"),
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}");
        assert!(err.to_string().contains(key), "{key}: {err}");
    }
}

#[test]
fn pretrain_recovers_linear_dynamics() {
    let dir = tempfile::tempdir().unwrap();
    let out = clfkit(&["pretrain", "--config", s(&repo_config("linear_pretrain.toml")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let residual: f64 = text.split("mean residual ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(residual <= 1e-6, "{text}");
    assert!(dir.path().join("dynamics.json").exists());
}

#[test]
fn train_writes_checkpoint_and_history_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", FAST_PENDULUM);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let history = std::fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,L_lya,L_else,L_shape,violations\n"));
    assert!(history.lines().count() >= 2);
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(a.join("checkpoint.json")).unwrap(), std::fs::read(b.join("checkpoint.json")).unwrap());
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", FAST_PENDULUM);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&clfkit(&["train", "--config", s(&cfg), "--out", s(&a)])), 0);
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "11", "--shaping", "off"]);
    assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
    assert_ne!(std::fs::read(a.join("checkpoint.json")).unwrap(), std::fs::read(b.join("checkpoint.json")).unwrap());
}

#[test]
fn zero_steps_exits_three_with_violation_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &FAST_PENDULUM.replace("max_step = 50", "max_step = 0"));
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("violating grid points"), "{}", stderr(&out));
    assert!(dir.path().join("checkpoint.json").exists());
}

#[test]
fn legacy_mode_trains_a_plain_candidate_against_lqr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &FAST_PENDULUM.replace("max_step = 50", "max_step = 5\nr0 = 0.2"));
    let out = clfkit(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--loss-mode", "legacy"]);
    assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
    let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck.clf.form, "plain");
    assert!(matches!(ck.controller, clfkit_cli::checkpoint::ControllerRecord::Lqr { .. }));
}

#[test]
fn quadratic_fixture_verifies_and_has_the_disc_area() {
    let dir = tempfile::tempdir().unwrap();
    let text = linear_config(-1.0);
    let cfg_path = write(dir.path(), "lin.toml", &text);
    let ck_path = dir.path().join("quad.json");
    quadratic_checkpoint(&RunConfig::parse(&text).unwrap()).save(&ck_path).unwrap();

    let out = clfkit(&["verify", "--config", s(&cfg_path), "--checkpoint", s(&ck_path), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = clfkit(&["roa", "--config", s(&cfg_path), "--checkpoint", s(&ck_path), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let roa = std::fs::read_to_string(dir.path().join("roa.csv")).unwrap();
    let row: Vec<&str> = roa.lines().nth(1).unwrap().split(',').collect();
    let area: f64 = row[1].parse().unwrap();
    assert!((area - 16.0 * std::f64::consts::PI).abs() <= 0.005 * 16.0 * std::f64::consts::PI, "{area}");
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("x,y,V,Vdot"));
    assert_eq!(grid.lines().count(), 1 + 401 * 401);
    let contour = std::fs::read_to_string(dir.path().join("contour.csv")).unwrap();
    assert_eq!(contour.lines().next(), Some("x,y"));

    let out = clfkit(&["simulate", "--config", s(&cfg_path), "--checkpoint", s(&ck_path), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let traj = std::fs::read_to_string(dir.path().join("trajectory_1.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,s0,s1,u0,V"));
    let values: Vec<f64> = traj.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn expanding_system_fails_verification_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let text = linear_config(1.0);
    let cfg_path = write(dir.path(), "lin.toml", &text);
    let ck_path = dir.path().join("quad.json");
    quadratic_checkpoint(&RunConfig::parse(&text).unwrap()).save(&ck_path).unwrap();
    let out = clfkit(&["verify", "--config", s(&cfg_path), "--checkpoint", s(&ck_path), "--out", s(dir.path())]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let violations = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert_eq!(violations.lines().next(), Some("s0,s1,vdot"));
}

#[test]
fn corrupted_or_mismatched_checkpoints_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = linear_config(-1.0);
    let cfg_path = write(dir.path(), "lin.toml", &text);
    let ck = quadratic_checkpoint(&RunConfig::parse(&text).unwrap());
    let good = ck.to_text();

    let truncated = write(dir.path(), "trunc.json", &good[..good.len() / 2]);
    let out = clfkit(&["verify", "--config", s(&cfg_path), "--checkpoint", s(&truncated)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let mut bad = ck.clone();
    bad.clf.net.widths[0] = 3;
    let wrong_widths = write(dir.path(), "widths.json", &bad.to_text());
    let out = clfkit(&["roa", "--config", s(&cfg_path), "--checkpoint", s(&wrong_widths)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let other = write(dir.path(), "other.toml", &linear_config(-2.0));
    let ck = write(dir.path(), "good.json", &good);
    let out = clfkit(&["verify", "--config", s(&other), "--checkpoint", s(&ck)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint was built for"), "{}", stderr(&out));
}

#[test]
fn sweep_writes_case_rows_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[experiment]\nmasses = [1.0]\nseeds = [10, 11]\n", FAST_PENDULUM);
    let cfg = write(dir.path(), "sweep.toml", &text);
    let out = clfkit(&["sweep", "--config", s(&cfg), "--out", s(dir.path()), "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut cases = csv::Reader::from_path(dir.path().join("sweep_cases.csv")).unwrap();
    let headers = cases.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = cases.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    assert_eq!(&rows[0][col("seed")], "10");
    assert_eq!(&rows[1][col("mass")], "1");
    let clean = rows.iter().filter(|r| &r[col("exit_code")] == "0").count();

    let mut summary = csv::Reader::from_path(dir.path().join("sweep_summary.csv")).unwrap();
    let agg: Vec<csv::StringRecord> = summary.records().map(|r| r.unwrap()).collect();
    assert_eq!(agg.len(), 1);
    let rate: f64 = agg[0][3].parse().unwrap();
    assert_eq!(rate, clean as f64 / 2.0);
}

#[test]
fn full_matrices_schedule_the_published_case_counts() {
    let ip = schedule(&RunConfig::load(&repo_config("pendulum_sweep.toml")).unwrap()).unwrap();
    assert_eq!(ip.len(), 150);
    let pf = schedule(&RunConfig::load(&repo_config("path_following_sweep.toml")).unwrap()).unwrap();
    assert_eq!(pf.len(), 90);
    let shaping = schedule(&RunConfig::load(&repo_config("shaping_sweep.toml")).unwrap()).unwrap();
    assert_eq!(shaping.len(), 25);
    assert!(shaping.iter().filter(|c| c.eta1 == Some(0.0)).all(|c| c.config.train.shaping == Some(false)));
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(repo_config("")).unwrap() {
        let path = entry.unwrap().path();
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
