use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn kinsolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinsolve"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = kinsolve(args);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn points(v: &Value) -> Vec<[f64; 3]> {
    serde_json::from_value(v["joints"].clone()).unwrap()
}

fn read_points(name: &str) -> Vec<[f64; 3]> {
    points(&serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap())
}

fn mpjpe(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
        })
        .sum();
    d / a.len() as f64
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fk_reproduces_the_fixture_pose() {
    let v = ok_json(&[
        "fk",
        "--tree",
        "body24",
        "--rotations",
        path(&fixture("body_rotations.json")),
    ]);
    assert!(mpjpe(&points(&v), &read_points("body_exact.json")) < 1e-12);
}

#[test]
fn exact_target_has_zero_residuals() {
    let v = ok_json(&[
        "ik",
        "--tree",
        "body24",
        "--target",
        path(&fixture("body_exact.json")),
        "--twists",
        path(&fixture("body_twists.json")),
        "--emit",
        "residuals",
    ]);
    for r in v["residuals"].as_array().unwrap() {
        assert!(r["norm"].as_f64().unwrap() < 1e-9, "{r}");
    }
    assert_eq!(v["decomposition"].as_array().unwrap().len(), 24);
}

#[test]
fn adaptive_beats_naive_on_jittered_fixture() {
    let gt = read_points("body_exact.json");
    let run = |mode: &str| {
        let v = ok_json(&[
            "ik",
            "--tree",
            "body24",
            "--target",
            path(&fixture("body_jittered.json")),
            "--twists",
            path(&fixture("body_twists.json")),
            "--mode",
            mode,
        ]);
        mpjpe(&points(&v), &gt)
    };
    let (naive, adaptive) = (run("naive"), run("adaptive"));
    assert!(adaptive < naive, "adaptive {adaptive} naive {naive}");
}

#[test]
fn missing_twist_file_is_an_input_error() {
    let out = kinsolve(&[
        "ik",
        "--tree",
        "body24",
        "--target",
        path(&fixture("body_exact.json")),
        "--twists",
        "/no/such",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--twists"));
}

#[test]
fn twist_file_without_angles_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("tw.json");
    std::fs::write(&bad, "{}").unwrap();
    let out = kinsolve(&[
        "ik",
        "--tree",
        "body24",
        "--target",
        path(&fixture("body_exact.json")),
        "--twists",
        path(&bad),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phi"));
}

#[test]
fn unknown_flag_is_rejected() {
    assert_eq!(
        kinsolve(&["fk", "--tree", "body24", "--frobnicate"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn coincident_joints_are_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("t.json");
    let flat = serde_json::json!({ "joints": vec![[0.0, 0.0, 0.0]; 24] });
    std::fs::write(&target, flat.to_string()).unwrap();
    let out = kinsolve(&[
        "ik",
        "--tree",
        "body24",
        "--target",
        path(&target),
        "--twists",
        path(&fixture("body_twists.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn wholebody(target: &str, extra: &[&str]) -> Output {
    let t = fixture(target);
    let tw = fixture("wb_twists.json");
    let mut args = vec![
        "wholebody",
        "--tree",
        "wholebody",
        "--target",
        path(&t),
        "--twists",
        path(&tw),
    ];
    args.extend_from_slice(extra);
    kinsolve(&args)
}

#[test]
fn exact_wholebody_conflicts_are_feasible() {
    let out = wholebody("wb_exact.json", &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let conflicts = v["conflicts"].as_array().unwrap();
    assert_eq!(conflicts.len(), 3);
    assert!(conflicts.iter().all(|c| c["feasible"] == true));
}

#[test]
fn stretched_arm_is_flagged() {
    let out = wholebody("wb_stretched.json", &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let left = v["conflicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["joint"] == "left_wrist")
        .unwrap()
        .clone();
    assert_eq!(left["feasible"], false);
    // the wrist overshoots the arm's reach by 15 cm; the min-max split halves it
    assert!((left["residual"].as_f64().unwrap() - 0.075).abs() < 1e-9);
}

#[test]
fn markers_are_required() {
    let out = wholebody("wb_markerless.json", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("markers"));
    let m = fixture("wb_markers.json");
    assert!(wholebody("wb_markerless.json", &["--markers", path(&m)])
        .status
        .success());
}

fn trace(args: &[&str]) -> Vec<Vec<f64>> {
    let out = kinsolve(args);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn camera_steps_zero_is_the_plain_lift() {
    let rows = trace(&[
        "camera",
        "--tree",
        "body24",
        "--p25",
        path(&fixture("p25.json")),
        "--steps",
        "0",
    ]);
    assert_eq!(rows.len(), 1);
    assert!((rows[0][1] - 1.6 / 3.0).abs() < 1e-9);
    assert!((rows[0][2] - 1.875).abs() < 1e-9);
}

#[test]
fn camera_recovers_the_depth() {
    for update in ["secant", "fixed-point"] {
        let rows = trace(&[
            "camera",
            "--tree",
            "body24",
            "--p25",
            path(&fixture("p25.json")),
            "--steps",
            "10",
            "--update",
            update,
        ]);
        let last = rows.last().unwrap();
        assert!((last[2] - 3.0).abs() < 1e-3, "{update}: {last:?}");
        assert!(rows.windows(2).all(|w| w[1][3] <= w[0][3] + 1e-12));
    }
}

#[test]
fn decompose_recovers_the_twists() {
    let v = ok_json(&[
        "decompose",
        "--tree",
        "body24",
        "--rotations",
        path(&fixture("body_rotations.json")),
    ]);
    let want: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("body_twists.json")).unwrap())
            .unwrap();
    for (a, b) in v["phi"]
        .as_array()
        .unwrap()
        .iter()
        .zip(want["phi"].as_array().unwrap())
    {
        let d = a.as_f64().unwrap() - b.as_f64().unwrap();
        assert!(d.sin().abs() < 1e-9 && d.cos() > 0.0);
    }
}

fn strip_comments(s: &str) -> String {
    s.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn bench_default_matches_golden_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinsolve(&["bench", "--out", path(dir.path())]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    for name in ["robustness.csv", "twist_ablation.csv", "camera.csv"] {
        let got = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let want = std::fs::read_to_string(golden.join(name)).unwrap();
        assert_eq!(strip_comments(&got), strip_comments(&want), "{name}");
    }
}

#[test]
fn bench_flags_override_config_and_threads_do_not_matter() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_kinsolve"))
            .args([
                "bench",
                "--out",
                path(dir.path()),
                "--seed",
                "3",
                "--trials",
                "12",
                "--jitter-mm",
                "5,15",
            ])
            .env("KINSOLVE_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(dir.path().join("robustness.csv")).unwrap()
    };
    let one = run("1");
    assert!(one.contains("#seed=3") && one.contains("#trials=12") && one.contains("adaptive,15,"));
    assert_eq!(one, run("4"));
}

#[test]
fn bench_into_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let out = kinsolve(&["bench", "--out", path(&file.join("sub")), "--trials", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}
