//! Writes the JSON fixtures used by the command-line tests:
//! `cargo run --example gen_fixtures -- <dir>`.

use std::path::{Path, PathBuf};

use kinsolve::camera::project;
use kinsolve::harness::{generate_pose, jitter, Limits};
use kinsolve::io::{
    p25_to_json, points_to_json, rotations_to_json, twists_to_json, wholebody_target_to_json,
};
use kinsolve::{BuiltinTree, CameraScale, Pose2p5D, TargetPose, Vec3};

fn write(dir: &Path, name: &str, body: String) {
    std::fs::write(dir.join(name), body + "\n").unwrap();
}

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../cli/tests/fixtures"
            ))
        });
    std::fs::create_dir_all(&dir).unwrap();
    let limits = Limits::builtin();

    let (tree, rest) = BuiltinTree::Body24.load();
    let gt = generate_pose(&tree, &rest, &limits, 101);
    write(&dir, "body_rotations.json", rotations_to_json(&gt.rots));
    write(&dir, "body_twists.json", twists_to_json(&gt.twists));
    write(&dir, "body_exact.json", points_to_json(&gt.pose.q));
    write(
        &dir,
        "body_jittered.json",
        points_to_json(&jitter(&gt.pose, 25.0, 102).p),
    );

    let (tree, rest) = BuiltinTree::WholeBody.load();
    let gt = generate_pose(&tree, &rest, &limits, 201);
    write(&dir, "wb_twists.json", twists_to_json(&gt.twists));
    let exact = TargetPose::from(&gt.pose);
    write(
        &dir,
        "wb_exact.json",
        wholebody_target_to_json(&tree, &exact).unwrap(),
    );

    // pull the left hand 15 cm past the reach of the arm
    let (shoulder, elbow, wrist) = (16, 18, 20);
    let t = rest.positions();
    let reach = (t[elbow] - t[shoulder]).norm() + (t[wrist] - t[elbow]).norm();
    let q = &gt.pose.q;
    let dir_arm = (q[wrist] - q[shoulder]).normalize();
    let shift = q[shoulder] + dir_arm * (reach + 0.15) - q[wrist];
    let mut stretched = exact.clone();
    for k in 0..tree.len() {
        if k == wrist || tree.is_ancestor(wrist, k) {
            stretched.p[k] += shift;
        }
    }
    write(
        &dir,
        "wb_stretched.json",
        wholebody_target_to_json(&tree, &stretched).unwrap(),
    );

    let v: serde_json::Value =
        serde_json::from_str(&wholebody_target_to_json(&tree, &exact).unwrap()).unwrap();
    write(
        &dir,
        "wb_markerless.json",
        serde_json::json!({ "joints": v["joints"] }).to_string(),
    );
    write(&dir, "wb_markers.json", v["markers"].to_string());

    // camera: the body pose 3 m in front of the camera, initial scale off by 1.6
    let (tree, _) = BuiltinTree::Body24.load();
    let gt = generate_pose(&tree, &BuiltinTree::Body24.load().1, &limits, 301);
    let root = tree.root();
    let anchor = Vec3::new(0.05, -0.02, 3.0);
    let cam: Vec<Vec3> = gt
        .pose
        .q
        .iter()
        .map(|p| p - gt.pose.q[root] + anchor)
        .collect();
    let uv = project(&cam).unwrap();
    let d = cam.iter().map(|p| p.z - anchor.z).collect();
    let p25 = Pose2p5D::new(uv, d).unwrap();
    write(
        &dir,
        "p25.json",
        p25_to_json(&p25, CameraScale::new(1.6 / 3.0).unwrap()),
    );
    eprintln!("fixtures written to {}", dir.display());
}
