//! Browser bindings for the demo page in `www/`. Every entry point returns
//! a JSON string; the plain functions behind them are usable natively.

use kinsolve::camera::project;
use kinsolve::harness::{generate_pose, jitter, Limits};
use kinsolve::{
    backward_update, ice_with, solve_adaptive, solve_naive, BackwardUpdateProblem, BuiltinTree,
    CameraScale, IceUpdate, Pose2p5D, PoseSolver, SolveMode, Vec3,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn xyz(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn mean_err_mm(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64 * 1000.0
}

/// Random body pose, jittered, solved naively and adaptively.
pub fn solve_value(seed: u64, jitter_mm: f64) -> kinsolve::Result<Value> {
    let (tree, rest) = BuiltinTree::Body24.load();
    let gt = generate_pose(&tree, &rest, &Limits::builtin(), seed);
    let target = jitter(&gt.pose, jitter_mm, seed ^ 0x5eed);
    let naive = solve_naive(&tree, &rest, &target, &gt.twists)?;
    let adaptive = solve_adaptive(&tree, &rest, &target, &gt.twists)?;
    let pts = |q: &[Vec3]| q.iter().map(xyz).collect::<Vec<_>>();
    Ok(json!({
        "parents": (0..tree.len()).map(|k| tree.parent(k)).collect::<Vec<_>>(),
        "truth": pts(&gt.pose.q),
        "target": pts(&target.p),
        "naive": { "joints": pts(&naive.recon.q), "mpjpe_mm": mean_err_mm(&naive.recon.q, &gt.pose.q) },
        "adaptive": { "joints": pts(&adaptive.recon.q), "mpjpe_mm": mean_err_mm(&adaptive.recon.q, &gt.pose.q) },
    }))
}

/// Backward update in the image plane (`z = 0`).
pub fn backward_value(
    a: [f64; 2],
    b: [f64; 2],
    c: [f64; 2],
    len_pa: f64,
    len_k: f64,
) -> kinsolve::Result<Value> {
    let p = |v: [f64; 2]| Vec3::new(v[0], v[1], 0.0);
    let res = backward_update(&BackwardUpdateProblem {
        a: p(a),
        b: p(b),
        c: p(c),
        len_pa,
        len_k,
    })?;
    Ok(json!({
        "b_star": [res.b_star.x, res.b_star.y],
        "feasible": res.feasible,
        "residual": res.residual,
    }))
}

/// ICE on a synthetic body scene at `depth` metres, starting from
/// `depth / s0_factor`.
pub fn ice_value(
    seed: u64,
    depth: f64,
    s0_factor: f64,
    steps: usize,
    secant: bool,
) -> kinsolve::Result<Value> {
    let (tree, rest) = BuiltinTree::Body24.load();
    let gt = generate_pose(&tree, &rest, &Limits::builtin(), seed);
    let root = tree.root();
    let anchor = Vec3::new(0.0, 0.0, depth);
    let cam: Vec<Vec3> = gt
        .pose
        .q
        .iter()
        .map(|p| p - gt.pose.q[root] + anchor)
        .collect();
    let p25 = Pose2p5D::new(project(&cam)?, cam.iter().map(|p| p.z - depth).collect())?;
    let solver = PoseSolver {
        tree: &tree,
        rest: &rest,
        twists: &gt.twists,
        mode: SolveMode::Naive,
    };
    let update = if secant {
        IceUpdate::Secant
    } else {
        IceUpdate::FixedPoint
    };
    let res = ice_with(
        &p25,
        CameraScale::new(s0_factor / depth)?,
        &solver,
        steps,
        update,
    )?;
    Ok(json!({
        "depth_true": depth,
        "trace": res.trace.iter().map(|t| json!({
            "step": t.step,
            "depth": 1.0 / t.s,
            "reprojection": t.reprojection,
        })).collect::<Vec<_>>(),
    }))
}

fn to_js(r: kinsolve::Result<Value>) -> Result<String, JsValue> {
    r.map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn solve_demo(seed: u32, jitter_mm: f64) -> Result<String, JsValue> {
    to_js(solve_value(seed as u64, jitter_mm))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn backward_demo(
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    cx: f64,
    cy: f64,
    len_pa: f64,
    len_k: f64,
) -> Result<String, JsValue> {
    to_js(backward_value([ax, ay], [bx, by], [cx, cy], len_pa, len_k))
}

#[wasm_bindgen]
pub fn ice_demo(
    seed: u32,
    depth: f64,
    s0_factor: f64,
    steps: u32,
    secant: bool,
) -> Result<String, JsValue> {
    to_js(ice_value(
        seed as u64,
        depth,
        s0_factor,
        steps as usize,
        secant,
    ))
}
