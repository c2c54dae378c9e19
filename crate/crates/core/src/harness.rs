//! Synthetic ground truth, noise injection, brute-force oracles and the
//! benchmark tables.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, trial, purpose)`, so a trial's inputs do not depend on how trials
//! are scheduled and tables are a pure function of the configuration.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::camera::{ice_with, project, CameraScale, IceUpdate, Pose2p5D, PoseSolver, Vec2};
use crate::error::{Error, Result};
use crate::hybrik::{solve_adaptive, solve_naive, SolveMode, TargetPose, TwistAngles};
use crate::hybrikx::{
    backward_update, marker_joints, solve_wholebody, BackwardUpdateProblem, MarkerPair,
};
use crate::linalg::{any_perpendicular, Vec3};
use crate::skeleton::{fk, BuiltinTree, KinematicTree, Pose, RestPose, RotationSet, SubtreeTag};
use crate::so3::{extract_twist, twist_about, AxisAngle, Rot3, TwistAngle};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-joint twist and swing bounds, radians.
#[derive(Clone, Debug, PartialEq)]
pub struct Limits {
    twist: BTreeMap<String, f64>,
    swing: BTreeMap<String, f64>,
    twist_default: f64,
    swing_default: f64,
}

#[derive(Deserialize)]
struct RawLimits {
    twist_deg: BTreeMap<String, f64>,
    swing_deg: BTreeMap<String, f64>,
}

impl Limits {
    /// The shipped table: 30° of twist for most joints, wider for the neck,
    /// elbows and wrists.
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/limits.json")).expect("shipped limits are valid")
    }

    /// `{"twist_deg": {...}, "swing_deg": {...}}`, each with a `default` entry.
    pub fn from_json(src: &str) -> Result<Self> {
        let raw: RawLimits = serde_json::from_str(src)?;
        let split =
            |m: BTreeMap<String, f64>, what: &str| -> Result<(BTreeMap<String, f64>, f64)> {
                let mut m: BTreeMap<String, f64> =
                    m.into_iter().map(|(k, v)| (k, v.to_radians())).collect();
                let d = m
                    .remove("default")
                    .ok_or_else(|| Error::schema(format!("/{what}/default"), "missing default"))?;
                Ok((m, d))
            };
        let (twist, twist_default) = split(raw.twist_deg, "twist_deg")?;
        let (swing, swing_default) = split(raw.swing_deg, "swing_deg")?;
        Ok(Limits {
            twist,
            swing,
            twist_default,
            swing_default,
        })
    }

    pub fn twist(&self, joint: &str) -> f64 {
        self.twist.get(joint).copied().unwrap_or(self.twist_default)
    }

    pub fn swing(&self, joint: &str) -> f64 {
        self.swing.get(joint).copied().unwrap_or(self.swing_default)
    }

    pub fn with_twist_overrides(mut self, overrides: &BTreeMap<String, f64>) -> Self {
        for (k, v) in overrides {
            if k == "default" {
                self.twist_default = *v;
            } else {
                self.twist.insert(k.clone(), *v);
            }
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwistMode {
    Gt,
    Zero,
    Random,
}

impl TwistMode {
    pub const ALL: [TwistMode; 3] = [TwistMode::Gt, TwistMode::Zero, TwistMode::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            TwistMode::Gt => "gt",
            TwistMode::Zero => "zero",
            TwistMode::Random => "random",
        }
    }
}

fn default_tree() -> String {
    BuiltinTree::WholeBody.id().to_string()
}

fn default_twist_mode() -> TwistMode {
    TwistMode::Gt
}

fn default_camera_steps() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_tree")]
    pub tree: String,
    pub trials: usize,
    pub jitter_mm: Vec<f64>,
    #[serde(default = "default_twist_mode")]
    pub twist_mode: TwistMode,
    /// Per-joint twist bounds in radians, overriding the shipped table.
    #[serde(default)]
    pub twist_limits: BTreeMap<String, f64>,
    #[serde(default = "default_camera_steps")]
    pub camera_steps: usize,
}

impl ScenarioConfig {
    pub fn from_json(src: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration behind the committed golden tables.
    pub fn shipped_default() -> Self {
        Self::from_json(include_str!("../data/bench_default.json"))
            .expect("shipped config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::schema("/trials", "must be positive"));
        }
        if let Some(i) = self
            .jitter_mm
            .iter()
            .position(|j| !(j.is_finite() && *j >= 0.0))
        {
            return Err(Error::schema(
                format!("/jitter_mm/{i}"),
                "must be a non-negative number",
            ));
        }
        if BuiltinTree::from_id(&self.tree).is_none() {
            return Err(Error::schema(
                "/tree",
                format!("unknown tree id {:?}", self.tree),
            ));
        }
        if let Some((k, _)) = self
            .twist_limits
            .iter()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::schema(
                format!("/twist_limits/{k}"),
                "must be a non-negative number",
            ));
        }
        Ok(())
    }

    pub fn load_tree(&self) -> Result<(KinematicTree, RestPose)> {
        BuiltinTree::from_id(&self.tree)
            .map(|b| b.load())
            .ok_or_else(|| Error::schema("/tree", format!("unknown tree id {:?}", self.tree)))
    }

    pub fn limits(&self) -> Limits {
        Limits::builtin().with_twist_overrides(&self.twist_limits)
    }
}

const STREAM_POSE: u64 = 0;
const STREAM_TWIST: u64 = 1;
const STREAM_CAMERA: u64 = 2;
const STREAM_JITTER: u64 = 16;

/// Independent random stream for one purpose of one trial.
pub fn trial_rng(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 8) | purpose);
    rng
}

#[cfg(feature = "parallel")]
fn map_trials<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..n).map(f).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Rotation with a uniformly random axis and an angle uniform in
/// `[0, max_angle)`.
pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rot3 {
    let axis = random_unit(rng);
    let angle = if max_angle > 0.0 {
        rng.gen_range(0.0..max_angle)
    } else {
        0.0
    };
    Rot3::from_axis_angle(&AxisAngle::new(axis, angle).expect("unit axis"))
}

/// How the root rotation of a generated pose is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RootSampling {
    /// Any orientation.
    Free,
    /// Turned to face a camera looking down +z, with bounded yaw and tilt.
    FacingCamera { yaw: f64, tilt: f64 },
}

#[derive(Clone, Debug)]
pub struct GeneratedPose {
    pub rots: RotationSet,
    pub twists: TwistAngles,
    pub pose: Pose,
}

fn symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Random pose within the joint limits.
///
/// Ordinary joints get a swing about a random axis perpendicular to their
/// bone followed by a twist about the bone. Frame joints stay rigid with
/// their parent apart from a twist (leaf frame joints such as the eyes get
/// nothing), the jaw only opens about the axis across the mouth, and the
/// mouth markers ride on the jaw.
pub fn sample_pose(
    tree: &KinematicTree,
    rest: &RestPose,
    limits: &Limits,
    rng: &mut ChaCha8Rng,
    root: RootSampling,
) -> GeneratedPose {
    let markers = marker_joints(tree).ok();
    let jaw = markers.and_then(|(top, _)| tree.parent(top));
    let mut rel = Vec::with_capacity(tree.len());
    rel.push(match root {
        RootSampling::Free => random_rotation(rng, PI),
        RootSampling::FacingCamera { yaw, tilt } => {
            let turn = twist_about(
                &Vec3::y(),
                TwistAngle::from_radians(PI + symmetric(rng, yaw)),
            )
            .expect("unit axis");
            let lean = twist_about(&Vec3::x(), TwistAngle::from_radians(symmetric(rng, tilt)))
                .expect("unit axis");
            lean.compose(&turn)
        }
    });
    for k in 1..tree.len() {
        let bone = rest.bone(tree, k).expect("non-root");
        let name = tree.name(k);
        let j = tree.joint(k);
        let is_marker = markers.is_some_and(|(a, b)| k == a || k == b);
        let r = if is_marker || (j.frame && tree.children(k).is_empty()) {
            Rot3::identity()
        } else if j.frame {
            twist_about(&bone, symmetric(rng, limits.twist(name)).into()).expect("non-zero bone")
        } else if Some(k) == jaw {
            let (top, bottom) = markers.expect("jaw implies markers");
            let t = rest.positions();
            let axis = (t[bottom] - t[top]).cross(&bone);
            let angle = rng.gen_range(0.0..=limits.swing(name));
            twist_about(&axis, angle.into()).expect("mouth opening not along the jaw bone")
        } else {
            let b = bone.normalize();
            let e1 = any_perpendicular(&b);
            let e2 = b.cross(&e1);
            let theta = rng.gen_range(0.0..TAU);
            let axis = e1 * theta.cos() + e2 * theta.sin();
            let swing = twist_about(&axis, rng.gen_range(0.0..=limits.swing(name)).into())
                .expect("unit axis");
            let twist = twist_about(&bone, symmetric(rng, limits.twist(name)).into())
                .expect("non-zero bone");
            swing.compose(&twist)
        };
        rel.push(r);
    }
    let rots = RotationSet { rel };
    let mut twists = TwistAngles::zeros(tree.len());
    for k in 1..tree.len() {
        let bone = rest.bone(tree, k).expect("non-root");
        let (_, phi) = extract_twist(&rots.rel[k], &bone).expect("swing below a half turn");
        twists.set(k, phi);
    }
    let (pose, _) = fk(tree, rest, &rots).expect("sizes match");
    GeneratedPose { rots, twists, pose }
}

/// Seeded random pose with a free root orientation.
pub fn generate_pose(
    tree: &KinematicTree,
    rest: &RestPose,
    limits: &Limits,
    seed: u64,
) -> GeneratedPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pose(tree, rest, limits, &mut rng, RootSampling::Free)
}

/// Adds independent noise, uniform in `±level_mm` millimeters, to every
/// coordinate of every joint (the root included).
pub fn jitter_with(pose: &Pose, level_mm: f64, rng: &mut ChaCha8Rng) -> TargetPose {
    if level_mm == 0.0 {
        return TargetPose::from(pose);
    }
    let l = level_mm / 1000.0;
    let p = pose
        .q
        .iter()
        .map(|q| {
            q + Vec3::new(
                rng.gen_range(-l..=l),
                rng.gen_range(-l..=l),
                rng.gen_range(-l..=l),
            )
        })
        .collect();
    TargetPose { p }
}

pub fn jitter(pose: &Pose, level_mm: f64, seed: u64) -> TargetPose {
    jitter_with(pose, level_mm, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mean joint distance over `joints`, millimeters.
pub fn mpjpe_mm(a: &[Vec3], b: &[Vec3], joints: &[usize]) -> f64 {
    if joints.is_empty() {
        return f64::NAN;
    }
    joints.iter().map(|&k| (a[k] - b[k]).norm()).sum::<f64>() * 1000.0 / joints.len() as f64
}

fn twists_for(mode: TwistMode, gt: &TwistAngles, rng: &mut ChaCha8Rng) -> TwistAngles {
    match mode {
        TwistMode::Gt => gt.clone(),
        TwistMode::Zero => TwistAngles::zeros(gt.len()),
        TwistMode::Random => TwistAngles::new(
            (0..gt.len())
                .map(|_| TwistAngle::from_radians(rng.gen_range(-PI..PI)))
                .collect(),
        ),
    }
}

fn has_wholebody_layout(tree: &KinematicTree) -> bool {
    marker_joints(tree).is_ok() && !tree.conflict_joints().is_empty()
}

/// Solver rows of the robustness table, in output order.
pub fn robustness_modes(tree: &KinematicTree) -> Vec<SolveMode> {
    let mut m = vec![SolveMode::Naive, SolveMode::Adaptive];
    if has_wholebody_layout(tree) {
        m.push(SolveMode::Wholebody);
    }
    m
}

fn solve_with(
    mode: SolveMode,
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
) -> Result<Pose> {
    let report = match mode {
        SolveMode::Naive => solve_naive(tree, rest, target, twists)?,
        SolveMode::Adaptive => solve_adaptive(tree, rest, target, twists)?,
        SolveMode::Wholebody => {
            let markers = MarkerPair::from_target(tree, rest, target)?;
            solve_wholebody(tree, rest, target, twists, &markers)?
        }
    };
    Ok(report.recon)
}

/// Per-trial body and hand errors, indexed `[mode][level][trial]`.
#[derive(Clone, Debug)]
pub struct RobustnessSamples {
    pub modes: Vec<SolveMode>,
    pub levels: Vec<f64>,
    pub body: Vec<Vec<Vec<f64>>>,
    pub hand: Vec<Vec<Vec<f64>>>,
}

pub fn robustness_samples(config: &ScenarioConfig) -> Result<RobustnessSamples> {
    config.validate()?;
    let (tree, rest) = config.load_tree()?;
    let limits = config.limits();
    let modes = robustness_modes(&tree);
    let body_joints: Vec<usize> = (0..tree.len())
        .filter(|&k| tree.tag(k) == SubtreeTag::Body)
        .collect();
    let hand_joints: Vec<usize> = (0..tree.len()).filter(|&k| tree.tag(k).is_hand()).collect();
    let levels = config.jitter_mm.clone();

    // per trial: [level][mode] -> (body, hand)
    let per_trial = map_trials(config.trials, |i| {
        let gt = sample_pose(
            &tree,
            &rest,
            &limits,
            &mut trial_rng(config.seed, i, STREAM_POSE),
            RootSampling::Free,
        );
        let twists = twists_for(
            config.twist_mode,
            &gt.twists,
            &mut trial_rng(config.seed, i, STREAM_TWIST),
        );
        levels
            .iter()
            .enumerate()
            .map(|(li, &level)| {
                let mut rng = trial_rng(config.seed, i, STREAM_JITTER + li as u64);
                let target = jitter_with(&gt.pose, level, &mut rng);
                modes
                    .iter()
                    .map(|&m| {
                        let recon = solve_with(m, &tree, &rest, &target, &twists)?;
                        Ok((
                            mpjpe_mm(&recon.q, &gt.pose.q, &body_joints),
                            mpjpe_mm(&recon.q, &gt.pose.q, &hand_joints),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut body = vec![vec![Vec::with_capacity(config.trials); levels.len()]; modes.len()];
    let mut hand = body.clone();
    for trial in &per_trial {
        for (li, row) in trial.iter().enumerate() {
            for (mi, &(b, h)) in row.iter().enumerate() {
                body[mi][li].push(b);
                hand[mi][li].push(h);
            }
        }
    }
    Ok(RobustnessSamples {
        modes,
        levels,
        body,
        hand,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.6}")
    }
}

fn csv_header(seed: u64, trials: usize) -> String {
    format!("#seed={seed}\n#trials={trials}\n#version={VERSION}\n")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: SolveMode,
    pub jitter_mm: f64,
    pub body_mpjpe_mm: f64,
    /// NaN when the tree has no hands.
    pub hand_mpjpe_mm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = csv_header(self.seed, self.trials);
        s.push_str("mode,jitter_mm,body_mpjpe_mm,hand_mpjpe_mm\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.mode.as_str(),
                r.jitter_mm,
                fmt_num(r.body_mpjpe_mm),
                fmt_num(r.hand_mpjpe_mm)
            );
        }
        s
    }

    pub fn row(&self, mode: SolveMode, jitter_mm: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.jitter_mm == jitter_mm)
    }
}

/// Mean body and hand MPJPE for each solver at each jitter level.
pub fn run_robustness(config: &ScenarioConfig) -> Result<BenchTable> {
    let s = robustness_samples(config)?;
    let mut rows = Vec::new();
    for (mi, &mode) in s.modes.iter().enumerate() {
        for (li, &level) in s.levels.iter().enumerate() {
            rows.push(BenchRow {
                mode,
                jitter_mm: level,
                body_mpjpe_mm: mean(&s.body[mi][li]),
                hand_mpjpe_mm: mean(&s.hand[mi][li]),
            });
        }
    }
    Ok(BenchTable {
        seed: config.seed,
        trials: config.trials,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwistRow {
    pub mode: TwistMode,
    pub joint_mpjpe_mm: f64,
    /// Mean geodesic distance between solved and true relative rotations
    /// over the non-root joints, degrees.
    pub rot_err_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwistTable {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<TwistRow>,
}

impl TwistTable {
    pub fn to_csv(&self) -> String {
        let mut s = csv_header(self.seed, self.trials);
        s.push_str("twist_mode,joint_mpjpe_mm,rot_err_deg\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{}",
                r.mode.as_str(),
                fmt_num(r.joint_mpjpe_mm),
                fmt_num(r.rot_err_deg)
            );
        }
        s
    }

    pub fn row(&self, mode: TwistMode) -> Option<&TwistRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Adaptive solve of exact targets under true, zero and random twists.
pub fn run_twist_ablation(config: &ScenarioConfig) -> Result<TwistTable> {
    config.validate()?;
    let (tree, rest) = config.load_tree()?;
    let limits = config.limits();
    let all: Vec<usize> = (0..tree.len()).collect();
    let per_trial = map_trials(config.trials, |i| {
        let gt = sample_pose(
            &tree,
            &rest,
            &limits,
            &mut trial_rng(config.seed, i, STREAM_POSE),
            RootSampling::Free,
        );
        let target = TargetPose::from(&gt.pose);
        TwistMode::ALL
            .iter()
            .map(|&mode| {
                let tw = twists_for(
                    mode,
                    &gt.twists,
                    &mut trial_rng(config.seed, i, STREAM_TWIST),
                );
                let report = solve_adaptive(&tree, &rest, &target, &tw)?;
                let rot = (1..tree.len())
                    .map(|k| report.rots.rel[k].angle_to(&gt.rots.rel[k]).to_degrees())
                    .sum::<f64>()
                    / (tree.len() - 1).max(1) as f64;
                Ok((mpjpe_mm(&report.recon.q, &gt.pose.q, &all), rot))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = TwistMode::ALL
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let j: Vec<f64> = per_trial.iter().map(|t| t[mi].0).collect();
            let r: Vec<f64> = per_trial.iter().map(|t| t[mi].1).collect();
            TwistRow {
                mode,
                joint_mpjpe_mm: mean(&j),
                rot_err_deg: mean(&r),
            }
        })
        .collect();
    Ok(TwistTable {
        seed: config.seed,
        trials: config.trials,
        rows,
    })
}

/// Noiseless camera scene: a pose facing the camera at a random distance,
/// observed as a 2.5D pose, with a perturbed initial scale.
#[derive(Clone, Debug)]
pub struct CameraScene {
    pub gt: GeneratedPose,
    pub p25: Pose2p5D,
    pub s_true: f64,
    pub s0: f64,
}

pub fn camera_scene(
    tree: &KinematicTree,
    rest: &RestPose,
    limits: &Limits,
    rng: &mut ChaCha8Rng,
) -> Result<CameraScene> {
    let gt = sample_pose(
        tree,
        rest,
        limits,
        rng,
        RootSampling::FacingCamera {
            yaw: 30f64.to_radians(),
            tilt: 10f64.to_radians(),
        },
    );
    let root = tree.root();
    let s_true = rng.gen_range(0.2..0.5);
    let z = 1.0 / s_true;
    let uv0 = Vec2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let anchor = Vec3::new(uv0.x * z, uv0.y * z, z);
    let cam: Vec<Vec3> = gt
        .pose
        .q
        .iter()
        .map(|q| q - gt.pose.q[root] + anchor)
        .collect();
    let uv = project(&cam)?;
    let d = cam.iter().map(|p| p.z - z).collect();
    let s0 = s_true * rng.gen_range(0.5f64.ln()..2f64.ln()).exp();
    Ok(CameraScene {
        p25: Pose2p5D::new(uv, d)?,
        gt,
        s_true,
        s0,
    })
}

/// Mean root-depth error (mm) and reprojection error (image plane at unit
/// focal length, ×1000) after each ICE step, for one update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRow {
    pub update: IceUpdate,
    pub depth_err_mm: Vec<f64>,
    pub reproj_err: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraTable {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<CameraRow>,
}

impl CameraTable {
    pub fn to_csv(&self) -> String {
        let mut s = csv_header(self.seed, self.trials);
        s.push_str("update,metric");
        let steps = self.rows.first().map_or(0, |r| r.depth_err_mm.len());
        for t in 0..steps {
            let _ = write!(s, ",step{t}");
        }
        s.push('\n');
        for row in &self.rows {
            for (name, vals) in [
                ("depth_err_mm", &row.depth_err_mm),
                ("reproj_err", &row.reproj_err),
            ] {
                let _ = write!(s, "{},{name}", row.update.as_str());
                for v in vals {
                    s.push(',');
                    s.push_str(&fmt_num(*v));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn row(&self, update: IceUpdate) -> Option<&CameraRow> {
        self.rows.iter().find(|r| r.update == update)
    }
}

/// Per-scene ICE traces `(s, reprojection)` padded to `steps + 1` entries
/// (a converged run repeats its final value). IK inside the loop is naive.
pub fn camera_traces(
    config: &ScenarioConfig,
    update: IceUpdate,
) -> Result<Vec<(CameraScene, Vec<(f64, f64)>)>> {
    config.validate()?;
    let (tree, rest) = config.load_tree()?;
    let limits = config.limits();
    let steps = config.camera_steps;
    map_trials(config.trials, |i| {
        let scene = camera_scene(
            &tree,
            &rest,
            &limits,
            &mut trial_rng(config.seed, i, STREAM_CAMERA),
        )?;
        let solver = PoseSolver {
            tree: &tree,
            rest: &rest,
            twists: &scene.gt.twists,
            mode: SolveMode::Naive,
        };
        let res = ice_with(
            &scene.p25,
            CameraScale::new(scene.s0)?,
            &solver,
            steps,
            update,
        )?;
        let mut trace: Vec<(f64, f64)> = res.trace.iter().map(|t| (t.s, t.reprojection)).collect();
        while trace.len() < steps + 1 {
            trace.push(*trace.last().expect("non-empty trace"));
        }
        Ok((scene, trace))
    })
}

pub fn run_camera_bench(config: &ScenarioConfig) -> Result<CameraTable> {
    let steps = config.camera_steps;
    let mut rows = Vec::new();
    for update in [IceUpdate::Secant, IceUpdate::FixedPoint] {
        let traces = camera_traces(config, update)?;
        let mut depth = vec![0.0; steps + 1];
        let mut reproj = vec![0.0; steps + 1];
        for (scene, trace) in &traces {
            for (t, (s, e)) in trace.iter().enumerate() {
                depth[t] += (1.0 / s - 1.0 / scene.s_true).abs() * 1000.0;
                reproj[t] += e * 1000.0;
            }
        }
        let n = traces.len() as f64;
        rows.push(CameraRow {
            update,
            depth_err_mm: depth.iter().map(|d| d / n).collect(),
            reproj_err: reproj.iter().map(|e| e / n).collect(),
        });
    }
    Ok(CameraTable {
        seed: config.seed,
        trials: config.trials,
        rows,
    })
}

/// File names and contents of the three benchmark tables.
pub fn run_bench(config: &ScenarioConfig) -> Result<Vec<(&'static str, String)>> {
    Ok(vec![
        ("robustness.csv", run_robustness(config)?.to_csv()),
        ("twist_ablation.csv", run_twist_ablation(config)?.to_csv()),
        ("camera.csv", run_camera_bench(config)?.to_csv()),
    ])
}

/// Closest point to `B` among `samples` evenly spaced points of the circle
/// where the two bone-length spheres meet.
///
/// The circle is found from the angle at `A` given by the law of cosines,
/// independently of the closed form in [`backward_update`].
pub fn brute_force_backward_oracle(prob: &BackwardUpdateProblem, samples: usize) -> Result<Vec3> {
    let ac = prob.c - prob.a;
    let l = ac.norm();
    if l == 0.0 {
        return Err(Error::CoincidentAC);
    }
    let cos_g = (prob.len_pa.powi(2) + l * l - prob.len_k.powi(2)) / (2.0 * prob.len_pa * l);
    if !(-1.0..=1.0).contains(&cos_g) {
        return Err(Error::Infeasible(
            "bone-length spheres do not intersect".into(),
        ));
    }
    let sin_g = (1.0 - cos_g * cos_g).sqrt();
    let u = ac / l;
    let e1 = any_perpendicular(&u);
    let e2 = u.cross(&e1);
    let center = prob.a + u * (prob.len_pa * cos_g);
    let r = prob.len_pa * sin_g;
    let mut best = center + e1 * r;
    let mut best_d = f64::INFINITY;
    for i in 0..samples {
        let th = TAU * i as f64 / samples as f64;
        let x = center + (e1 * th.cos() + e2 * th.sin()) * r;
        let d = (x - prob.b).norm_squared();
        if d < best_d {
            best_d = d;
            best = x;
        }
    }
    Ok(best)
}

/// Fraction of bootstrap resamples whose mean of `diffs` is positive.
pub fn bootstrap_confidence(diffs: &[f64], resamples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut positive = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum();
        if s > 0.0 {
            positive += 1;
        }
    }
    positive as f64 / resamples as f64
}

/// Checks that the closed form and the oracle agree; used by tests.
pub fn oracle_gap(prob: &BackwardUpdateProblem, samples: usize) -> Result<f64> {
    let closed = backward_update(prob)?;
    let brute = brute_force_backward_oracle(prob, samples)?;
    Ok((closed.b_star - prob.b).norm() - (brute - prob.b).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(trials: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed: 5,
            tree: "wholebody".into(),
            trials,
            jitter_mm: vec![0.0, 10.0],
            twist_mode: TwistMode::Gt,
            twist_limits: BTreeMap::new(),
            camera_steps: 3,
        }
    }

    #[test]
    fn generator_is_deterministic_and_within_limits() {
        let (tree, rest) = BuiltinTree::WholeBody.load();
        let limits = Limits::builtin();
        let a = generate_pose(&tree, &rest, &limits, 42);
        let b = generate_pose(&tree, &rest, &limits, 42);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.twists, b.twists);
        for seed in 0..50 {
            let g = generate_pose(&tree, &rest, &limits, seed);
            for k in 1..tree.len() {
                let phi = g.twists.get(k).radians().abs();
                assert!(
                    phi <= limits.twist(tree.name(k)) + 1e-12,
                    "joint {k}: {phi}"
                );
            }
        }
    }

    #[test]
    fn generated_twists_reproduce_rotations() {
        let (tree, rest) = BuiltinTree::WholeBody.load();
        let limits = Limits::builtin();
        for seed in 0..20 {
            let g = generate_pose(&tree, &rest, &limits, seed);
            let r = solve_adaptive(&tree, &rest, &TargetPose::from(&g.pose), &g.twists).unwrap();
            for k in 0..tree.len() {
                assert!(r.rots.rel[k].frobenius_to(&g.rots.rel[k]) < 1e-9);
            }
        }
    }

    #[test]
    fn twist_overrides_apply() {
        let mut o = BTreeMap::new();
        o.insert("neck".to_string(), 0.1);
        let l = Limits::builtin().with_twist_overrides(&o);
        assert_eq!(l.twist("neck"), 0.1);
        assert!((l.twist("left_knee") - 30f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn jitter_bounds() {
        let (_, rest) = BuiltinTree::Body24.load();
        let pose = rest.as_pose();
        assert_eq!(jitter(&pose, 0.0, 1), TargetPose::from(&pose));
        let j = jitter(&pose, 10.0, 1);
        for (a, b) in j.p.iter().zip(&pose.q) {
            assert!((a - b).amax() <= 0.010);
        }
    }

    #[test]
    fn jitter_mean_magnitude_is_half_the_level() {
        let pose = Pose {
            q: vec![Vec3::zeros(); 3334],
        };
        let j = jitter(&pose, 10.0, 3);
        let n = (j.p.len() * 3) as f64;
        let m: f64 =
            j.p.iter()
                .map(|p| p.x.abs() + p.y.abs() + p.z.abs())
                .sum::<f64>()
                / n;
        assert!((m * 1000.0 - 5.0).abs() < 0.25, "{m}");
    }

    #[test]
    fn tables_are_reproducible() {
        let cfg = small_config(6);
        assert_eq!(
            run_robustness(&cfg).unwrap().to_csv(),
            run_robustness(&cfg).unwrap().to_csv()
        );
        assert_eq!(
            run_camera_bench(&cfg).unwrap().to_csv(),
            run_camera_bench(&cfg).unwrap().to_csv()
        );
    }

    #[test]
    fn zero_jitter_rows_are_exact() {
        let t = run_robustness(&small_config(4)).unwrap();
        for r in t.rows.iter().filter(|r| r.jitter_mm == 0.0) {
            assert!(r.body_mpjpe_mm < 1e-6 && r.hand_mpjpe_mm < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn oracle_matches_hand_example_and_feasible_b() {
        let p = BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(0.6, 2.0, 0.0),
            c: Vec3::new(1.2, 0.0, 0.0),
            len_pa: 1.0,
            len_k: 1.0,
        };
        let b = brute_force_backward_oracle(&p, 100_000).unwrap();
        assert!((b - Vec3::new(0.6, 0.8, 0.0)).norm() < TAU * 0.8 / 100_000.0);
        let s2 = 2f64.sqrt();
        let q = BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(1.0, 1.0, 0.0),
            c: Vec3::new(2.0, 0.0, 0.0),
            len_pa: s2,
            len_k: s2,
        };
        let b = brute_force_backward_oracle(&q, 100_000).unwrap();
        assert!((b - q.b).norm() < TAU / 100_000.0);
    }

    #[test]
    fn oracle_rejects_infeasible() {
        let p = BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::y(),
            c: Vec3::new(5.0, 0.0, 0.0),
            len_pa: 1.0,
            len_k: 1.0,
        };
        assert!(matches!(
            brute_force_backward_oracle(&p, 10),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(
            ScenarioConfig::from_json(r#"{"seed": 1, "trials": 0, "jitter_mm": [1]}"#).is_err()
        );
        assert!(
            ScenarioConfig::from_json(r#"{"seed": 1, "trials": 2, "jitter_mm": [-1]}"#).is_err()
        );
        assert!(ScenarioConfig::from_json(
            r#"{"seed": 1, "trials": 2, "jitter_mm": [1], "bogus": 3}"#
        )
        .is_err());
        let c = ScenarioConfig::from_json(r#"{"seed": 1, "trials": 2, "jitter_mm": [1]}"#).unwrap();
        assert_eq!(c.tree, "wholebody");
        assert_eq!(ScenarioConfig::shipped_default().camera_steps, 5);
    }
}
