//! Perspective camera at unit focal length and iterative scale estimation.
//!
//! A 2.5D pose gives normalized image coordinates `(u, v)` and depths
//! relative to the root. A scale `s` places the root at depth `Z = 1/s`,
//! which is all that is missing to lift the pose to 3D:
//!
//! ```text
//! z_k = 1/s + d_k,   x_k = u_k·z_k,   y_k = v_k·z_k
//! ```
//!
//! [`ice`] alternates lifting, inverse kinematics and a least-squares refit
//! of `s` against the observed image coordinates.

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hybrik::{solve_adaptive, solve_naive, SolveMode, SolveReport, TargetPose, TwistAngles};
use crate::hybrikx::{solve_wholebody, MarkerPair};
use crate::linalg::Vec3;
use crate::skeleton::{KinematicTree, RestPose};

pub type Vec2 = Vector2<f64>;

/// Smallest admissible depth in front of the camera, meters.
pub const EPS_DEPTH: f64 = 1e-4;
pub const MAX_ICE_STEPS: usize = 10;
/// Relative scale change below which [`ice`] stops early.
pub const ICE_TOL: f64 = 1e-6;
const NEWTON_STEPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Pose2p5D {
    pub uv: Vec<Vec2>,
    /// Depth relative to the root, meters; `d[0] == 0`.
    pub d: Vec<f64>,
}

impl Pose2p5D {
    pub fn new(uv: Vec<Vec2>, d: Vec<f64>) -> Result<Self> {
        if uv.len() != d.len() {
            return Err(Error::DimensionMismatch {
                what: "relative depths",
                expected: uv.len(),
                got: d.len(),
            });
        }
        if uv.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "2.5D joints",
                expected: 1,
                got: 0,
            });
        }
        if uv.iter().any(|p| !(p.x.is_finite() && p.y.is_finite()))
            || d.iter().any(|z| !z.is_finite())
        {
            return Err(Error::NonFinite("2.5D pose".into()));
        }
        if d[0] != 0.0 {
            return Err(Error::Degenerate(format!(
                "root depth must be 0, got {}",
                d[0]
            )));
        }
        Ok(Pose2p5D { uv, d })
    }

    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }
}

/// Camera scale; the root sits at depth `1/s`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct CameraScale(f64);

impl CameraScale {
    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("camera scale {s}")));
        }
        if s <= 0.0 {
            return Err(Error::Degenerate(format!(
                "camera scale must be positive, got {s}"
            )));
        }
        Ok(CameraScale(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn depth(&self) -> f64 {
        1.0 / self.0
    }
}

pub fn backproject(p25: &Pose2p5D, s: CameraScale) -> Result<TargetPose> {
    let z0 = s.depth();
    let mut p = Vec::with_capacity(p25.len());
    for (k, (uv, d)) in p25.uv.iter().zip(&p25.d).enumerate() {
        let z = z0 + d;
        if z <= EPS_DEPTH {
            return Err(Error::BehindCamera { joint: k, depth: z });
        }
        p.push(Vec3::new(uv.x * z, uv.y * z, z));
    }
    TargetPose::new(p)
}

/// Perspective projection of camera-frame points.
pub fn project(pose: &[Vec3]) -> Result<Vec<Vec2>> {
    pose.iter()
        .enumerate()
        .map(|(k, x)| {
            if x.z <= EPS_DEPTH {
                Err(Error::BehindCamera {
                    joint: k,
                    depth: x.z,
                })
            } else {
                Ok(Vec2::new(x.x / x.z, x.y / x.z))
            }
        })
        .collect()
}

/// Projects a root-relative pose whose root sits on the ray through
/// `root_uv` at depth `1/s`.
pub fn project_anchored(rel: &[Vec3], root_uv: Vec2, s: CameraScale) -> Result<Vec<Vec2>> {
    let z = s.depth();
    let root = Vec3::new(root_uv.x * z, root_uv.y * z, z);
    let placed: Vec<Vec3> = rel.iter().map(|q| q + root).collect();
    project(&placed)
}

/// Mean image-plane distance between the anchored projection of `rel` and
/// the observed coordinates.
pub fn reprojection_error(rel: &[Vec3], uv_obs: &[Vec2], s: CameraScale) -> Result<f64> {
    if rel.len() != uv_obs.len() || rel.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "observed keypoints",
            expected: rel.len(),
            got: uv_obs.len(),
        });
    }
    let proj = project_anchored(rel, uv_obs[0], s)?;
    Ok(proj
        .iter()
        .zip(uv_obs)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / rel.len() as f64)
}

/// Least-squares scale for a root-relative reconstruction.
///
/// The root is pinned to its observed image position, leaving the root depth
/// `Z = 1/s` as the only unknown. The weak-perspective estimate
/// `s = Σ(x·Δu + y·Δv) / Σ(x² + y²)` starts a short Newton polish of the
/// perspective objective in `Z`.
pub fn refit_scale(recon: &[Vec3], uv_obs: &[Vec2]) -> Result<CameraScale> {
    if recon.len() != uv_obs.len() {
        return Err(Error::DimensionMismatch {
            what: "observed keypoints",
            expected: recon.len(),
            got: uv_obs.len(),
        });
    }
    if recon.len() < 2 {
        return Err(Error::DegenerateObservation);
    }
    let uv0 = uv_obs[0];
    if uv_obs.iter().all(|p| (p - uv0).norm() == 0.0) {
        return Err(Error::DegenerateObservation);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (q, uv) in recon.iter().zip(uv_obs).skip(1) {
        let du = uv - uv0;
        num += q.x * du.x + q.y * du.y;
        den += q.x * q.x + q.y * q.y;
    }
    if den == 0.0 || num <= 0.0 {
        return Err(Error::DegenerateObservation);
    }
    let s_weak = num / den;

    // r_k(Z) = (x_k − u0·z_k)/(Z + z_k) − Δu_k, likewise for v.
    let terms: Vec<(Vec2, f64, Vec2)> = recon
        .iter()
        .zip(uv_obs)
        .skip(1)
        .map(|(q, uv)| {
            (
                Vec2::new(q.x - uv0.x * q.z, q.y - uv0.y * q.z),
                q.z,
                uv - uv0,
            )
        })
        .collect();
    let z_min = terms.iter().map(|t| -t.1).fold(0.0, f64::max) + EPS_DEPTH;
    let cost = |z: f64| -> f64 {
        terms
            .iter()
            .map(|(a, dz, obs)| (a / (z + dz) - obs).norm_squared())
            .sum()
    };
    let mut z = (1.0 / s_weak).max(z_min * 2.0);
    let mut f = cost(z);
    for _ in 0..NEWTON_STEPS {
        let (mut g, mut h, mut gn) = (0.0, 0.0, 0.0);
        for (a, dz, obs) in &terms {
            let w = z + dz;
            let r = a / w - obs;
            let dr = -a / (w * w);
            let d2r = a * (2.0 / (w * w * w));
            g += r.dot(&dr);
            h += dr.norm_squared() + r.dot(&d2r);
            gn += dr.norm_squared();
        }
        if g == 0.0 {
            break;
        }
        let curv = if h > 0.0 { h } else { gn };
        let mut step = g / curv;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = z - step;
            if cand > z_min {
                let fc = cost(cand);
                if fc <= f {
                    z = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    CameraScale::new(1.0 / z)
}

/// Inverse-kinematics back end used by [`ice`].
#[derive(Clone, Copy, Debug)]
pub struct PoseSolver<'a> {
    pub tree: &'a KinematicTree,
    pub rest: &'a RestPose,
    pub twists: &'a TwistAngles,
    pub mode: SolveMode,
}

impl PoseSolver<'_> {
    pub fn solve(&self, target: &TargetPose) -> Result<SolveReport> {
        match self.mode {
            SolveMode::Naive => solve_naive(self.tree, self.rest, target, self.twists),
            SolveMode::Adaptive => solve_adaptive(self.tree, self.rest, target, self.twists),
            SolveMode::Wholebody => {
                let markers = MarkerPair::from_target(self.tree, self.rest, target)?;
                solve_wholebody(self.tree, self.rest, target, self.twists, &markers)
            }
        }
    }
}

/// One ICE iterate: the scale used and the reprojection error of the pose
/// reconstructed at that scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IceStep {
    pub step: usize,
    pub s: f64,
    pub reprojection: f64,
}

#[derive(Clone, Debug)]
pub struct IceResult {
    pub scale: CameraScale,
    /// Back-projected joints at the final scale, camera frame.
    pub target: TargetPose,
    pub report: SolveReport,
    pub trace: Vec<IceStep>,
}

/// How ICE proposes the next scale from the refit `g(s)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IceUpdate {
    /// `s ← g(s)`.
    FixedPoint,
    /// Secant step on `g(s) − s`, starting with one fixed-point step.
    #[default]
    Secant,
}

impl IceUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            IceUpdate::FixedPoint => "fixed_point",
            IceUpdate::Secant => "secant",
        }
    }
}

struct Evaluated {
    lifted: TargetPose,
    report: SolveReport,
    rel: Vec<Vec3>,
    err: f64,
}

fn evaluate(
    p25: &Pose2p5D,
    s: CameraScale,
    solver: &PoseSolver<'_>,
    step: usize,
) -> Result<Evaluated> {
    let root = solver.tree.root();
    let lifted = backproject(p25, s)?;
    let shift = solver.rest.positions()[root] - lifted.p[root];
    let centered = TargetPose::new(lifted.p.iter().map(|p| p + shift).collect())?;
    let report = solver.solve(&centered)?;
    let rel: Vec<Vec3> = report
        .recon
        .q
        .iter()
        .map(|q| q - report.recon.q[root])
        .collect();
    let err = reprojection_error(&rel, &p25.uv, s)?;
    if !err.is_finite() {
        return Err(Error::NonFinite(format!(
            "reprojection error at ICE step {step}"
        )));
    }
    Ok(Evaluated {
        lifted,
        report,
        rel,
        err,
    })
}

/// Iterative camera estimation with the default [`IceUpdate::Secant`] rule.
///
/// Each iterate lifts the 2.5D pose with the current scale, moves its root
/// onto the template root, solves IK, and refits the scale to the
/// root-relative reconstruction. `steps = 0` is the plain lift at `s0`.
/// Iteration stops after `min(steps, 10)` updates or once the relative scale
/// change drops below [`ICE_TOL`].
pub fn ice(
    p25: &Pose2p5D,
    s0: CameraScale,
    solver: &PoseSolver<'_>,
    steps: usize,
) -> Result<IceResult> {
    ice_with(p25, s0, solver, steps, IceUpdate::Secant)
}

pub fn ice_with(
    p25: &Pose2p5D,
    s0: CameraScale,
    solver: &PoseSolver<'_>,
    steps: usize,
    update: IceUpdate,
) -> Result<IceResult> {
    solver.tree.check_len("2.5D pose", p25.len())?;
    let steps = steps.min(MAX_ICE_STEPS);
    let mut s = s0;
    // previous (s, g(s) − s) for the secant rule
    let mut prev: Option<(f64, f64)> = None;
    let mut trace = Vec::new();
    let mut step = 0;
    let mut converged = false;
    loop {
        let ev = evaluate(p25, s, solver, step)?;
        trace.push(IceStep {
            step,
            s: s.value(),
            reprojection: ev.err,
        });
        if step == steps || converged {
            return Ok(IceResult {
                scale: s,
                target: ev.lifted,
                report: ev.report,
                trace,
            });
        }
        let g = refit_scale(&ev.rel, &p25.uv)?.value();
        let r = g - s.value();
        let mut next = g;
        if let (IceUpdate::Secant, Some((s_prev, r_prev))) = (update, prev) {
            let denom = r - r_prev;
            let cand = s.value() - r * (s.value() - s_prev) / denom;
            if denom != 0.0 && cand.is_finite() && cand > 0.0 {
                next = cand;
            }
        }
        prev = Some((s.value(), r));
        let change = (next - s.value()).abs() / s.value();
        s = CameraScale::new(next)?;
        step += 1;
        // converged: one more lift at the updated scale closes the trace
        converged = change < ICE_TOL;
    }
}
