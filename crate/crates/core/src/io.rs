//! JSON formats for skeletons, targets, twists, rotations, 2.5D poses and
//! solve reports.
//!
//! Syntax errors carry serde_json's line and column. Shape errors found
//! while walking the joint array carry both a JSON pointer and the position
//! in the file; errors that need the whole document are reported against a
//! JSON pointer.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::camera::{CameraScale, Pose2p5D, Vec2};
use crate::error::{Error, Result};
use crate::hybrik::{error_decomposition, SolveReport, TargetPose, TwistAngles};
use crate::hybrikx::{MOUTH_BOTTOM, MOUTH_TOP};
use crate::linalg::Vec3;
use crate::skeleton::{
    Joint, KinematicTree, RestPose, RotationSet, SkeletonShapeBasis, SubtreeTag,
};
use crate::so3::{Rot3, TwistAngle};

fn default_tag() -> SubtreeTag {
    SubtreeTag::Body
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    parent: Option<usize>,
    rest: [f64; 3],
    #[serde(default = "default_tag")]
    tag: SubtreeTag,
    #[serde(default)]
    frame: bool,
}

/// Joint list checked element by element, so that errors point at the
/// offending entry.
struct RawJoints(Vec<RawJoint>);

impl<'de> Deserialize<'de> for RawJoints {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawJoints;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of joints")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<RawJoints, A::Error> {
                let mut out: Vec<RawJoint> = Vec::new();
                while let Some(j) = seq.next_element::<RawJoint>()? {
                    let i = out.len();
                    match (i, j.parent) {
                        (0, Some(_)) => {
                            return Err(de::Error::custom(
                                "/joints/0/parent: the first joint must be the root (parent null)",
                            ))
                        }
                        (i, None) if i > 0 => {
                            return Err(de::Error::custom(format!(
                                "/joints/{i}/parent: only the first joint may have a null parent"
                            )))
                        }
                        (i, Some(p)) if p >= i => {
                            return Err(de::Error::custom(format!(
                                "/joints/{i}/parent: parent {p} must precede joint {i}"
                            )))
                        }
                        _ => {}
                    }
                    if j.rest.iter().any(|x| !x.is_finite()) {
                        return Err(de::Error::custom(format!(
                            "/joints/{i}/rest: non-finite coordinate"
                        )));
                    }
                    if let Some(prev) = out.iter().position(|o| o.name == j.name) {
                        return Err(de::Error::custom(format!(
                            "/joints/{i}/name: {:?} already used by joint {prev}",
                            j.name
                        )));
                    }
                    out.push(j);
                }
                Ok(RawJoints(out))
            }
        }
        d.deserialize_seq(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSkeleton {
    joints: RawJoints,
}

pub fn parse_skeleton(src: &str) -> Result<(KinematicTree, RestPose)> {
    let raw: RawSkeleton = serde_json::from_str(src)?;
    let joints = raw.joints.0;
    if joints.is_empty() {
        return Err(Error::schema("/joints", "at least one joint is required"));
    }
    let rest: Vec<Vec3> = joints.iter().map(|j| Vec3::from(j.rest)).collect();
    let tree = KinematicTree::new(
        joints
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                parent: j.parent,
                tag: j.tag,
                frame: j.frame,
            })
            .collect(),
    )?;
    let rest = RestPose::new(&tree, rest)?;
    Ok((tree, rest))
}

/// One joint per line.
pub fn skeleton_to_json(tree: &KinematicTree, rest: &RestPose) -> String {
    let mut s = String::from("{\"joints\": [\n");
    for (k, j) in tree.joints().iter().enumerate() {
        let mut entry = json!({
            "name": j.name,
            "parent": j.parent,
            "rest": vec3_json(&rest.positions()[k]),
            "tag": j.tag,
        });
        if j.frame {
            entry["frame"] = Value::Bool(true);
        }
        s.push_str("  ");
        s.push_str(&entry.to_string());
        s.push_str(if k + 1 < tree.len() { ",\n" } else { "\n" });
    }
    s.push_str("]}\n");
    s
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeanRef {
    File(String),
    Inline(Vec<[f64; 3]>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    mean: MeanRef,
    #[serde(default)]
    shape_dirs: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    expr_dirs: Vec<Vec<[f64; 3]>>,
}

/// Shape basis file. `mean` is either an inline list of joint positions or
/// a reference to a skeleton file, resolved by `resolve`.
pub fn parse_shape_basis(
    src: &str,
    tree: &KinematicTree,
    resolve: impl Fn(&str) -> Result<RestPose>,
) -> Result<SkeletonShapeBasis> {
    let raw: RawShape = serde_json::from_str(src)?;
    let mean = match raw.mean {
        MeanRef::File(r) => resolve(&r)?,
        MeanRef::Inline(v) => {
            check_count("/mean", tree.len(), v.len())?;
            RestPose::new(tree, v.into_iter().map(Vec3::from).collect())?
        }
    };
    let dirs = |name: &str, d: Vec<Vec<[f64; 3]>>| -> Result<Vec<Vec<Vec3>>> {
        d.into_iter()
            .enumerate()
            .map(|(i, dir)| {
                check_count(&format!("/{name}/{i}"), tree.len(), dir.len())?;
                Ok(dir.into_iter().map(Vec3::from).collect())
            })
            .collect()
    };
    let shape = dirs("shape_dirs", raw.shape_dirs)?;
    let expr = dirs("expr_dirs", raw.expr_dirs)?;
    SkeletonShapeBasis::new(tree, mean, shape, expr)
}

fn check_count(pointer: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::schema(
            pointer,
            format!("expected {expected} entries, got {got}"),
        ));
    }
    Ok(())
}

fn finite_points(pointer: &str, pts: &[[f64; 3]]) -> Result<Vec<Vec3>> {
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            if p.iter().all(|x| x.is_finite()) {
                Ok(Vec3::from(*p))
            } else {
                Err(Error::schema(
                    format!("{pointer}/{i}"),
                    "non-finite coordinate",
                ))
            }
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarkers {
    mouth_top: [f64; 3],
    mouth_bottom: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    joints: Vec<[f64; 3]>,
    markers: Option<RawMarkers>,
}

/// Target with one position per tree joint.
pub fn parse_target(src: &str, tree: &KinematicTree) -> Result<TargetPose> {
    let raw: RawTarget = serde_json::from_str(src)?;
    check_count("/joints", tree.len(), raw.joints.len())?;
    TargetPose::new(finite_points("/joints", &raw.joints)?)
}

/// Whole-body target: `joints` lists every joint except the two mouth
/// markers, in tree order; the markers come from the `markers` object or,
/// when given, from a separate markers document.
pub fn parse_wholebody_target(
    src: &str,
    tree: &KinematicTree,
    markers_src: Option<&str>,
) -> Result<TargetPose> {
    let raw: RawTarget = serde_json::from_str(src)?;
    let top = tree
        .index_of(MOUTH_TOP)
        .ok_or_else(|| Error::InvalidTree(format!("tree has no {MOUTH_TOP} joint")))?;
    let bottom = tree
        .index_of(MOUTH_BOTTOM)
        .ok_or_else(|| Error::InvalidTree(format!("tree has no {MOUTH_BOTTOM} joint")))?;
    let markers = match markers_src {
        Some(m) => serde_json::from_str::<RawMarkers>(m)?,
        None => raw.markers.ok_or_else(|| {
            Error::schema(
                "/markers",
                "missing field `markers` (mouth_top, mouth_bottom)",
            )
        })?,
    };
    check_count("/joints", tree.len() - 2, raw.joints.len())?;
    let body = finite_points("/joints", &raw.joints)?;
    let top_p = finite_points("/markers/mouth_top", &[markers.mouth_top])?[0];
    let bottom_p = finite_points("/markers/mouth_bottom", &[markers.mouth_bottom])?[0];
    let mut it = body.into_iter();
    let p = (0..tree.len())
        .map(|k| {
            if k == top {
                top_p
            } else if k == bottom {
                bottom_p
            } else {
                it.next().expect("count checked above")
            }
        })
        .collect();
    TargetPose::new(p)
}

pub fn wholebody_target_to_json(tree: &KinematicTree, target: &TargetPose) -> Result<String> {
    let top = tree.index_of(MOUTH_TOP);
    let bottom = tree.index_of(MOUTH_BOTTOM);
    let (Some(top), Some(bottom)) = (top, bottom) else {
        return Err(Error::InvalidTree("tree has no mouth markers".into()));
    };
    let joints: Vec<Value> = (0..target.len())
        .filter(|&k| k != top && k != bottom)
        .map(|k| vec3_json(&target.p[k]))
        .collect();
    Ok(json!({
        "joints": joints,
        "markers": {
            "mouth_top": vec3_json(&target.p[top]),
            "mouth_bottom": vec3_json(&target.p[bottom]),
        }
    })
    .to_string())
}

pub fn points_to_json(points: &[Vec3]) -> String {
    json!({ "joints": points.iter().map(vec3_json).collect::<Vec<_>>() }).to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTwists {
    phi: Option<Vec<f64>>,
    cos_sin: Option<Vec<[f64; 2]>>,
}

/// Twist angles of joints `1..K`, either as radians (`phi`) or as unit
/// `[cos, sin]` pairs (`cos_sin`).
pub fn parse_twists(src: &str, tree: &KinematicTree) -> Result<TwistAngles> {
    let raw: RawTwists = serde_json::from_str(src)?;
    let n = tree.len() - 1;
    let angles: Vec<TwistAngle> = match (raw.phi, raw.cos_sin) {
        (Some(phi), None) => {
            check_count("/phi", n, phi.len())?;
            phi.iter()
                .enumerate()
                .map(|(i, &a)| {
                    if a.is_finite() {
                        Ok(TwistAngle::from_radians(a))
                    } else {
                        Err(Error::schema(format!("/phi/{i}"), "non-finite angle"))
                    }
                })
                .collect::<Result<_>>()?
        }
        (None, Some(cs)) => {
            check_count("/cos_sin", n, cs.len())?;
            cs.iter()
                .enumerate()
                .map(|(i, [c, s])| {
                    TwistAngle::from_cos_sin(*c, *s)
                        .map_err(|e| Error::schema(format!("/cos_sin/{i}"), e.to_string()))
                })
                .collect::<Result<_>>()?
        }
        (Some(_), Some(_)) => {
            return Err(Error::schema(
                "",
                "give either `phi` or `cos_sin`, not both",
            ))
        }
        (None, None) => return Err(Error::schema("", "missing field `phi` (or `cos_sin`)")),
    };
    Ok(TwistAngles::from_non_root(angles))
}

pub fn twists_to_json(twists: &TwistAngles) -> String {
    json!({ "phi": twists.non_root().iter().map(|t| t.radians()).collect::<Vec<_>>() }).to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRotations {
    rotations: Vec<[f64; 9]>,
}

/// Relative rotations, one row-major 3×3 matrix per joint (entry 0 is the
/// root's global rotation).
pub fn parse_rotations(src: &str, tree: &KinematicTree) -> Result<RotationSet> {
    let raw: RawRotations = serde_json::from_str(src)?;
    check_count("/rotations", tree.len(), raw.rotations.len())?;
    let rel = raw
        .rotations
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Rot3::from_row_major(m)
                .map_err(|e| Error::schema(format!("/rotations/{i}"), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RotationSet { rel })
}

pub fn rotations_to_json(rots: &RotationSet) -> String {
    json!({ "rotations": rots.rel.iter().map(|r| r.to_row_major().to_vec()).collect::<Vec<_>>() })
        .to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawP25 {
    uv: Vec<[f64; 2]>,
    d: Vec<f64>,
    s0: f64,
}

pub fn parse_p25(src: &str) -> Result<(Pose2p5D, CameraScale)> {
    let raw: RawP25 = serde_json::from_str(src)?;
    check_count("/d", raw.uv.len(), raw.d.len())?;
    if raw.d.first().is_some_and(|&d| d != 0.0) {
        return Err(Error::schema("/d/0", "root depth must be 0"));
    }
    let pose = Pose2p5D::new(
        raw.uv.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
        raw.d,
    )
    .map_err(|e| Error::schema("", e.to_string()))?;
    let s0 = CameraScale::new(raw.s0).map_err(|e| Error::schema("/s0", e.to_string()))?;
    Ok((pose, s0))
}

pub fn p25_to_json(p25: &Pose2p5D, s0: CameraScale) -> String {
    json!({
        "uv": p25.uv.iter().map(|p| vec![p.x, p.y]).collect::<Vec<_>>(),
        "d": p25.d,
        "s0": s0.value(),
    })
    .to_string()
}

pub fn vec3_json(v: &Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

/// Solve report: rotations (row-major), reconstructed joints and the
/// per-joint residual table; optionally the accumulated/local split.
pub fn report_to_json(
    report: &SolveReport,
    tree: &KinematicTree,
    with_decomposition: bool,
) -> Value {
    let residuals: Vec<Value> = report
        .eps
        .iter()
        .enumerate()
        .map(|(k, e)| {
            json!({
                "joint": tree.name(k),
                "subtree": tree.tag(k),
                "eps": vec3_json(e),
                "norm": e.norm(),
            })
        })
        .collect();
    let mut out = json!({
        "mode": report.mode,
        "rotations": report.rots.rel.iter().map(|r| r.to_row_major().to_vec()).collect::<Vec<_>>(),
        "joints": report.recon.q.iter().map(vec3_json).collect::<Vec<_>>(),
        "residuals": residuals,
    });
    if with_decomposition {
        let dec: Vec<Value> = error_decomposition(report, tree)
            .iter()
            .enumerate()
            .map(|(k, t)| {
                json!({
                    "joint": tree.name(k),
                    "accumulated": vec3_json(&t.accumulated),
                    "local": vec3_json(&t.local),
                })
            })
            .collect();
        out["decomposition"] = Value::Array(dec);
    }
    if !report.conflicts.is_empty() {
        out["conflicts"] = report
            .conflicts
            .iter()
            .map(|c| {
                json!({
                    "joint": tree.name(c.joint),
                    "parent": tree.name(c.parent),
                    "feasible": c.feasible,
                    "residual": c.residual,
                })
            })
            .collect();
    }
    out
}
