//! Whole-body inverse kinematics over body, hand and face sub-trees.
//!
//! The body sub-tree is solved first with the adaptive solver. A joint that
//! ends the body chain and also roots another sub-tree (the wrists and the
//! head) is a conflict joint: the body pass only reaches it approximately,
//! while the sub-tree pass treats its predicted position as exact. The
//! backward update moves the conflict joint's parent onto the two-sphere
//! intersection closest to its prediction so that the chain lands on the
//! conflict joint exactly. Hand and face sub-trees are then solved from their
//! predicted roots and merged into one [`RotationSet`].

use crate::error::{Error, Result};
use crate::hybrik::{
    aim, check_inputs, frame_rotation, lookup, rigid_frame_children, run_pass, Anchor, Chain,
    ConflictStatus, PassState, SolveMode, SolveReport, TargetPose, TwistAngles,
};
use crate::linalg::{all_finite, any_perpendicular, Vec3};
use crate::skeleton::{fk, KinematicTree, RestPose, RotationSet, SubtreeInfo, SubtreeTag};
use crate::so3::{swing_between, Rot3, EPS_NORM};

pub const MOUTH_TOP: &str = "mouth_top";
pub const MOUTH_BOTTOM: &str = "mouth_bottom";

/// One tagged slice of a whole-body problem.
#[derive(Clone, Debug)]
pub struct SubtreeBundle {
    pub info: SubtreeInfo,
    /// Joints of the slice, the hanging joint first.
    pub joints: Vec<usize>,
    pub rest: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub twists: Vec<f64>,
}

/// The whole-body problem cut into its tagged slices. A conflict joint is
/// the last joint of the body slice and the first joint of its own slice.
#[derive(Clone, Debug)]
pub struct SubtreeSplit {
    pub bundles: Vec<SubtreeBundle>,
}

impl SubtreeSplit {
    pub fn new(
        tree: &KinematicTree,
        rest: &RestPose,
        target: &TargetPose,
        twists: &TwistAngles,
    ) -> Result<Self> {
        check_inputs(tree, rest, target, twists)?;
        let bundles = tree
            .subtrees()
            .iter()
            .map(|info| {
                let mut joints = info.members.clone();
                if !joints.contains(&info.root) {
                    joints.insert(0, info.root);
                }
                SubtreeBundle {
                    rest: joints.iter().map(|&k| rest.positions()[k]).collect(),
                    target: joints.iter().map(|&k| target.p[k]).collect(),
                    twists: joints.iter().map(|&k| twists.get(k).radians()).collect(),
                    info: info.clone(),
                    joints,
                }
            })
            .collect();
        Ok(SubtreeSplit { bundles })
    }

    pub fn bundle(&self, tag: SubtreeTag) -> Option<&SubtreeBundle> {
        self.bundles.iter().find(|b| b.info.tag == tag)
    }
}

/// Re-place `B` given the reconstructed grandparent `A`, the predicted
/// parent `B` and the predicted distal joint `C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardUpdateProblem {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub len_pa: f64,
    pub len_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardUpdate {
    pub b_star: Vec3,
    pub feasible: bool,
    /// Largest violation of the two bone-length constraints, meters.
    pub residual: f64,
}

/// Closest point to `B` on the circle `{‖X − A‖ = len_pa} ∩ {‖C − X‖ = len_k}`.
///
/// With `L = ‖AC‖`, the circle's center is `D = A + m·AC` and its radius is
/// `n`, where
///
/// ```text
/// m = (len_pa² − len_k² + L²) / (2L²)
/// n = √(len_pa² − m²L²)
/// ```
///
/// and the answer is `D + n·DB⊥/‖DB⊥‖`, `DB⊥` being the part of `B − D`
/// orthogonal to `AC`. When `B` lies on the axis every circle point is
/// optimal and a fixed perpendicular is used.
///
/// When the spheres do not meet, the point on line `AC` minimizing the
/// larger of the two length violations is returned with `feasible = false`.
pub fn backward_update(prob: &BackwardUpdateProblem) -> Result<BackwardUpdate> {
    let BackwardUpdateProblem {
        a,
        b,
        c,
        len_pa,
        len_k,
    } = *prob;
    if !(all_finite(&a)
        && all_finite(&b)
        && all_finite(&c)
        && len_pa.is_finite()
        && len_k.is_finite())
    {
        return Err(Error::NonFinite("backward update input".into()));
    }
    if len_pa <= 0.0 || len_k <= 0.0 {
        return Err(Error::Degenerate("bone lengths must be positive".into()));
    }
    let ac = c - a;
    let l2 = ac.norm_squared();
    let l = l2.sqrt();
    if l < EPS_NORM {
        return Err(Error::CoincidentAC);
    }
    let m = (len_pa * len_pa - len_k * len_k + l2) / (2.0 * l2);
    let n2 = len_pa * len_pa - m * m * l2;
    let violation = |x: &Vec3| {
        ((x - a).norm() - len_pa)
            .abs()
            .max(((c - x).norm() - len_k).abs())
    };

    if n2 >= 0.0 {
        let d = a + ac * m;
        let db = b - d;
        let perp = db - ac * (db.dot(&ac) / l2);
        let pn = perp.norm();
        let dir = if pn < EPS_NORM {
            any_perpendicular(&ac)
        } else {
            perp / pn
        };
        let b_star = d + dir * n2.sqrt();
        return Ok(BackwardUpdate {
            b_star,
            feasible: true,
            residual: violation(&b_star),
        });
    }

    let u = ac / l;
    let along = if l > len_pa + len_k {
        (l + len_pa - len_k) * 0.5
    } else if len_pa > l + len_k {
        (len_pa + l + len_k) * 0.5
    } else {
        -(len_pa + len_k - l) * 0.5
    };
    let b_star = a + u * along;
    Ok(BackwardUpdate {
        b_star,
        feasible: false,
        residual: violation(&b_star),
    })
}

/// New parent and conflict-joint rotations after a backward update.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictResolution {
    pub parent: usize,
    pub joint: usize,
    pub rel_parent: Rot3,
    pub rel_joint: Rot3,
    pub glob_parent: Rot3,
    pub glob_joint: Rot3,
    pub q_parent: Vec3,
    pub q_joint: Vec3,
    pub feasible: bool,
    pub residual: f64,
}

/// Re-solves the parent of conflict joint `k` and `k` itself so that the
/// chain from the reconstructed grandparent reaches `p_conflict`.
///
/// `grand_q` and `grand_glob` are the reconstructed position and global
/// rotation of `k`'s grandparent.
#[allow(clippy::too_many_arguments)]
pub fn resolve_conflict(
    tree: &KinematicTree,
    rest: &RestPose,
    k: usize,
    grand_q: Vec3,
    grand_glob: &Rot3,
    p_parent: Vec3,
    p_conflict: Vec3,
    twists: &TwistAngles,
) -> Result<ConflictResolution> {
    let pa = tree.parent(k).ok_or(Error::RootHasNoBone(k))?;
    if tree.parent(pa).is_none() {
        return Err(Error::InvalidTree(format!(
            "conflict joint {} has no grandparent",
            tree.name(k)
        )));
    }
    let bone_pa = rest.bone(tree, pa)?;
    let bone_k = rest.bone(tree, k)?;
    let upd = backward_update(&BackwardUpdateProblem {
        a: grand_q,
        b: p_parent,
        c: p_conflict,
        len_pa: bone_pa.norm(),
        len_k: bone_k.norm(),
    })?;
    let rel_parent = aim(
        &bone_pa,
        &grand_glob.transpose().apply(&(upd.b_star - grand_q)),
        twists.get(pa),
    )?;
    let glob_parent = grand_glob.compose(&rel_parent);
    let q_parent = grand_q + glob_parent.apply(&bone_pa);
    let reach = p_conflict - q_parent;
    if reach.norm() < EPS_NORM {
        return Err(Error::ZeroBone {
            joint: k,
            name: tree.name(k).to_string(),
        });
    }
    let rel_joint = aim(
        &bone_k,
        &glob_parent.transpose().apply(&reach),
        twists.get(k),
    )?;
    let glob_joint = glob_parent.compose(&rel_joint);
    let q_joint = q_parent + glob_joint.apply(&bone_k);
    Ok(ConflictResolution {
        parent: pa,
        joint: k,
        rel_parent,
        rel_joint,
        glob_parent,
        glob_joint,
        q_parent,
        q_joint,
        feasible: upd.feasible,
        residual: upd.residual,
    })
}

/// Template and predicted mouth markers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerPair {
    pub template_top: Vec3,
    pub template_bottom: Vec3,
    pub pred_top: Vec3,
    pub pred_bottom: Vec3,
}

impl MarkerPair {
    pub fn new(
        template_top: Vec3,
        template_bottom: Vec3,
        pred_top: Vec3,
        pred_bottom: Vec3,
    ) -> Result<Self> {
        if (template_bottom - template_top).norm() < EPS_NORM {
            return Err(Error::ZeroVector {
                what: "template mouth opening",
                eps: EPS_NORM,
            });
        }
        Ok(MarkerPair {
            template_top,
            template_bottom,
            pred_top,
            pred_bottom,
        })
    }

    /// Markers of a tree carrying `mouth_top` and `mouth_bottom` joints,
    /// predicted positions taken from `target`.
    pub fn from_target(tree: &KinematicTree, rest: &RestPose, target: &TargetPose) -> Result<Self> {
        let (top, bottom) = marker_joints(tree)?;
        tree.check_len("target", target.len())?;
        let t = rest.positions();
        MarkerPair::new(t[top], t[bottom], target.p[top], target.p[bottom])
    }
}

/// Indices of the two mouth markers.
pub fn marker_joints(tree: &KinematicTree) -> Result<(usize, usize)> {
    let find = |name: &str| {
        tree.index_of(name)
            .ok_or_else(|| Error::InvalidTree(format!("tree has no {name} joint")))
    };
    Ok((find(MOUTH_TOP)?, find(MOUTH_BOTTOM)?))
}

/// Jaw rotation relative to the head frame, swing only.
///
/// The template opening `bottom − top` is swung onto the predicted opening
/// expressed in the head frame.
pub fn jaw_swing(markers: &MarkerPair, head_global: &Rot3) -> Result<Rot3> {
    let template = markers.template_bottom - markers.template_top;
    let pred = head_global
        .transpose()
        .apply(&(markers.pred_bottom - markers.pred_top));
    if pred.norm() < EPS_NORM {
        return Err(Error::ZeroVector {
            what: "predicted mouth opening",
            eps: EPS_NORM,
        });
    }
    swing_between(&template, &pred)
}

/// Solves one non-body sub-tree hanging from `info.root`, given the merged
/// global rotation of that root, and writes the result into `merged`.
fn solve_limb(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
    markers: &MarkerPair,
    info: &SubtreeInfo,
    merged: &mut PassState,
) -> Result<()> {
    let root = info.root;
    let p_root = target.p[root];
    let registered = frame_rotation(tree, rest, &target.p, root, p_root, info.tag)?;
    let pins = match registered {
        Some(_) => rigid_frame_children(tree, rest, twists, root, info.tag)?,
        None => Vec::new(),
    };
    let frame = registered.unwrap_or(merged.glob[root]);
    let anchor = Anchor {
        root,
        pos: p_root,
        rot: frame,
    };
    let mut sub = PassState::new(tree.len());
    if info.tag == SubtreeTag::Face {
        let jaw = marker_joints(tree)
            .ok()
            .and_then(|(top, _)| tree.parent(top));
        let jaw_rel = match jaw {
            Some(j) if tree.parent(j) == Some(root) => Some(jaw_swing(markers, &frame)?),
            _ => None,
        };
        let pinned = |k: usize| -> Option<Rot3> {
            if Some(k) == jaw {
                jaw_rel
            } else if tree.parent(k) == Some(root) {
                Some(Rot3::identity())
            } else {
                None
            }
        };
        run_pass(
            tree,
            rest,
            &target.p,
            twists,
            Chain::Adaptive,
            &anchor,
            &info.members,
            &pinned,
            &mut sub,
        )?;
    } else {
        run_pass(
            tree,
            rest,
            &target.p,
            twists,
            Chain::Adaptive,
            &anchor,
            &info.members,
            &|k| lookup(&pins, k),
            &mut sub,
        )?;
    }
    let root_glob = merged.glob[root];
    for &k in &info.members {
        let rel = if tree.parent(k) == Some(root) {
            root_glob.transpose().compose(&sub.glob[k])
        } else {
            sub.rel[k]
        };
        merged.rel[k] = rel;
    }
    Ok(())
}

/// Whole-body solve: adaptive body pass, backward update at every conflict
/// joint, then independent hand and face passes merged onto the body.
pub fn solve_wholebody(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
    markers: &MarkerPair,
) -> Result<SolveReport> {
    check_inputs(tree, rest, target, twists)?;
    let body = tree
        .subtree(SubtreeTag::Body)
        .ok_or_else(|| Error::InvalidTree("whole-body tree needs a body sub-tree".into()))?;
    if body.root != tree.root() {
        return Err(Error::InvalidTree(
            "body sub-tree must contain the root".into(),
        ));
    }
    let root = tree.root();
    let rot = frame_rotation(
        tree,
        rest,
        &target.p,
        root,
        target.p[root],
        SubtreeTag::Body,
    )?
    .unwrap_or_else(Rot3::identity);
    let anchor = Anchor {
        root,
        pos: rest.positions()[root],
        rot,
    };
    let body_members: Vec<usize> = body
        .members
        .iter()
        .copied()
        .filter(|&k| k != root)
        .collect();
    let mut st = PassState::new(tree.len());
    st.rel[root] = rot;
    run_pass(
        tree,
        rest,
        &target.p,
        twists,
        Chain::Adaptive,
        &anchor,
        &body_members,
        &|_| None,
        &mut st,
    )?;

    // wrists before the head; the conflict set is sorted by joint index, so
    // order explicitly by sub-tree kind
    let mut conflicts: Vec<&SubtreeInfo> = tree
        .subtrees()
        .iter()
        .filter(|s| s.tag != SubtreeTag::Body)
        .collect();
    conflicts.sort_by_key(|s| (!s.tag.is_hand(), s.root));
    let mut statuses = Vec::new();
    for info in &conflicts {
        let k = info.root;
        let pa = tree.parent(k).ok_or(Error::RootHasNoBone(k))?;
        let gp = tree.parent(pa).ok_or(Error::RootHasNoBone(pa))?;
        let res = resolve_conflict(
            tree,
            rest,
            k,
            st.q[gp],
            &st.glob[gp],
            target.p[pa],
            target.p[k],
            twists,
        )?;
        st.rel[pa] = res.rel_parent;
        st.rel[k] = res.rel_joint;
        st.glob[pa] = res.glob_parent;
        st.glob[k] = res.glob_joint;
        st.q[pa] = res.q_parent;
        st.q[k] = res.q_joint;
        statuses.push(ConflictStatus {
            joint: k,
            parent: pa,
            feasible: res.feasible,
            residual: res.residual,
        });
    }

    for info in &conflicts {
        solve_limb(tree, rest, target, twists, markers, info, &mut st)?;
    }

    let rots = RotationSet { rel: st.rel };
    let (recon, globals) = fk(tree, rest, &rots)?;
    let eps = target.p.iter().zip(&recon.q).map(|(p, q)| p - q).collect();
    Ok(SolveReport {
        mode: SolveMode::Wholebody,
        rots,
        globals,
        recon,
        eps,
        conflicts: statuses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{twist_about, AxisAngle};

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn hand_computed_intersection() {
        let upd = backward_update(&BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(0.6, 2.0, 0.0),
            c: Vec3::new(1.2, 0.0, 0.0),
            len_pa: 1.0,
            len_k: 1.0,
        })
        .unwrap();
        assert!(upd.feasible);
        assert!(close(&upd.b_star, &Vec3::new(0.6, 0.8, 0.0), 1e-12));
    }

    #[test]
    fn feasible_b_is_kept() {
        let s2 = 2f64.sqrt();
        let upd = backward_update(&BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(1.0, 1.0, 0.0),
            c: Vec3::new(2.0, 0.0, 0.0),
            len_pa: s2,
            len_k: s2,
        })
        .unwrap();
        assert!(close(&upd.b_star, &Vec3::new(1.0, 1.0, 0.0), 1e-12));
        assert!(upd.residual < 1e-12);
    }

    #[test]
    fn infeasible_cases_balance_the_violations() {
        let base = BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(0.5, 1.0, 0.0),
            c: Vec3::new(3.0, 0.0, 0.0),
            len_pa: 1.0,
            len_k: 1.0,
        };
        // too far apart: both bones stretched by 0.5
        let upd = backward_update(&base).unwrap();
        assert!(!upd.feasible);
        assert!(close(&upd.b_star, &Vec3::new(1.5, 0.0, 0.0), 1e-12));
        assert!((upd.residual - 0.5).abs() < 1e-12);
        // parent bone longer than the whole reach
        let upd = backward_update(&BackwardUpdateProblem {
            len_pa: 4.5,
            ..base
        })
        .unwrap();
        assert!(!upd.feasible);
        assert!(close(&upd.b_star, &Vec3::new(4.25, 0.0, 0.0), 1e-12));
        assert!((upd.residual - 0.25).abs() < 1e-12);
        let upd = backward_update(&BackwardUpdateProblem {
            len_pa: 5.0,
            ..base
        })
        .unwrap();
        assert!((upd.residual - 0.5).abs() < 1e-12);
        // distal bone longer than the whole reach
        let upd = backward_update(&BackwardUpdateProblem { len_k: 5.0, ..base }).unwrap();
        assert!(!upd.feasible);
        assert!(close(&upd.b_star, &Vec3::new(-1.5, 0.0, 0.0), 1e-12));
        assert!((upd.residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn b_on_axis_uses_fixed_perpendicular() {
        let p = BackwardUpdateProblem {
            a: Vec3::zeros(),
            b: Vec3::new(0.6, 0.0, 0.0),
            c: Vec3::new(1.2, 0.0, 0.0),
            len_pa: 1.0,
            len_k: 1.0,
        };
        let u1 = backward_update(&p).unwrap();
        let u2 = backward_update(&p).unwrap();
        assert_eq!(u1.b_star, u2.b_star);
        assert!(u1.residual < 1e-12);
    }

    #[test]
    fn coincident_a_and_c_is_an_error() {
        let p = BackwardUpdateProblem {
            a: Vec3::x(),
            b: Vec3::y(),
            c: Vec3::x(),
            len_pa: 1.0,
            len_k: 1.0,
        };
        assert!(matches!(backward_update(&p), Err(Error::CoincidentAC)));
    }

    fn markers(bottom: Vec3) -> MarkerPair {
        MarkerPair::new(
            Vec3::new(0.0, 0.0, 0.1),
            Vec3::new(0.0, -0.03, 0.1),
            Vec3::new(0.0, 0.0, 0.1),
            bottom,
        )
        .unwrap()
    }

    #[test]
    fn jaw_closed_mouth_is_identity() {
        let m = markers(Vec3::new(0.0, -0.03, 0.1));
        assert!(jaw_swing(&m, &Rot3::identity()).unwrap().angle() < 1e-12);
    }

    #[test]
    fn jaw_recovers_rotation_about_ear_axis() {
        let r = twist_about(&Vec3::x(), 20f64.to_radians().into()).unwrap();
        let top = Vec3::new(0.0, 0.0, 0.1);
        let m = markers(top + r.apply(&Vec3::new(0.0, -0.03, 0.0)));
        let jaw = jaw_swing(&m, &Rot3::identity()).unwrap();
        assert!(jaw.frobenius_to(&r) < 1e-12);
    }

    #[test]
    fn jaw_ignores_head_motion() {
        let head = Rot3::from_axis_angle(&AxisAngle::new(Vec3::new(0.3, 1.0, -0.2), 0.9).unwrap());
        let mut m = markers(Vec3::new(0.0, -0.03, 0.1));
        m.pred_top = head.apply(&m.template_top);
        m.pred_bottom = head.apply(&m.template_bottom);
        assert!(jaw_swing(&m, &head).unwrap().angle() < 1e-12);
    }

    #[test]
    fn coincident_predicted_markers_fail() {
        let m = markers(Vec3::new(0.0, 0.0, 0.1));
        assert!(matches!(
            jaw_swing(&m, &Rot3::identity()),
            Err(Error::ZeroVector { .. })
        ));
    }
}
