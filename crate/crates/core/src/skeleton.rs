//! Kinematic trees, rest-pose templates and forward kinematics.
//!
//! Every non-root joint `k` owns one relative rotation `R_{pa(k),k}`. Its
//! global rotation `R_k = R_{pa(k)} · R_{pa(k),k}` carries the template bone
//! `t_k − t_{pa(k)}` into place:
//!
//! ```text
//! q_0 = t_0
//! q_k = R_k (t_k − t_pa(k)) + q_pa(k)
//! ```
//!
//! Joints are stored in topological order (parent index < child index), so a
//! single forward pass suffices for both FK and the IK solvers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vec3};
use crate::so3::{Rot3, EPS_NORM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtreeTag {
    Body,
    LeftHand,
    RightHand,
    Face,
}

impl SubtreeTag {
    pub const ALL: [SubtreeTag; 4] = [
        SubtreeTag::Body,
        SubtreeTag::LeftHand,
        SubtreeTag::RightHand,
        SubtreeTag::Face,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SubtreeTag::Body => "body",
            SubtreeTag::LeftHand => "left_hand",
            SubtreeTag::RightHand => "right_hand",
            SubtreeTag::Face => "face",
        }
    }

    pub fn is_hand(&self) -> bool {
        matches!(self, SubtreeTag::LeftHand | SubtreeTag::RightHand)
    }
}

impl fmt::Display for SubtreeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub tag: SubtreeTag,
    /// Rigidly attached to its parent in the template; used to register the
    /// parent's global frame.
    pub frame: bool,
}

/// Entry point of one tagged sub-tree.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtreeInfo {
    pub tag: SubtreeTag,
    /// Joint the sub-tree hangs from. For the sub-tree containing the tree
    /// root this is the root itself; otherwise it is a body joint that is
    /// also a distal joint of the body (a conflict joint).
    pub root: usize,
    /// Joints carrying `tag`, topologically ordered.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    joints: Vec<Joint>,
    children: Vec<Vec<usize>>,
    subtrees: Vec<SubtreeInfo>,
}

impl KinematicTree {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidTree("no joints".into()));
        }
        let roots: Vec<usize> = (0..joints.len())
            .filter(|&k| joints[k].parent.is_none())
            .collect();
        if roots != [0] {
            return Err(Error::InvalidTree(format!(
                "expected exactly one root at index 0, found roots at {roots:?}"
            )));
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (k, j) in joints.iter().enumerate().skip(1) {
            let p = j.parent.unwrap();
            if p >= k {
                return Err(Error::InvalidTree(format!(
                    "joint {k} ({}) has parent {p}; parents must precede children",
                    j.name
                )));
            }
            children[p].push(k);
        }
        for (k, j) in joints.iter().enumerate() {
            if j.name.is_empty() {
                return Err(Error::InvalidTree(format!("joint {k} has an empty name")));
            }
            if let Some(prev) = joints[..k].iter().position(|o| o.name == j.name) {
                return Err(Error::InvalidTree(format!(
                    "duplicate joint name {:?} at {prev} and {k}",
                    j.name
                )));
            }
        }
        if joints[0].frame {
            return Err(Error::InvalidTree(
                "the root cannot be a frame joint".into(),
            ));
        }

        let mut subtrees = Vec::new();
        for tag in SubtreeTag::ALL {
            let members: Vec<usize> = (0..joints.len())
                .filter(|&k| joints[k].tag == tag)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut entries: Vec<usize> = members
                .iter()
                .filter_map(|&k| match joints[k].parent {
                    None => Some(k),
                    Some(p) if joints[p].tag != tag => Some(p),
                    _ => None,
                })
                .collect();
            entries.sort_unstable();
            entries.dedup();
            if entries.len() != 1 {
                return Err(Error::InvalidTree(format!(
                    "sub-tree {tag} must hang from exactly one joint, found {entries:?}"
                )));
            }
            let root = entries[0];
            if joints[root].tag != tag && joints[root].tag != SubtreeTag::Body {
                return Err(Error::InvalidTree(format!(
                    "sub-tree {tag} hangs from non-body joint {}",
                    joints[root].name
                )));
            }
            subtrees.push(SubtreeInfo { tag, root, members });
        }
        Ok(KinematicTree {
            joints,
            children,
            subtrees,
        })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, k: usize) -> &Joint {
        &self.joints[k]
    }

    pub fn name(&self, k: usize) -> &str {
        &self.joints[k].name
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.joints[k].parent
    }

    pub fn tag(&self, k: usize) -> SubtreeTag {
        self.joints[k].tag
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Ancestors of `k`, root first, excluding `k`.
    pub fn ancestors(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.joints[k].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.joints[p].parent;
        }
        out.reverse();
        out
    }

    pub fn is_ancestor(&self, a: usize, k: usize) -> bool {
        let mut cur = self.joints[k].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.joints[p].parent;
        }
        false
    }

    /// Children of `k` flagged as frame joints and sharing `tag`.
    pub fn frame_children(&self, k: usize, tag: SubtreeTag) -> Vec<usize> {
        self.children[k]
            .iter()
            .copied()
            .filter(|&c| self.joints[c].frame && self.joints[c].tag == tag)
            .collect()
    }

    pub fn subtrees(&self) -> &[SubtreeInfo] {
        &self.subtrees
    }

    pub fn subtree(&self, tag: SubtreeTag) -> Option<&SubtreeInfo> {
        self.subtrees.iter().find(|s| s.tag == tag)
    }

    /// Joints that are both a distal body joint and the root of another
    /// sub-tree (wrists and head on a whole-body tree).
    pub fn conflict_joints(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .subtrees
            .iter()
            .filter(|s| s.tag != self.joints[s.root].tag)
            .map(|s| s.root)
            .collect();
        out.sort_unstable();
        out
    }

    pub(crate) fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

/// Template joint positions `t_k`, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct RestPose {
    t: Vec<Vec3>,
}

impl RestPose {
    pub fn new(tree: &KinematicTree, t: Vec<Vec3>) -> Result<Self> {
        tree.check_len("rest pose", t.len())?;
        for (k, p) in t.iter().enumerate() {
            if !all_finite(p) {
                return Err(Error::NonFinite(format!("rest position of joint {k}")));
            }
            if let Some(pa) = tree.parent(k) {
                if (p - t[pa]).norm() <= EPS_NORM {
                    return Err(Error::InvalidTree(format!(
                        "zero-length template bone at joint {k} ({})",
                        tree.name(k)
                    )));
                }
            }
        }
        Ok(RestPose { t })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `t_k − t_pa(k)`.
    pub fn bone(&self, tree: &KinematicTree, k: usize) -> Result<Vec3> {
        match tree.parent(k) {
            None => Err(Error::RootHasNoBone(k)),
            Some(p) => Ok(self.t[k] - self.t[p]),
        }
    }

    pub fn as_pose(&self) -> Pose {
        Pose { q: self.t.clone() }
    }
}

/// Relative rotations `R_{pa(k),k}`; entry 0 is the global root rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationSet {
    pub rel: Vec<Rot3>,
}

impl RotationSet {
    pub fn identity(k: usize) -> Self {
        RotationSet {
            rel: vec![Rot3::identity(); k],
        }
    }

    pub fn new(rel: Vec<Rot3>) -> Result<Self> {
        if let Some(k) = rel.iter().position(|r| !r.is_valid()) {
            return Err(Error::Degenerate(format!("rotation {k} is not in SO(3)")));
        }
        Ok(RotationSet { rel })
    }

    pub fn len(&self) -> usize {
        self.rel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel.is_empty()
    }

    /// Global rotations `R_k` obtained by chaining along the tree.
    pub fn globals(&self, tree: &KinematicTree) -> Vec<Rot3> {
        let mut g: Vec<Rot3> = Vec::with_capacity(self.rel.len());
        for k in 0..self.rel.len() {
            let r = match tree.parent(k) {
                None => self.rel[k],
                Some(p) => g[p].compose(&self.rel[k]),
            };
            g.push(r);
        }
        g
    }
}

/// Joint positions, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub q: Vec<Vec3>,
}

impl Pose {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(all_finite)
    }
}

/// Forward kinematics. Returns the posed joints and the global rotations.
pub fn fk(tree: &KinematicTree, rest: &RestPose, rots: &RotationSet) -> Result<(Pose, Vec<Rot3>)> {
    tree.check_len("rest pose", rest.len())?;
    tree.check_len("rotation set", rots.len())?;
    let t = rest.positions();
    let globals = rots.globals(tree);
    let mut q = Vec::with_capacity(t.len());
    for k in 0..t.len() {
        let pos = match tree.parent(k) {
            None => t[k],
            Some(p) => globals[k].apply(&(t[k] - t[p])) + q[p],
        };
        q.push(pos);
    }
    Ok((Pose { q }, globals))
}

/// Linear rest-pose model: `mean + Σ β_i·shape_i + Σ ψ_j·expr_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonShapeBasis {
    pub mean: RestPose,
    pub shape_dirs: Vec<Vec<Vec3>>,
    pub expr_dirs: Vec<Vec<Vec3>>,
}

impl SkeletonShapeBasis {
    pub fn new(
        tree: &KinematicTree,
        mean: RestPose,
        shape_dirs: Vec<Vec<Vec3>>,
        expr_dirs: Vec<Vec<Vec3>>,
    ) -> Result<Self> {
        tree.check_len("shape basis mean", mean.len())?;
        for d in shape_dirs.iter().chain(&expr_dirs) {
            tree.check_len("shape basis direction", d.len())?;
        }
        Ok(SkeletonShapeBasis {
            mean,
            shape_dirs,
            expr_dirs,
        })
    }

    pub fn eval(&self, tree: &KinematicTree, beta: &[f64], psi: &[f64]) -> Result<RestPose> {
        eval_shape(tree, self, beta, psi)
    }
}

pub fn eval_shape(
    tree: &KinematicTree,
    basis: &SkeletonShapeBasis,
    beta: &[f64],
    psi: &[f64],
) -> Result<RestPose> {
    if beta.len() != basis.shape_dirs.len() {
        return Err(Error::DimensionMismatch {
            what: "shape coefficients",
            expected: basis.shape_dirs.len(),
            got: beta.len(),
        });
    }
    if psi.len() != basis.expr_dirs.len() {
        return Err(Error::DimensionMismatch {
            what: "expression coefficients",
            expected: basis.expr_dirs.len(),
            got: psi.len(),
        });
    }
    let mut t = basis.mean.positions().to_vec();
    for (c, dir) in beta
        .iter()
        .zip(&basis.shape_dirs)
        .chain(psi.iter().zip(&basis.expr_dirs))
    {
        for (tk, dk) in t.iter_mut().zip(dir) {
            *tk += dk * *c;
        }
    }
    RestPose::new(tree, t)
}

/// Skeletons shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinTree {
    /// 24-joint body, pelvis root.
    Body24,
    /// 16-joint left hand, wrist root.
    Hand16,
    /// 55 body/face/hand joints plus the two mouth markers.
    WholeBody,
}

impl BuiltinTree {
    pub const ALL: [BuiltinTree; 3] = [
        BuiltinTree::Body24,
        BuiltinTree::Hand16,
        BuiltinTree::WholeBody,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            BuiltinTree::Body24 => "body24",
            BuiltinTree::Hand16 => "hand16",
            BuiltinTree::WholeBody => "wholebody",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.id() == id)
    }

    pub fn source(&self) -> &'static str {
        match self {
            BuiltinTree::Body24 => include_str!("../data/body24.json"),
            BuiltinTree::Hand16 => include_str!("../data/hand16.json"),
            BuiltinTree::WholeBody => include_str!("../data/wholebody.json"),
        }
    }

    pub fn load(&self) -> (KinematicTree, RestPose) {
        crate::io::parse_skeleton(self.source()).expect("shipped skeleton is valid")
    }

    /// Linear shape basis for the tree, when one is shipped.
    pub fn shape_basis(&self) -> Option<SkeletonShapeBasis> {
        let src = match self {
            BuiltinTree::Body24 => include_str!("../data/body24_shape.json"),
            BuiltinTree::WholeBody => include_str!("../data/wholebody_shape.json"),
            BuiltinTree::Hand16 => return None,
        };
        let (tree, rest) = self.load();
        Some(
            crate::io::parse_shape_basis(src, &tree, |_| Ok(rest.clone()))
                .expect("shipped shape basis is valid"),
        )
    }
}

pub fn builtin_trees() -> Vec<(BuiltinTree, KinematicTree, RestPose)> {
    BuiltinTree::ALL
        .into_iter()
        .map(|b| {
            let (t, r) = b.load();
            (b, t, r)
        })
        .collect()
}
