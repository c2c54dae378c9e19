//! Body-level inverse kinematics.
//!
//! Both solvers walk the tree in topological order. At joint `k` the target
//! bone is expressed in the parent's frame, the swing aims the template bone
//! along it and the supplied twist angle fixes the rotation about the bone:
//!
//! ```text
//! R_pa(k),k = swing(t⃗_k → R_pa(k)ᵀ·v_k) · twist(t⃗_k, φ_k)
//! naive:     v_k = p_k − p_pa(k)
//! adaptive:  v_k = p_k − q_pa(k)
//! ```
//!
//! The residual `ε_k = v_k − R_k t⃗_k` is what the swing could not absorb
//! (a bone-length mismatch). Naive residuals accumulate down the tree;
//! adaptive residuals do not.
//!
//! The root joint is anchored at its template position `t_0`, so targets are
//! expected in the same frame as the rest pose. The root rotation comes from
//! registering the root's frame children (see [`register_root`]).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, svd3, Mat3, Vec3, RANK_TOL};
use crate::skeleton::{fk, KinematicTree, Pose, RestPose, RotationSet, SubtreeTag};
use crate::so3::{swing_between, twist_about, Rot3, TwistAngle, EPS_NORM};

/// Desired joint positions `p_k`, one per tree joint.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPose {
    pub p: Vec<Vec3>,
}

impl TargetPose {
    pub fn new(p: Vec<Vec3>) -> Result<Self> {
        if let Some(k) = p.iter().position(|v| !all_finite(v)) {
            return Err(Error::NonFinite(format!("target joint {k}")));
        }
        Ok(TargetPose { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

impl From<&Pose> for TargetPose {
    fn from(pose: &Pose) -> Self {
        TargetPose { p: pose.q.clone() }
    }
}

/// One twist angle per joint. Entry 0 belongs to the root and is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistAngles {
    phi: Vec<TwistAngle>,
}

impl TwistAngles {
    pub fn zeros(k: usize) -> Self {
        TwistAngles {
            phi: vec![TwistAngle::ZERO; k],
        }
    }

    /// From a full per-joint vector (root entry included and ignored).
    pub fn new(phi: Vec<TwistAngle>) -> Self {
        TwistAngles { phi }
    }

    /// From the angles of joints `1..K`.
    pub fn from_non_root(phi: Vec<TwistAngle>) -> Self {
        let mut all = Vec::with_capacity(phi.len() + 1);
        all.push(TwistAngle::ZERO);
        all.extend(phi);
        TwistAngles { phi: all }
    }

    pub fn from_radians(phi: &[f64]) -> Self {
        TwistAngles::new(phi.iter().map(|&a| TwistAngle::from_radians(a)).collect())
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, k: usize) -> TwistAngle {
        self.phi[k]
    }

    pub fn set(&mut self, k: usize, phi: TwistAngle) {
        self.phi[k] = phi;
    }

    pub fn non_root(&self) -> &[TwistAngle] {
        self.phi.get(1..).unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Naive,
    Adaptive,
    Wholebody,
}

impl SolveMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveMode::Naive => "naive",
            SolveMode::Adaptive => "adaptive",
            SolveMode::Wholebody => "wholebody",
        }
    }
}

/// Outcome of reconciling one conflict joint during a whole-body solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConflictStatus {
    pub joint: usize,
    pub parent: usize,
    pub feasible: bool,
    /// Largest bone-length violation left by the backward update, meters.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub rots: RotationSet,
    pub globals: Vec<Rot3>,
    pub recon: Pose,
    /// Per-joint residual vectors; entry 0 is `p_0 − q_0`.
    pub eps: Vec<Vec3>,
    /// Empty for the body-level solvers.
    pub conflicts: Vec<ConflictStatus>,
}

/// Point sets for the root-rotation fit. Both sides are root-relative.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationProblem {
    pub template: Vec<Vec3>,
    pub target: Vec<Vec3>,
}

/// Rotation minimizing `Σ ‖target_i − R·template_i‖²` over SO(3).
///
/// With `H = Σ template_i target_iᵀ = U Λ Vᵀ` the optimum is
/// `V diag(1, 1, det(V Uᵀ)) Uᵀ`. The sign correction only matters for
/// noisy or planar inputs, where plain `V Uᵀ` can be a reflection.
pub fn register_root(prob: &RegistrationProblem) -> Result<Rot3> {
    if prob.template.len() != prob.target.len() {
        return Err(Error::DimensionMismatch {
            what: "registration target",
            expected: prob.template.len(),
            got: prob.target.len(),
        });
    }
    if prob.template.len() < 2 {
        return Err(Error::DegenerateTriplet);
    }
    let mut h = Mat3::zeros();
    for (t, p) in prob.template.iter().zip(&prob.target) {
        if !all_finite(t) || !all_finite(p) {
            return Err(Error::NonFinite("registration point".into()));
        }
        h += t * p.transpose();
    }
    let svd = svd3(&h);
    if !(svd.s[0] > 0.0) || svd.s[1] <= RANK_TOL * svd.s[0] {
        return Err(Error::DegenerateTriplet);
    }
    let vut = svd.v * svd.u.transpose();
    let d = vut.determinant().signum();
    let r = svd.v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * svd.u.transpose();
    Ok(Rot3::from_matrix_unchecked(r))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Chain {
    Naive,
    Adaptive,
}

/// Where a pass starts: the joint it hangs from, that joint's position and
/// its global rotation.
pub(crate) struct Anchor {
    pub root: usize,
    pub pos: Vec3,
    pub rot: Rot3,
}

/// Working arrays of a solve, indexed by joint.
#[derive(Clone, Debug)]
pub(crate) struct PassState {
    pub rel: Vec<Rot3>,
    pub glob: Vec<Rot3>,
    pub q: Vec<Vec3>,
    pub eps: Vec<Vec3>,
}

impl PassState {
    pub fn new(k: usize) -> Self {
        PassState {
            rel: vec![Rot3::identity(); k],
            glob: vec![Rot3::identity(); k],
            q: vec![Vec3::zeros(); k],
            eps: vec![Vec3::zeros(); k],
        }
    }
}

/// Global rotation of `root` fitted to its frame children, or `None` when
/// it has fewer than two of them.
pub(crate) fn frame_rotation(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &[Vec3],
    root: usize,
    root_target: Vec3,
    tag: SubtreeTag,
) -> Result<Option<Rot3>> {
    let frames = tree.frame_children(root, tag);
    if frames.len() < 2 {
        return Ok(None);
    }
    let t = rest.positions();
    let prob = RegistrationProblem {
        template: frames.iter().map(|&f| t[f] - t[root]).collect(),
        target: frames.iter().map(|&f| target[f] - root_target).collect(),
    };
    register_root(&prob).map(Some)
}

/// Frame children of a registered root move rigidly with the registered
/// frame, keeping only their own twist.
pub(crate) fn rigid_frame_children(
    tree: &KinematicTree,
    rest: &RestPose,
    twists: &TwistAngles,
    root: usize,
    tag: SubtreeTag,
) -> Result<Vec<(usize, Rot3)>> {
    let t = rest.positions();
    tree.frame_children(root, tag)
        .into_iter()
        .map(|f| Ok((f, twist_about(&(t[f] - t[root]), twists.get(f))?)))
        .collect()
}

pub(crate) fn lookup(pins: &[(usize, Rot3)], k: usize) -> Option<Rot3> {
    pins.iter().find(|(j, _)| *j == k).map(|(_, r)| *r)
}

/// `swing(t⃗ → local) · twist(t⃗, φ)`.
pub(crate) fn aim(bone: &Vec3, local: &Vec3, phi: TwistAngle) -> Result<Rot3> {
    Ok(swing_between(bone, local)?.compose(&twist_about(bone, phi)?))
}

/// Solves `members` (topologically ordered, each hanging from the anchor or
/// an earlier member). `fixed` may pin a joint's relative rotation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_pass(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &[Vec3],
    twists: &TwistAngles,
    chain: Chain,
    anchor: &Anchor,
    members: &[usize],
    fixed: &dyn Fn(usize) -> Option<Rot3>,
    st: &mut PassState,
) -> Result<()> {
    let t = rest.positions();
    st.glob[anchor.root] = anchor.rot;
    st.q[anchor.root] = anchor.pos;
    st.eps[anchor.root] = target[anchor.root] - anchor.pos;
    for &k in members {
        let pa = tree.parent(k).ok_or(Error::RootHasNoBone(k))?;
        let bone = t[k] - t[pa];
        let v = match chain {
            Chain::Naive => target[k] - target[pa],
            Chain::Adaptive => target[k] - st.q[pa],
        };
        let rel = match fixed(k) {
            Some(r) => r,
            None => {
                if v.norm() < EPS_NORM {
                    return Err(Error::ZeroBone {
                        joint: k,
                        name: tree.name(k).to_string(),
                    });
                }
                let local = st.glob[pa].transpose().apply(&v);
                aim(&bone, &local, twists.get(k))?
            }
        };
        st.rel[k] = rel;
        st.glob[k] = st.glob[pa].compose(&rel);
        let placed = st.glob[k].apply(&bone);
        st.q[k] = st.q[pa] + placed;
        st.eps[k] = v - placed;
    }
    Ok(())
}

pub(crate) fn check_inputs(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
) -> Result<()> {
    tree.check_len("rest pose", rest.len())?;
    tree.check_len("target", target.len())?;
    tree.check_len("twist angles", twists.len())?;
    if let Some(k) = target.p.iter().position(|v| !all_finite(v)) {
        return Err(Error::NonFinite(format!("target joint {k}")));
    }
    Ok(())
}

fn solve_chain(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
    chain: Chain,
) -> Result<SolveReport> {
    check_inputs(tree, rest, target, twists)?;
    let root = tree.root();
    let root_tag = tree.tag(root);
    let rot = frame_rotation(tree, rest, &target.p, root, target.p[root], root_tag)?
        .unwrap_or_else(Rot3::identity);
    let anchor = Anchor {
        root,
        pos: rest.positions()[root],
        rot,
    };
    let members: Vec<usize> = (1..tree.len()).collect();
    let mut st = PassState::new(tree.len());
    st.rel[root] = rot;
    run_pass(
        tree,
        rest,
        &target.p,
        twists,
        chain,
        &anchor,
        &members,
        &|_| None,
        &mut st,
    )?;
    let rots = RotationSet { rel: st.rel };
    let (recon, globals) = fk(tree, rest, &rots)?;
    Ok(SolveReport {
        mode: match chain {
            Chain::Naive => SolveMode::Naive,
            Chain::Adaptive => SolveMode::Adaptive,
        },
        rots,
        globals,
        recon,
        eps: st.eps,
        conflicts: Vec::new(),
    })
}

/// Each bone is aimed at the target bone `p_k − p_pa(k)`.
pub fn solve_naive(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
) -> Result<SolveReport> {
    solve_chain(tree, rest, target, twists, Chain::Naive)
}

/// Each bone is aimed from the already reconstructed parent, `p_k − q_pa(k)`.
pub fn solve_adaptive(
    tree: &KinematicTree,
    rest: &RestPose,
    target: &TargetPose,
    twists: &TwistAngles,
) -> Result<SolveReport> {
    solve_chain(tree, rest, target, twists, Chain::Adaptive)
}

/// Residual of one joint split into its own term and the running sum over
/// the joint and its ancestors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTerms {
    pub accumulated: Vec3,
    pub local: Vec3,
}

pub fn error_decomposition(report: &SolveReport, tree: &KinematicTree) -> Vec<ResidualTerms> {
    let mut out: Vec<ResidualTerms> = Vec::with_capacity(report.eps.len());
    for (k, e) in report.eps.iter().enumerate() {
        let acc = match tree.parent(k) {
            None => *e,
            Some(p) => out[p].accumulated + e,
        };
        out.push(ResidualTerms {
            accumulated: acc,
            local: *e,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::BuiltinTree;
    use crate::so3::{extract_twist, AxisAngle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rot(rng: &mut ChaCha8Rng, max_angle: f64) -> Rot3 {
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        Rot3::from_axis_angle(&AxisAngle::new(axis, rng.gen_range(0.0..max_angle)).unwrap())
    }

    fn random_problem(
        tree: &KinematicTree,
        rest: &RestPose,
        rng: &mut ChaCha8Rng,
    ) -> (RotationSet, TwistAngles, Pose) {
        let mut rel: Vec<Rot3> = (0..tree.len()).map(|_| random_rot(rng, 0.8)).collect();
        rel[0] = random_rot(rng, 3.0);
        // frame children must be rigid with the root for an exact round trip
        for &f in &tree.frame_children(0, tree.tag(0)) {
            let bone = rest.bone(tree, f).unwrap();
            rel[f] = twist_about(&bone, rng.gen_range(-0.5..0.5).into()).unwrap();
        }
        let rots = RotationSet { rel };
        let mut tw = TwistAngles::zeros(tree.len());
        for k in 1..tree.len() {
            let bone = rest.bone(tree, k).unwrap();
            tw.set(k, extract_twist(&rots.rel[k], &bone).unwrap().1);
        }
        let (pose, _) = fk(tree, rest, &rots).unwrap();
        (rots, tw, pose)
    }

    fn rz(a: f64) -> Rot3 {
        twist_about(&Vec3::z(), a.into()).unwrap()
    }

    #[test]
    fn registration_identity_and_rotation() {
        let template = vec![
            Vec3::new(0.0, 0.11, -0.02),
            Vec3::new(0.06, -0.09, 0.0),
            Vec3::new(-0.06, -0.09, 0.0),
        ];
        let same = RegistrationProblem {
            template: template.clone(),
            target: template.clone(),
        };
        assert!(
            register_root(&same)
                .unwrap()
                .frobenius_to(&Rot3::identity())
                < 1e-12
        );
        let g = rz(std::f64::consts::FRAC_PI_2);
        let turned = RegistrationProblem {
            target: template.iter().map(|v| g.apply(v)).collect(),
            template,
        };
        assert!(register_root(&turned).unwrap().frobenius_to(&g) < 1e-9);
    }

    #[test]
    fn registration_planar_points_give_proper_rotation() {
        // two points: rank-2 correlation, the third axis must be completed
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = random_rot(&mut rng, 3.1);
            let template = vec![Vec3::new(0.03, 0.0, 0.1), Vec3::new(-0.03, 0.0, 0.1)];
            let prob = RegistrationProblem {
                target: template.iter().map(|v| g.apply(v)).collect(),
                template,
            };
            let r = register_root(&prob).unwrap();
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            for (t, p) in prob.template.iter().zip(&prob.target) {
                assert!((r.apply(t) - p).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn registration_rejects_collinear_points() {
        let prob = RegistrationProblem {
            template: vec![Vec3::x(), Vec3::x() * 2.0, -Vec3::x()],
            target: vec![Vec3::y(), Vec3::y() * 2.0, -Vec3::y()],
        };
        assert!(matches!(
            register_root(&prob),
            Err(Error::DegenerateTriplet)
        ));
    }

    #[test]
    fn exact_round_trip_both_solvers() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (rots, tw, pose) = random_problem(&tree, &rest, &mut rng);
            let target = TargetPose::from(&pose);
            for report in [
                solve_naive(&tree, &rest, &target, &tw).unwrap(),
                solve_adaptive(&tree, &rest, &target, &tw).unwrap(),
            ] {
                for k in 0..tree.len() {
                    assert!(
                        report.rots.rel[k].frobenius_to(&rots.rel[k]) < 1e-9,
                        "joint {k}"
                    );
                    assert!((report.recon.q[k] - pose.q[k]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_jitter_gives_zero_decomposition() {
        let (tree, rest) = BuiltinTree::Hand16.load();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, tw, pose) = random_problem(&tree, &rest, &mut rng);
        let report = solve_naive(&tree, &rest, &TargetPose::from(&pose), &tw).unwrap();
        for terms in error_decomposition(&report, &tree) {
            assert!(terms.accumulated.norm() < 1e-12 && terms.local.norm() < 1e-12);
        }
    }

    #[test]
    fn naive_shifted_limb_passes_its_error_down_unchanged() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, tw, pose) = random_problem(&tree, &rest, &mut rng);
        let j = tree.index_of("left_elbow").unwrap();
        let shift = Vec3::new(0.012, -0.007, 0.02);
        let mut target = TargetPose::from(&pose);
        for k in 0..tree.len() {
            if k == j || tree.is_ancestor(j, k) {
                target.p[k] += shift;
            }
        }
        let report = solve_naive(&tree, &rest, &target, &tw).unwrap();
        let dec = error_decomposition(&report, &tree);
        let ej = dec[j].local;
        assert!(ej.norm() > 1e-3);
        for k in 0..tree.len() {
            if k == j || tree.is_ancestor(j, k) {
                assert!((dec[k].accumulated - ej).norm() < 1e-12, "joint {k}");
                assert!((target.p[k] - report.recon.q[k] - ej).norm() < 1e-12);
            } else {
                assert!(dec[k].accumulated.norm() < 1e-12, "joint {k}");
            }
        }
    }

    #[test]
    fn naive_single_joint_jitter_accumulates_below_the_child() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, tw, pose) = random_problem(&tree, &rest, &mut rng);
        let j = tree.index_of("left_elbow").unwrap();
        let c = tree.index_of("left_wrist").unwrap();
        let mut target = TargetPose::from(&pose);
        target.p[j] += Vec3::new(0.012, -0.007, 0.02);
        let report = solve_naive(&tree, &rest, &target, &tw).unwrap();
        let dec = error_decomposition(&report, &tree);
        let carried = dec[j].local + dec[c].local;
        for k in 0..tree.len() {
            let expect = if k == j {
                dec[j].local
            } else if k == c || tree.is_ancestor(c, k) {
                carried
            } else {
                Vec3::zeros()
            };
            assert!((dec[k].accumulated - expect).norm() < 1e-12, "joint {k}");
            assert!((target.p[k] - report.recon.q[k] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn adaptive_single_joint_jitter_does_not_accumulate() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, tw, pose) = random_problem(&tree, &rest, &mut rng);
        let j = tree.index_of("left_elbow").unwrap();
        let mut target = TargetPose::from(&pose);
        target.p[j] += Vec3::new(0.012, -0.007, 0.02);
        let report = solve_adaptive(&tree, &rest, &target, &tw).unwrap();
        let dec = error_decomposition(&report, &tree);
        for k in 0..tree.len() {
            if k != j && !tree.is_ancestor(j, k) {
                assert!(dec[k].local.norm() < 1e-12, "joint {k}");
            }
        }
        let wrist = tree.index_of("left_wrist").unwrap();
        let hand = tree.index_of("left_hand").unwrap();
        // the wrist re-aims from the displaced elbow; from there on each
        // residual is bounded by the displacement of its parent
        assert!(dec[wrist].local.norm() > 0.0);
        assert!(dec[hand].local.norm() <= dec[wrist].local.norm() + 1e-15);
        for k in 0..tree.len() {
            assert!((dec[k].local - (target.p[k] - report.recon.q[k])).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_bone_is_reported() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let mut target = TargetPose::from(&rest.as_pose());
        target.p[4] = target.p[1];
        let tw = TwistAngles::zeros(tree.len());
        assert!(matches!(
            solve_naive(&tree, &rest, &target, &tw),
            Err(Error::ZeroBone { joint: 4, .. })
        ));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let (tree, rest) = BuiltinTree::Body24.load();
        let target = TargetPose::new(vec![Vec3::zeros(); 3]).unwrap();
        let tw = TwistAngles::zeros(tree.len());
        assert!(matches!(
            solve_adaptive(&tree, &rest, &target, &tw),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
