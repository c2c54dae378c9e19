//! Analytical inverse kinematics for articulated skeletons.
//!
//! Joint rotations are recovered from 3D joint positions plus one twist
//! angle per bone: the swing that aims each template bone at its target is
//! closed-form, and the twist about the bone is supplied. On top of that the
//! crate provides
//!
//! * naive and adaptive tree solvers ([`hybrik`]),
//! * a whole-body solver that merges body, hand and face sub-trees with an
//!   analytical backward update ([`hybrikx`]),
//! * perspective back-projection and iterative camera-scale estimation
//!   ([`camera`]),
//! * synthetic benchmarks and brute-force oracles ([`harness`]).
//!
//! ```
//! use kinsolve::{fk, solve_adaptive, BuiltinTree, RotationSet, TargetPose, TwistAngles};
//!
//! let (tree, rest) = BuiltinTree::Body24.load();
//! let (pose, _) = fk(&tree, &rest, &RotationSet::identity(tree.len())).unwrap();
//! let report = solve_adaptive(&tree, &rest, &TargetPose::from(&pose), &TwistAngles::zeros(tree.len())).unwrap();
//! assert!((report.recon.q[10] - pose.q[10]).norm() < 1e-12);
//! ```

pub mod camera;
pub mod error;
pub mod harness;
pub mod hybrik;
pub mod hybrikx;
pub mod io;
pub mod linalg;
pub mod skeleton;
pub mod so3;

pub use camera::{
    backproject, ice, ice_with, project, refit_scale, CameraScale, IceResult, IceUpdate, Pose2p5D,
    PoseSolver,
};
pub use error::{Error, Result};
pub use hybrik::{
    error_decomposition, register_root, solve_adaptive, solve_naive, RegistrationProblem,
    SolveMode, SolveReport, TargetPose, TwistAngles,
};
pub use hybrikx::{
    backward_update, jaw_swing, resolve_conflict, solve_wholebody, BackwardUpdate,
    BackwardUpdateProblem, MarkerPair, SubtreeSplit,
};
pub use linalg::Vec3;
pub use skeleton::{fk, BuiltinTree, KinematicTree, Pose, RestPose, RotationSet, SubtreeTag};
pub use so3::{extract_twist, swing_between, twist_about, Rot3, TwistAngle};
