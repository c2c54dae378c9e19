//! Rotation algebra for twist-and-swing decomposition.
//!
//! Rotations are stored as 3×3 matrices. A rotation `R` acting on a template
//! bone `t` splits as `R = R_sw · R_tw`: the twist spins about `t` itself and
//! the swing carries the direction of `t` onto a target direction along the
//! great circle (axis perpendicular to both).

use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{any_perpendicular, Mat3, Vec3};

/// Norms below this are treated as zero.
pub const EPS_NORM: f64 = 1e-10;
/// Tolerance for the orthogonality and determinant checks on `Rot3`.
pub const ROT_TOL: f64 = 1e-9;
/// Relative `‖t × p‖` below which two directions count as (anti)parallel.
pub const PARALLEL_EPS: f64 = 1e-8;
/// Below this relative sine an obtuse swing is built by way of a half turn;
/// the direct Rodrigues form loses accuracy like `ε / sin α` there.
const OBTUSE_BAND: f64 = 1e-4;

#[derive(Clone, Copy, PartialEq)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps a matrix without checking it.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Wraps a matrix after checking orthogonality and `det = +1`.
    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        let r = Rot3(m);
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("rotation matrix".into()));
        }
        if r.orthogonality_error() >= ROT_TOL || (m.determinant() - 1.0).abs() >= ROT_TOL {
            return Err(Error::Degenerate(format!(
                "matrix is not a rotation (‖RᵀR − I‖ = {:.3e}, det = {:.12})",
                r.orthogonality_error(),
                m.determinant()
            )));
        }
        Ok(r)
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::try_from_matrix(Mat3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `self · other`.
    pub fn compose(&self, other: &Rot3) -> Rot3 {
        Rot3(self.0 * other.0)
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn is_valid(&self) -> bool {
        self.orthogonality_error() < ROT_TOL && (self.0.determinant() - 1.0).abs() < ROT_TOL
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = vee_antisym(&self.0);
        let c = (self.0.trace() - 1.0) * 0.5;
        v.norm().atan2(c)
    }

    /// Geodesic distance to another rotation, radians.
    pub fn angle_to(&self, other: &Rot3) -> f64 {
        self.transpose().compose(other).angle()
    }

    /// Frobenius distance between the matrices.
    pub fn frobenius_to(&self, other: &Rot3) -> f64 {
        (self.0 - other.0).norm()
    }

    pub fn from_axis_angle(aa: &AxisAngle) -> Self {
        rodrigues(&aa.axis, aa.angle.sin(), aa.angle.cos())
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        let angle = self.angle();
        let v = vee_antisym(&self.0);
        let axis = if angle < 1e-12 {
            Vec3::z()
        } else if angle < std::f64::consts::PI - 1e-6 {
            v.normalize()
        } else {
            // near a half turn R + I ≈ 2 n nᵀ
            let s = self.0 + Mat3::identity();
            let col = (0..3)
                .map(|i| s.column(i).into_owned())
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap();
            let mut n = col.normalize();
            if n.dot(&v) < 0.0 {
                n = -n;
            }
            n
        };
        AxisAngle { axis, angle }
    }

    /// Unit quaternion `[w, x, y, z]`; I/O helper only.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let aa = self.to_axis_angle();
        let (s, c) = (aa.angle * 0.5).sin_cos();
        [c, aa.axis.x * s, aa.axis.y * s, aa.axis.z * s]
    }

    /// From a (not necessarily normalized) quaternion `[w, x, y, z]`.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < EPS_NORM {
            return Err(Error::ZeroVector {
                what: "quaternion",
                eps: EPS_NORM,
            });
        }
        let [w, x, y, z] = q.map(|c| c / n);
        Ok(Rot3(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )))
    }
}

impl Default for Rot3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Rot3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rot3({:?})", self.to_row_major())
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        self.compose(&rhs)
    }
}

impl Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.apply(&rhs)
    }
}

impl Serialize for Rot3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rot3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Rot3::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

impl AxisAngle {
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if n < EPS_NORM {
            return Err(Error::ZeroVector {
                what: "rotation axis",
                eps: EPS_NORM,
            });
        }
        Ok(AxisAngle {
            axis: axis / n,
            angle,
        })
    }
}

/// A twist angle kept in its `(cos φ, sin φ)` encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwistAngle {
    cos: f64,
    sin: f64,
}

impl TwistAngle {
    pub const ZERO: TwistAngle = TwistAngle { cos: 1.0, sin: 0.0 };

    pub fn from_radians(phi: f64) -> Self {
        let (sin, cos) = phi.sin_cos();
        TwistAngle { cos, sin }
    }

    /// Accepts any non-zero pair and renormalizes it.
    pub fn from_cos_sin(cos: f64, sin: f64) -> Result<Self> {
        let n = cos.hypot(sin);
        if !(n >= EPS_NORM) {
            return Err(Error::ZeroVector {
                what: "twist (cos, sin) pair",
                eps: EPS_NORM,
            });
        }
        Ok(TwistAngle {
            cos: cos / n,
            sin: sin / n,
        })
    }

    pub fn radians(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    pub fn cos_sin(&self) -> (f64, f64) {
        (self.cos, self.sin)
    }
}

impl Default for TwistAngle {
    fn default() -> Self {
        Self::ZERO
    }
}

impl From<f64> for TwistAngle {
    fn from(phi: f64) -> Self {
        TwistAngle::from_radians(phi)
    }
}

pub fn angle_encode(phi: f64) -> (f64, f64) {
    TwistAngle::from_radians(phi).cos_sin()
}

pub fn angle_decode(cos: f64, sin: f64) -> Result<f64> {
    TwistAngle::from_cos_sin(cos, sin).map(|t| t.radians())
}

/// `[v]×`, so that `skew(v) * w == v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee_antisym(m: &Mat3) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Rodrigues' formula for a unit axis.
fn rodrigues(axis: &Vec3, sin: f64, cos: f64) -> Rot3 {
    let k = skew(axis);
    Rot3(Mat3::identity() + k * sin + k * k * (1.0 - cos))
}

fn unit(v: &Vec3, what: &'static str) -> Result<Vec3> {
    let n = v.norm();
    if !n.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    if n < EPS_NORM {
        return Err(Error::ZeroVector {
            what,
            eps: EPS_NORM,
        });
    }
    Ok(v / n)
}

/// Swing rotation carrying the direction of `t` onto the direction of `p`.
///
/// Only directions matter; the norms may differ. For exactly antiparallel
/// inputs the axis is the coordinate axis least aligned with `t`
/// (orthogonalized) and the angle is π.
pub fn swing_between(t: &Vec3, p: &Vec3) -> Result<Rot3> {
    let th = unit(t, "template vector")?;
    let ph = unit(p, "target vector")?;
    let v = th.cross(&ph);
    let s = v.norm();
    let c = th.dot(&ph);
    if c >= 0.0 {
        // I + [v]× + [v]×² / (1 + c): no division by |v|, exact down to v = 0
        let k = skew(&v);
        return Ok(Rot3(Mat3::identity() + k + k * k / (1.0 + c)));
    }
    if s >= OBTUSE_BAND {
        return Ok(rodrigues(&(v / s), s, c));
    }
    // Nearly opposite: half turn about a fixed perpendicular, then the small
    // remaining swing from -t̂ to p̂.
    let half = rodrigues(&any_perpendicular(&th), 0.0, -1.0);
    let rest = swing_between(&(-th), &ph)?;
    Ok(rest.compose(&half))
}

/// Rotation by `phi` about the axis `t`.
pub fn twist_about(t: &Vec3, phi: TwistAngle) -> Result<Rot3> {
    let axis = unit(t, "twist axis")?;
    let (cos, sin) = phi.cos_sin();
    Ok(rodrigues(&axis, sin, cos))
}

/// `R = R_sw · R_tw`.
pub fn compose_twist_swing(swing: &Rot3, twist: &Rot3) -> Rot3 {
    swing.compose(twist)
}

/// Splits `r` into a swing and a twist about `t`.
///
/// The swing is `swing_between(t, r·t)`; the twist angle is read off the
/// remainder `swingᵀ · r`, which fixes `t`.
pub fn extract_twist(r: &Rot3, t: &Vec3) -> Result<(Rot3, TwistAngle)> {
    let th = unit(t, "twist axis")?;
    let moved = r.apply(&th);
    if th.cross(&moved).norm() < PARALLEL_EPS && th.dot(&moved) < 0.0 {
        return Err(Error::Degenerate(
            "rotation maps the axis onto its opposite; swing axis undefined".into(),
        ));
    }
    let swing = swing_between(&th, &moved)?;
    let tw = swing.transpose().compose(r);
    let sin = vee_antisym(tw.matrix()).dot(&th);
    let cos = (tw.matrix().trace() - 1.0) * 0.5;
    Ok((swing, TwistAngle::from_cos_sin(cos, sin)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &Rot3, b: &Mat3, tol: f64) -> bool {
        (a.matrix() - b).norm() < tol
    }

    fn rz(a: f64) -> Rot3 {
        twist_about(&Vec3::z(), a.into()).unwrap()
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::z()) * Vec3::x(), Vec3::y());
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
        assert_eq!(skew(&v).transpose(), -skew(&v));
    }

    #[test]
    fn swing_examples() {
        let r = swing_between(&Vec3::x(), &Vec3::new(0.0, 2.0, 0.0)).unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(close(&r, &expected, 1e-15));

        let r = swing_between(&Vec3::x(), &Vec3::new(3.0, 0.0, 0.0)).unwrap();
        assert_eq!(*r.matrix(), Mat3::identity());

        let t = Vec3::new(1.0, 1.0, 0.0);
        let p = Vec3::new(-1.0, 1.0, 0.0);
        let r = swing_between(&t, &p).unwrap();
        let aa = r.to_axis_angle();
        assert_abs_diff_eq!(aa.angle, FRAC_PI_2, epsilon = 1e-12);
        assert!((aa.axis - Vec3::z()).norm() < 1e-12);
        assert!((r.apply(&t.normalize()) - p.normalize()).norm() < 1e-12);
    }

    #[test]
    fn swing_rejects_zero_vectors() {
        assert!(matches!(
            swing_between(&Vec3::zeros(), &Vec3::x()),
            Err(Error::ZeroVector { .. })
        ));
        assert!(matches!(
            swing_between(&Vec3::x(), &Vec3::new(0.0, 1e-11, 0.0)),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn antiparallel_swing_is_half_turn_about_fixed_axis() {
        let t = Vec3::new(0.0, 0.0, 2.0);
        let r = swing_between(&t, &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(r.is_valid());
        assert_abs_diff_eq!(r.angle(), PI, epsilon = 1e-12);
        // least aligned axis with z is x
        let aa = r.to_axis_angle();
        assert!(aa.axis.cross(&Vec3::x()).norm() < 1e-12);
        assert!((r.apply(&Vec3::z()) + Vec3::z()).norm() < 1e-15);
        // deterministic
        assert_eq!(r, swing_between(&t, &Vec3::new(0.0, 0.0, -5.0)).unwrap());
    }

    #[test]
    fn nearly_antiparallel_still_maps_direction() {
        let t = Vec3::new(1.0, 0.0, 0.0);
        for eps in [1e-3, 1e-5, 1e-7, 1e-9, 1e-12] {
            let p = Vec3::new(-1.0, eps, -0.5 * eps);
            let r = swing_between(&t, &p).unwrap();
            assert!(r.is_valid());
            assert!((r.apply(&t) - p.normalize()).norm() < 1e-14, "eps {eps}");
        }
    }

    #[test]
    fn twist_examples() {
        let r = twist_about(&Vec3::new(0.0, 0.0, 2.0), FRAC_PI_2.into()).unwrap();
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(close(&r, &expected, 1e-15));

        let r = twist_about(&Vec3::new(0.3, -1.0, 2.0), 0.0.into()).unwrap();
        assert_eq!(*r.matrix(), Mat3::identity());

        let r = twist_about(&Vec3::z(), PI.into()).unwrap();
        assert!(close(
            &r,
            &Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)),
            1e-15
        ));
    }

    #[test]
    fn compose_examples() {
        let i = Rot3::identity();
        assert_eq!(compose_twist_swing(&i, &i), i);
        assert_eq!(compose_twist_swing(&rz(FRAC_PI_2), &i), rz(FRAC_PI_2));

        let sw = swing_between(&Vec3::x(), &Vec3::y()).unwrap();
        let tw = twist_about(&Vec3::x(), 30f64.to_radians().into()).unwrap();
        let r = compose_twist_swing(&sw, &tw);
        assert!((r.apply(&Vec3::x()) - Vec3::y()).norm() < 1e-15);
        assert_eq!(*r.matrix(), sw.matrix() * tw.matrix());
    }

    #[test]
    fn extract_examples() {
        let (sw, tw) = extract_twist(&Rot3::identity(), &Vec3::new(0.2, 0.4, -1.0)).unwrap();
        assert_eq!(sw, Rot3::identity());
        assert_eq!(tw.radians(), 0.0);

        let r = swing_between(&Vec3::x(), &Vec3::y())
            .unwrap()
            .compose(&twist_about(&Vec3::x(), 0.5.into()).unwrap());
        let (_, tw) = extract_twist(&r, &Vec3::x()).unwrap();
        assert_abs_diff_eq!(tw.radians(), 0.5, epsilon = 1e-12);

        let r = twist_about(&Vec3::z(), (-1.2).into()).unwrap();
        let (sw, tw) = extract_twist(&r, &Vec3::z()).unwrap();
        assert!(close(&sw, &Mat3::identity(), 1e-15));
        assert_abs_diff_eq!(tw.radians(), -1.2, epsilon = 1e-12);
    }

    #[test]
    fn extract_rejects_antiparallel() {
        let r = twist_about(&Vec3::y(), PI.into()).unwrap();
        assert!(matches!(
            extract_twist(&r, &Vec3::x()),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            extract_twist(&r, &Vec3::zeros()),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn encode_decode() {
        assert_eq!(angle_encode(0.0), (1.0, 0.0));
        assert_eq!(angle_decode(1.0, 0.0).unwrap(), 0.0);
        let (c, s) = angle_encode(PI);
        assert_abs_diff_eq!(c, -1.0);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(angle_decode(-1.0, 0.0).unwrap(), PI);
        assert_eq!(
            angle_decode(1.2, 1.6).unwrap(),
            angle_decode(0.6, 0.8).unwrap()
        );
        assert_abs_diff_eq!(
            angle_decode(0.6, 0.8).unwrap(),
            0.8f64.atan2(0.6),
            epsilon = 1e-15
        );
        assert!(matches!(
            angle_decode(0.0, 0.0),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn quaternion_round_trip() {
        let r = swing_between(&Vec3::new(0.3, 1.0, -0.2), &Vec3::new(-1.0, 0.1, 0.5))
            .unwrap()
            .compose(&rz(2.5));
        let back = Rot3::from_quaternion(r.to_quaternion()).unwrap();
        assert!(r.frobenius_to(&back) < 1e-12);
    }

    #[test]
    fn rejects_non_rotations() {
        assert!(Rot3::from_row_major(&[1., 0., 0., 0., 1., 0., 0., 0., -1.]).is_err());
        assert!(Rot3::from_row_major(&[2., 0., 0., 0., 1., 0., 0., 0., 1.]).is_err());
        let v = Rot3::identity().to_row_major();
        assert_eq!(Rot3::from_row_major(&v).unwrap(), Rot3::identity());
    }
}
