//! Small fixed-size linear algebra that has to be bit-reproducible.
//!
//! The 3×3 SVD is built on a cyclic Jacobi eigen-decomposition of the normal
//! matrix. Jacobi sweeps are a fixed sequence of IEEE operations, so results
//! do not depend on the BLAS or platform.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a symmetric 3×3 matrix.
///
/// Returns eigenvalues sorted in descending order and the matching
/// orthonormal eigenvectors as the columns of the second element.
pub fn sym_eigen3(m: &Mat3) -> ([f64; 3], Mat3) {
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = Mat3::identity();
    let scale = a.norm();
    if scale == 0.0 {
        return ([0.0; 3], v);
    }
    for _ in 0..MAX_SWEEPS {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= (f64::EPSILON * scale).powi(2) * 1e-4 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut j = Mat3::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;
            a = j.transpose() * a * j;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= j;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &k| a[(k, k)].total_cmp(&a[(i, i)]));
    let vals = [
        a[(order[0], order[0])],
        a[(order[1], order[1])],
        a[(order[2], order[2])],
    ];
    let vecs = Mat3::from_columns(&[
        v.column(order[0]).into_owned(),
        v.column(order[1]).into_owned(),
        v.column(order[2]).into_owned(),
    ]);
    (vals, vecs)
}

/// Thin SVD of a 3×3 matrix: `m = u * diag(s) * vᵀ`.
///
/// Singular values are non-negative and descending. `u` and `v` are
/// orthonormal; `u`'s third column is completed by a cross product, so it is
/// well defined even when `m` has rank 2.
#[derive(Clone, Debug)]
pub struct Svd3 {
    pub u: Mat3,
    pub s: [f64; 3],
    pub v: Mat3,
}

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-7;

pub fn svd3(m: &Mat3) -> Svd3 {
    let (_, v) = sym_eigen3(&(m.transpose() * m));
    let mv = |i: usize| m * v.column(i);
    // ‖m·v_i‖ keeps tiny singular values accurate, unlike √λ_i
    let s = [mv(0).norm(), mv(1).norm(), mv(2).norm()];

    let u1 = if s[0] > 0.0 { mv(0) / s[0] } else { Vec3::x() };
    let u1 = u1.normalize();
    let u2 = if s[1] > RANK_TOL * s[0] {
        let w = mv(1);
        (w - u1 * u1.dot(&w)).normalize()
    } else {
        any_perpendicular(&u1)
    };
    let mut u3 = u1.cross(&u2);
    if s[2] > RANK_TOL * s[0] && mv(2).dot(&u3) < 0.0 {
        u3 = -u3;
    }
    Svd3 {
        u: Mat3::from_columns(&[u1, u2, u3]),
        s,
        v,
    }
}

/// Deterministic unit vector perpendicular to `v`, built from the coordinate
/// axis least aligned with it.
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let n = v.norm();
    let unit = if n > 0.0 { v / n } else { Vec3::z() };
    (axis - unit * unit.dot(&axis)).normalize()
}

pub fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}
