//! Rotation-group primitives on SO(3).
//!
//! Rotations are stored as full 3×3 matrices. Every potential and feedback
//! law in this crate is written in terms of traces and antisymmetric parts of
//! matrix products, so keeping the matrix form avoids round trips through
//! other parameterizations.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality drift allowed for a [`Rotation`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Maximum asymmetry accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-12;
/// Maximum deviation of an axis norm from one.
pub const UNIT_TOL: f64 = 1e-12;
/// Below this rotation-vector norm exp/log switch to their series forms.
const SERIES_THRESHOLD: f64 = 1e-6;
/// Maximum Frobenius distance from SO(3) accepted by [`project_to_so3`].
const PROJECTION_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum So3Error {
    #[error("matrix is not skew-symmetric (|M + M^T|_F = {0:e})")]
    NotSkew(f64),
    #[error("rotation axis is not a unit vector (norm = {0})")]
    NonUnitAxis(f64),
    #[error("logarithm is ambiguous at a half-turn (|R|_I = {0})")]
    LogBranchAmbiguous(f64),
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
    #[error("cannot project onto SO(3): {0}")]
    Projection(String),
}

/// A 3×3 orthonormal matrix with positive determinant.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps `m` after checking the orthonormality and determinant invariants.
    pub fn from_matrix(m: Mat3) -> Result<Self, So3Error> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(So3Error::NotRotation("non-finite entry".into()));
        }
        let drift = orthonormality_error(&m);
        if drift > ORTHONORMAL_TOL {
            return Err(So3Error::NotRotation(format!(
                "|R^T R - I|_F = {drift:e} exceeds {ORTHONORMAL_TOL:e}"
            )));
        }
        if m.determinant() <= 0.0 {
            return Err(So3Error::NotRotation("determinant is not positive".into()));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. Callers must guarantee the invariants.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotates a vector.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Normalized distance to the identity, `sqrt(tr(I - R) / 4)`.
    pub fn distance(&self) -> f64 {
        rot_distance(self)
    }

    /// Row-major entries, the layout used by flat state vectors.
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
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation{:?}", self.0.as_slice())
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// `|M^T M - I|_F`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// The cross-product matrix: `skew(x) * y = x × y`.
pub fn skew(x: &Vec3) -> Mat3 {
    Mat3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// Inverse of [`skew`]. Rejects inputs that are not skew-symmetric.
pub fn vee(m: &Mat3) -> Result<Vec3, So3Error> {
    let asym = (m + m.transpose()).norm();
    if asym > SKEW_TOL {
        return Err(So3Error::NotSkew(asym));
    }
    Ok(Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Antisymmetric projection `(A - A^T) / 2`.
pub fn pa(a: &Mat3) -> Mat3 {
    (a - a.transpose()) * 0.5
}

/// `vee(pa(A))`, written out so it is exact for any input.
pub fn psi(a: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// `E(A) = (tr(A) I - A^T) / 2`.
pub fn emap(a: &Mat3) -> Mat3 {
    (Mat3::identity() * a.trace() - a.transpose()) * 0.5
}

/// Rotation by `theta` radians about the unit axis `axis` (Rodrigues).
pub fn angle_axis(theta: f64, axis: &Vec3) -> Result<Rotation, So3Error> {
    let n = axis.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(So3Error::NonUnitAxis(n));
    }
    Ok(rodrigues(theta, axis))
}

/// Rodrigues formula for an axis already known to be unit length.
pub(crate) fn rodrigues(theta: f64, axis: &Vec3) -> Rotation {
    let k = skew(axis);
    Rotation(Mat3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
}

/// Matrix exponential of `skew(w)`.
pub fn exp_so3(w: &Vec3) -> Rotation {
    let theta = w.norm();
    let k = skew(w);
    let (a, b) = if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Principal logarithm; the returned rotation vector has norm in `[0, π)`.
pub fn log_so3(r: &Rotation) -> Result<Vec3, So3Error> {
    let d = rot_distance(r);
    if d >= 1.0 - 1e-9 {
        return Err(So3Error::LogBranchAmbiguous(d));
    }
    let m = r.matrix();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let v = psi(m);
    let theta = v.norm().atan2(cos_t);
    if theta < SERIES_THRESHOLD {
        // sin(θ)/θ ≈ 1 - θ²/6
        return Ok(v * (1.0 + theta * theta / 6.0));
    }
    if theta > PI - 1e-3 {
        // sin θ is small; recover the axis from the symmetric part instead.
        let s = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_t;
        // s = (1 - cos θ) n n^T
        let col = (0..3)
            .max_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]))
            .unwrap_or(0);
        let mut n = s.column(col).into_owned();
        n /= n.norm();
        if n.dot(&v) < 0.0 {
            n = -n;
        }
        return Ok(n * theta);
    }
    Ok(v * (theta / theta.sin()))
}

/// Unit rotation axis, or `None` for the identity. Valid at half-turns,
/// where the axis is only defined up to sign; the sign is then chosen so the
/// largest-magnitude component is positive.
pub fn rotation_axis(r: &Rotation) -> Option<Vec3> {
    let m = r.matrix();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let v = psi(m);
    if cos_t > -0.5 {
        let n = v.norm();
        return (n > 1e-15).then(|| v / n);
    }
    let s = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_t;
    let col = (0..3)
        .max_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]))
        .unwrap_or(0);
    let mut n = s.column(col).into_owned();
    n /= n.norm();
    let sign_ref = if v.norm() > 1e-14 {
        n.dot(&v)
    } else {
        n[n.iamax()]
    };
    if sign_ref < 0.0 {
        n = -n;
    }
    Some(n)
}

/// `|R|_I = sqrt(tr(I - R) / 4)`, in `[0, 1]`.
pub fn rot_distance(r: &Rotation) -> f64 {
    let d2 = (3.0 - r.matrix().trace()) * 0.25;
    d2.clamp(0.0, 1.0).sqrt()
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor
/// `M (M^T M)^{-1/2}`).
pub fn project_to_so3(m: &Mat3) -> Result<Rotation, So3Error> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(So3Error::Projection("non-finite entry".into()));
    }
    if m.determinant() <= 0.0 {
        return Err(So3Error::Projection(
            "determinant is not positive (degenerate or reflected)".into(),
        ));
    }
    let q = polar_factor(m);
    let dist = (m - q).norm();
    if dist > PROJECTION_RADIUS {
        return Err(So3Error::Projection(format!(
            "input is {dist:e} away from SO(3), limit is {PROJECTION_RADIUS}"
        )));
    }
    Ok(Rotation(q))
}

pub(crate) fn polar_factor(m: &Mat3) -> Mat3 {
    let eig = SymmetricEigen::new(m.transpose() * m);
    let inv_sqrt = Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    m * (eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
}

/// Uniformly distributed rotation (Haar measure) via a normalized Gaussian
/// quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let mut q = [0.0f64; 4];
    loop {
        for c in q.iter_mut() {
            *c = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            for c in q.iter_mut() {
                *c /= n;
            }
            break;
        }
    }
    let [w, x, y, z] = q;
    Rotation(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Uniformly distributed unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
