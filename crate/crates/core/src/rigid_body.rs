//! Rigid-body attitude dynamics, the reference generator and the
//! left-invariant tracking error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::so3::{exp_so3, skew, Mat3, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigidBodyError {
    #[error("inertia matrix is not symmetric")]
    InertiaNotSymmetric,
    #[error("inertia matrix is not positive definite")]
    InertiaNotPositiveDefinite,
    #[error("reference acceleration |z| = {norm} exceeds bound {bound} at t = {t}")]
    AccelerationBound { t: f64, norm: f64, bound: f64 },
    #[error("unknown reference profile '{0}'")]
    UnknownProfile(String),
    #[error("noise standard deviation must be nonnegative and finite, got {0}")]
    InvalidNoise(f64),
}

/// Constant inertia matrix `J` (kg·m²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia {
    j: Mat3,
    j_inv: Mat3,
}

impl Inertia {
    pub fn new(j: Mat3) -> Result<Self, RigidBodyError> {
        if (j - j.transpose()).norm() > 1e-12 {
            return Err(RigidBodyError::InertiaNotSymmetric);
        }
        let eig = j.symmetric_eigenvalues();
        if eig.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return Err(RigidBodyError::InertiaNotPositiveDefinite);
        }
        let j_inv = j.try_inverse().ok_or(RigidBodyError::InertiaNotPositiveDefinite)?;
        Ok(Self { j, j_inv })
    }

    pub fn diagonal(jx: f64, jy: f64, jz: f64) -> Result<Self, RigidBodyError> {
        Self::new(Mat3::from_diagonal(&Vec3::new(jx, jy, jz)))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.j
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.j_inv
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.j.symmetric_eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.j.symmetric_eigenvalues().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub r: Rotation,
    pub omega: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefState {
    pub rr: Rotation,
    pub omega_r: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub re: Rotation,
    pub omega_e: Vec3,
}

/// Time derivative of an attitude/angular-velocity pair, expressed in the
/// ambient matrix space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeTangent {
    pub r_dot: Mat3,
    pub omega_dot: Vec3,
}

/// `Ṙ = R ω×`, `Jω̇ = -ω × Jω + τ`.
pub fn body_flow(s: &BodyState, tau: &Vec3, j: &Inertia) -> AttitudeTangent {
    let jw = j.matrix() * s.omega;
    AttitudeTangent {
        r_dot: s.r.matrix() * skew(&s.omega),
        omega_dot: j.inverse() * (-s.omega.cross(&jw) + tau),
    }
}

/// `Ṙr = Rr ωr×`, `ω̇r = z`, rejecting `|z| > m_bound`.
pub fn ref_flow(t: f64, s: &RefState, z: &Vec3, m_bound: f64) -> Result<AttitudeTangent, RigidBodyError> {
    check_acceleration(t, z, m_bound)?;
    Ok(AttitudeTangent {
        r_dot: s.rr.matrix() * skew(&s.omega_r),
        omega_dot: *z,
    })
}

pub fn check_acceleration(t: f64, z: &Vec3, m_bound: f64) -> Result<(), RigidBodyError> {
    let norm = z.norm();
    if norm > m_bound {
        return Err(RigidBodyError::AccelerationBound {
            t,
            norm,
            bound: m_bound,
        });
    }
    Ok(())
}

/// Reference angular accelerations `z(t)` selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceProfile {
    /// `z(t) = [sin(0.1t), -cos(0.3t), 0.1]`.
    Sine,
    /// `z ≡ 0`.
    Zero,
    Constant(Vec3),
}

impl ReferenceProfile {
    pub const NAMES: [&'static str; 2] = ["sine", "zero"];

    pub fn by_name(name: &str) -> Result<Self, RigidBodyError> {
        match name {
            "sine" => Ok(Self::Sine),
            "zero" => Ok(Self::Zero),
            other => Err(RigidBodyError::UnknownProfile(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::Zero => "zero",
            Self::Constant(_) => "constant",
        }
    }

    pub fn z(&self, t: f64) -> Vec3 {
        match self {
            Self::Sine => Vec3::new((0.1 * t).sin(), -(0.3 * t).cos(), 0.1),
            Self::Zero => Vec3::zeros(),
            Self::Constant(z) => *z,
        }
    }
}

/// `R_e = Rrᵀ R`, `ω_e = ω - R_eᵀ ωr`.
pub fn error_from(body: &BodyState, reference: &RefState) -> ErrorState {
    let re = reference.rr.transpose() * body.r;
    ErrorState {
        omega_e: body.omega - re.transpose().apply(&reference.omega_r),
        re,
    }
}

/// Feed-forward `Υ = J R_eᵀ z + (R_eᵀ ωr) × J R_eᵀ ωr`.
pub fn upsilon(re: &Rotation, omega_r: &Vec3, z: &Vec3, j: &Inertia) -> Vec3 {
    let ret = re.transpose();
    let w = ret.apply(omega_r);
    j.matrix() * ret.apply(z) + w.cross(&(j.matrix() * w))
}

/// Skew-symmetric term of the error dynamics,
/// `Σ = (Jω_e)× + (J R_eᵀ ωr)× - ((R_eᵀ ωr)× J + J (R_eᵀ ωr)×)`.
pub fn sigma(re: &Rotation, omega_e: &Vec3, omega_r: &Vec3, j: &Inertia) -> Mat3 {
    let jm = j.matrix();
    let w = re.transpose().apply(omega_r);
    let ws = skew(&w);
    skew(&(jm * omega_e)) + skew(&(jm * w)) - (ws * jm + jm * ws)
}

/// `Ṙ_e = R_e ω_e×`, `Jω̇_e = Σ ω_e - Υ + τ`.
pub fn error_flow(e: &ErrorState, omega_r: &Vec3, z: &Vec3, tau: &Vec3, j: &Inertia) -> AttitudeTangent {
    let s = sigma(&e.re, &e.omega_e, omega_r, j);
    AttitudeTangent {
        r_dot: e.re.matrix() * skew(&e.omega_e),
        omega_dot: j.inverse() * (s * e.omega_e - upsilon(&e.re, omega_r, z, j) + tau),
    }
}

/// One draw of attitude and gyro noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample {
    pub n_r: Vec3,
    pub n_w: Vec3,
}

impl NoiseSample {
    pub fn zero() -> Self {
        Self {
            n_r: Vec3::zeros(),
            n_w: Vec3::zeros(),
        }
    }
}

/// Seeded Gaussian measurement noise: `R_y = R exp(n_R×)`, `ω_y = ω + n_ω`.
#[derive(Debug, Clone)]
pub struct MeasurementNoise {
    sigma_r: f64,
    sigma_w: f64,
    rng: ChaCha8Rng,
}

impl MeasurementNoise {
    /// Standard deviations per component.
    pub fn new(sigma_r: f64, sigma_w: f64, seed: u64) -> Result<Self, RigidBodyError> {
        for s in [sigma_r, sigma_w] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(RigidBodyError::InvalidNoise(s));
            }
        }
        Ok(Self {
            sigma_r,
            sigma_w,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn from_variances(var_r: f64, var_w: f64, seed: u64) -> Result<Self, RigidBodyError> {
        if var_r < 0.0 || var_w < 0.0 {
            return Err(RigidBodyError::InvalidNoise(var_r.min(var_w)));
        }
        Self::new(var_r.sqrt(), var_w.sqrt(), seed)
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_r == 0.0 && self.sigma_w == 0.0
    }

    pub fn sample(&mut self) -> NoiseSample {
        let mut draw = |sigma: f64| {
            let v = Vec3::new(
                StandardNormal.sample(&mut self.rng),
                StandardNormal.sample(&mut self.rng),
                StandardNormal.sample(&mut self.rng),
            );
            v * sigma
        };
        let n_r = draw(self.sigma_r);
        let n_w = draw(self.sigma_w);
        NoiseSample { n_r, n_w }
    }

    /// Draws a fresh sample and applies it to `body`.
    pub fn apply(&mut self, body: &BodyState) -> (Rotation, Vec3) {
        let n = self.sample();
        apply_noise(body, &n)
    }
}

pub fn apply_noise(body: &BodyState, n: &NoiseSample) -> (Rotation, Vec3) {
    (body.r * exp_so3(&n.n_r), body.omega + n.n_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{angle_axis, random_rotation, random_unit};

    fn quad_inertia() -> Inertia {
        Inertia::diagonal(0.0159, 0.0150, 0.0297).unwrap()
    }

    #[test]
    fn gyroscopic_cancellation() {
        let j = quad_inertia();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let omega = random_unit(&mut rng) * 3.0;
        let s = BodyState {
            r: random_rotation(&mut rng),
            omega,
        };
        let tau = omega.cross(&(j.matrix() * omega));
        assert!(body_flow(&s, &tau, &j).omega_dot.norm() < 1e-12);
        let still = BodyState {
            r: s.r,
            omega: Vec3::zeros(),
        };
        let d = body_flow(&still, &Vec3::zeros(), &j);
        assert_eq!(d.omega_dot, Vec3::zeros());
        assert_eq!(d.r_dot, Mat3::zeros());
    }

    #[test]
    fn inertia_validation() {
        assert!(Inertia::diagonal(1.0, -1.0, 1.0).is_err());
        let mut m = Mat3::identity();
        m[(0, 1)] = 0.5;
        assert!(matches!(Inertia::new(m), Err(RigidBodyError::InertiaNotSymmetric)));
    }

    #[test]
    fn reference_bound() {
        let s = RefState {
            rr: Rotation::identity(),
            omega_r: Vec3::zeros(),
        };
        let sup = (1.0f64 + 1.0 + 0.01).sqrt();
        for k in 0..2000 {
            let t = k as f64 * 0.05;
            let z = ReferenceProfile::Sine.z(t);
            assert!(z.norm() <= sup + 1e-12);
            ref_flow(t, &s, &z, 2.0).unwrap();
        }
        let err = ref_flow(3.0, &s, &Vec3::new(3.0, 0.0, 0.0), 2.0).unwrap_err();
        assert!(matches!(err, RigidBodyError::AccelerationBound { t, .. } if t == 3.0));
        let d = ref_flow(0.0, &s, &Vec3::zeros(), 1.0).unwrap();
        assert_eq!(d.r_dot, Mat3::zeros());
        assert!(ReferenceProfile::by_name("nope").is_err());
    }

    #[test]
    fn error_state_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_rotation(&mut rng);
        let omega = random_unit(&mut rng);
        let body = BodyState { r, omega };
        let same = RefState { rr: r, omega_r: omega };
        let e = error_from(&body, &same);
        assert!((e.re.matrix() - Mat3::identity()).norm() < 1e-12);
        assert!(e.omega_e.norm() < 1e-12);

        let still = RefState {
            rr: Rotation::identity(),
            omega_r: Vec3::zeros(),
        };
        let e = error_from(&body, &still);
        assert_eq!(e.re, r);
        assert_eq!(e.omega_e, omega);

        let rr = random_rotation(&mut rng);
        let e = error_from(&body, &RefState { rr, omega_r: omega });
        assert!(((rr * e.re).matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn upsilon_examples() {
        let j = quad_inertia();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let re = random_rotation(&mut rng);
        assert_eq!(upsilon(&re, &Vec3::zeros(), &Vec3::zeros(), &j), Vec3::zeros());
        let unit = Inertia::diagonal(1.0, 1.0, 1.0).unwrap();
        let z = Vec3::new(0.3, -0.2, 0.5);
        let wr = Vec3::new(1.0, 2.0, -1.0);
        assert!((upsilon(&Rotation::identity(), &wr, &z, &unit) - z).norm() < 1e-15);
        for _ in 0..100 {
            let re = random_rotation(&mut rng);
            let wr = random_unit(&mut rng) * 2.0;
            let z = random_unit(&mut rng);
            let m = re.matrix().transpose();
            let jm = j.matrix();
            let w = m * wr;
            let cross = Vec3::new(
                w.y * (jm * w).z - w.z * (jm * w).y,
                w.z * (jm * w).x - w.x * (jm * w).z,
                w.x * (jm * w).y - w.y * (jm * w).x,
            );
            let direct = jm * (m * z) + cross;
            assert!((upsilon(&re, &wr, &z, &j) - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn sigma_is_skew_and_powerless() {
        let j = quad_inertia();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let re = random_rotation(&mut rng);
            let we = random_unit(&mut rng) * 5.0;
            let wr = random_unit(&mut rng) * 2.0;
            let s = sigma(&re, &we, &wr, &j);
            assert!((s + s.transpose()).norm() < 1e-12);
            assert!(we.dot(&(s * we)).abs() < 1e-12);
        }
        let re = random_rotation(&mut rng);
        assert_eq!(sigma(&re, &Vec3::zeros(), &Vec3::zeros(), &j), Mat3::zeros());
    }

    #[test]
    fn error_flow_equilibrium() {
        let j = quad_inertia();
        let e = ErrorState {
            re: Rotation::identity(),
            omega_e: Vec3::zeros(),
        };
        let wr = Vec3::new(0.4, -0.1, 0.2);
        let z = Vec3::new(0.1, 0.2, 0.3);
        let tau = upsilon(&e.re, &wr, &z, &j);
        let d = error_flow(&e, &wr, &z, &tau, &j);
        assert!(d.omega_dot.norm() < 1e-12);
        let re = angle_axis(1.0, &Vec3::y()).unwrap();
        let e = ErrorState {
            re,
            omega_e: Vec3::zeros(),
        };
        let tau = upsilon(&re, &wr, &z, &j);
        let d = error_flow(&e, &wr, &z, &tau, &j);
        assert!(d.omega_dot.norm() < 1e-12);
        assert_eq!(d.r_dot, Mat3::zeros());
    }

    #[test]
    fn noise_is_seeded() {
        let body = BodyState {
            r: Rotation::identity(),
            omega: Vec3::new(0.1, 0.2, 0.3),
        };
        let mut silent = MeasurementNoise::new(0.0, 0.0, 1).unwrap();
        assert!(silent.is_silent());
        let (ry, wy) = silent.apply(&body);
        assert_eq!(ry, body.r);
        assert_eq!(wy, body.omega);

        let mut a = MeasurementNoise::from_variances(0.01, 0.01, 42).unwrap();
        let mut b = MeasurementNoise::from_variances(0.01, 0.01, 42).unwrap();
        for _ in 0..100 {
            let (x, y) = (a.sample(), b.sample());
            assert_eq!(x.n_r.as_slice(), y.n_r.as_slice());
            assert_eq!(x.n_w.as_slice(), y.n_w.as_slice());
        }
        assert!(MeasurementNoise::new(-1.0, 0.0, 0).is_err());
    }

    #[test]
    fn noise_variance() {
        let mut noise = MeasurementNoise::from_variances(0.01, 0.01, 7).unwrap();
        let n = 100_000;
        let mut sum = Vec3::zeros();
        let mut sum_sq = Vec3::zeros();
        for _ in 0..n {
            let s = noise.sample();
            sum += s.n_w;
            sum_sq += s.n_w.component_mul(&s.n_w);
        }
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let var = sum_sq[k] / n as f64 - mean * mean;
            assert!((var - 0.01).abs() < 0.0005, "component {k}: {var}");
        }
    }
}
