//! The warped trace potential `U(R, θ) = tr(A(I - R·Ra(θ, u))) + (γ/2)θ²` on
//! SO(3)×ℝ, its gradients, and the parameter construction that places every
//! undesired critical point inside the jump set.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::so3::{emap, psi, random_rotation, rodrigues, rot_distance, rotation_axis, skew};
use crate::so3::{Mat3, Rotation, Vec3};

/// Relative tolerance used to decide that two eigenvalues coincide.
const EIGEN_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("matrix A is not symmetric (|A - A^T|_F = {0:e})")]
    NotSymmetric(f64),
    #[error("matrix A is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("the two largest eigenvalues of A coincide ({0}); the construction needs λ2 < λ3")]
    RepeatedTopEigenvalue(f64),
    #[error("reset set Θ is empty")]
    EmptyThetaSet,
    #[error("reset angle {0} is outside 0 < |θ| ≤ π")]
    ThetaOutOfRange(f64),
    #[error("axis u is not a unit vector (norm = {0})")]
    NonUnitAxis(f64),
    #[error("gap Δ* = {0} is not positive for this axis")]
    NonPositiveGap(f64),
    #[error("gamma = {gamma} must lie in (0, {bound})")]
    GammaOutOfRange { gamma: f64, bound: f64 },
    #[error("delta = {delta} must lie in (0, {bound})")]
    DeltaOutOfRange { delta: f64, bound: f64 },
    #[error("{name} = {value} must lie in the open interval (0, 1)")]
    FractionOutOfRange { name: &'static str, value: f64 },
}

/// Which branch of the axis construction applies to the spectrum of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralCase {
    /// λ1 = λ2.
    RepeatedSmallest = 1,
    /// λ2 ≥ λ1λ3 / (λ3 - λ1).
    LargeMiddle = 2,
    /// λ1 < λ2 < λ1λ3 / (λ3 - λ1).
    SmallMiddle = 3,
}

impl SpectralCase {
    pub fn id(self) -> u8 {
        self as u8
    }
}

/// Spectral data derived from `A` and `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedSpectral {
    /// Ascending eigenvalues of `A`.
    pub eigenvalues: Vec3,
    /// Orthonormal eigenvectors as columns, sign-fixed so the first nonzero
    /// component is positive.
    pub eigenvectors: Mat3,
    /// `Ā = (tr(A) I - A) / 2`.
    pub abar: Mat3,
    /// `A̲ = tr(Ā²) I - 2Ā²`.
    pub aunder: Mat3,
    /// Smallest and largest eigenvalue of `Ā`.
    pub abar_min: f64,
    pub abar_max: f64,
    /// `min over eigenvectors v of Δ(u, v)` for the configured axis.
    pub delta_star: f64,
    pub case: SpectralCase,
    /// Coordinates of `u` in the eigenbasis.
    pub alphas: Vec3,
}

impl DerivedSpectral {
    pub fn eigenvector(&self, i: usize) -> Vec3 {
        self.eigenvectors.column(i).into_owned()
    }

    /// True when λ1 = λ2, so the undesired critical points are not isolated.
    pub fn repeated_smallest(&self) -> bool {
        self.case == SpectralCase::RepeatedSmallest
    }
}

/// A point of SO(3)×ℝ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState {
    pub r: Rotation,
    pub theta: f64,
}

impl ExtendedState {
    pub fn new(r: Rotation, theta: f64) -> Self {
        Self { r, theta }
    }

    /// The desired equilibrium `(I₃, 0)`.
    pub fn target() -> Self {
        Self::new(Rotation::identity(), 0.0)
    }
}

/// Parameters `{Θ, A, u, γ, δ}` of the potential, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialParams {
    theta_set: Vec<f64>,
    a: Mat3,
    u: Vec3,
    gamma: f64,
    delta: f64,
    spectral: DerivedSpectral,
}

impl PotentialParams {
    /// Builds parameters from explicit values, checking every invariant.
    pub fn new(
        a: Mat3,
        theta_set: Vec<f64>,
        u: Vec3,
        gamma: f64,
        delta: f64,
    ) -> Result<Self, PotentialError> {
        let (eigenvalues, eigenvectors) = sorted_eigen(&a)?;
        check_theta_set(&theta_set)?;
        let norm = u.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(PotentialError::NonUnitAxis(norm));
        }
        let spectral = derive_spectral(&a, eigenvalues, eigenvectors, &u);
        if spectral.delta_star <= 0.0 {
            return Err(PotentialError::NonPositiveGap(spectral.delta_star));
        }
        let gamma_bound = gamma_upper_bound(spectral.delta_star);
        if !(gamma > 0.0 && gamma < gamma_bound) {
            return Err(PotentialError::GammaOutOfRange {
                gamma,
                bound: gamma_bound,
            });
        }
        let delta_bound = delta_upper_bound(spectral.delta_star, gamma, min_abs(&theta_set));
        if !(delta > 0.0 && delta < delta_bound) {
            return Err(PotentialError::DeltaOutOfRange {
                delta,
                bound: delta_bound,
            });
        }
        Ok(Self {
            theta_set,
            a,
            u,
            gamma,
            delta,
            spectral,
        })
    }

    pub fn theta_set(&self) -> &[f64] {
        &self.theta_set
    }
    pub fn a(&self) -> &Mat3 {
        &self.a
    }
    pub fn u(&self) -> &Vec3 {
        &self.u
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn spectral(&self) -> &DerivedSpectral {
        &self.spectral
    }
    /// `θ_m = min |θ|` over the reset set.
    pub fn theta_min(&self) -> f64 {
        min_abs(&self.theta_set)
    }
    /// Upper bound `4Δ*/π²` on γ.
    pub fn gamma_bound(&self) -> f64 {
        gamma_upper_bound(self.spectral.delta_star)
    }
    /// Upper bound `(4Δ*/π² - γ) θ_m² / 2` on δ.
    pub fn delta_bound(&self) -> f64 {
        delta_upper_bound(self.spectral.delta_star, self.gamma, self.theta_min())
    }
}

fn gamma_upper_bound(delta_star: f64) -> f64 {
    4.0 * delta_star / (PI * PI)
}

fn delta_upper_bound(delta_star: f64, gamma: f64, theta_m: f64) -> f64 {
    (gamma_upper_bound(delta_star) - gamma) * theta_m * theta_m / 2.0
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().map(|t| t.abs()).fold(f64::INFINITY, f64::min)
}

fn check_theta_set(theta_set: &[f64]) -> Result<(), PotentialError> {
    if theta_set.is_empty() {
        return Err(PotentialError::EmptyThetaSet);
    }
    for &t in theta_set {
        if !(t.is_finite() && t != 0.0 && t.abs() <= PI) {
            return Err(PotentialError::ThetaOutOfRange(t));
        }
    }
    Ok(())
}

/// Ascending eigenvalues and sign-fixed orthonormal eigenvectors of a
/// symmetric positive definite `A`, with λ2 < λ3 enforced.
fn sorted_eigen(a: &Mat3) -> Result<(Vec3, Mat3), PotentialError> {
    let asym = (a - a.transpose()).norm();
    if asym > 1e-12 * a.norm().max(1.0) {
        return Err(PotentialError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new((a + a.transpose()) * 0.5);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Vec3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if values[0] <= 0.0 {
        return Err(PotentialError::NotPositiveDefinite(values[0]));
    }
    if values[2] - values[1] <= EIGEN_TIE_TOL * values[2] {
        return Err(PotentialError::RepeatedTopEigenvalue(values[2]));
    }
    let mut vectors = Mat3::zeros();
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        v /= v.norm();
        if let Some(first) = v.iter().copied().find(|c| c.abs() > 1e-12) {
            if first < 0.0 {
                v = -v;
            }
        }
        vectors.set_column(k, &v);
    }
    Ok((values, vectors))
}

fn classify(values: &Vec3) -> SpectralCase {
    let (l1, l2, l3) = (values[0], values[1], values[2]);
    if l2 - l1 <= EIGEN_TIE_TOL * l3 {
        SpectralCase::RepeatedSmallest
    } else if l2 >= l1 * l3 / (l3 - l1) {
        SpectralCase::LargeMiddle
    } else {
        SpectralCase::SmallMiddle
    }
}

fn derive_spectral(a: &Mat3, eigenvalues: Vec3, eigenvectors: Mat3, u: &Vec3) -> DerivedSpectral {
    let abar = (Mat3::identity() * a.trace() - a) * 0.5;
    let abar2 = abar * abar;
    let aunder = Mat3::identity() * abar2.trace() - abar2 * 2.0;
    // Eigenvalues of Ā are (tr(A) - λi)/2, so the ordering flips.
    let abar_max = (a.trace() - eigenvalues[0]) * 0.5;
    let abar_min = (a.trace() - eigenvalues[2]) * 0.5;
    let case = classify(&eigenvalues);
    let alphas = eigenvectors.transpose() * u;
    let delta_star = min_gap_over_eigenvectors(a, &eigenvalues, &eigenvectors, u, case);
    DerivedSpectral {
        eigenvalues,
        eigenvectors,
        abar,
        aunder,
        abar_min,
        abar_max,
        delta_star,
        case,
        alphas,
    }
}

/// `min Δ(u, v)` over all unit eigenvectors `v` of `A`. When λ1 = λ2 the
/// minimum over that eigenplane is attained at the in-plane direction
/// orthogonal to `u`.
fn min_gap_over_eigenvectors(
    a: &Mat3,
    values: &Vec3,
    vectors: &Mat3,
    u: &Vec3,
    case: SpectralCase,
) -> f64 {
    let base = u.dot(&((Mat3::identity() * a.trace() - a) * u));
    let top = delta_fn(u, &vectors.column(2).into_owned(), a);
    if case == SpectralCase::RepeatedSmallest {
        // Δ(u, v) = base - 2λ1 (1 - (u·v)²), minimized by u·v = 0.
        return (base - 2.0 * values[0]).min(top);
    }
    (0..3)
        .map(|i| delta_fn(u, &vectors.column(i).into_owned(), a))
        .fold(f64::INFINITY, f64::min)
}

/// `Δ(u, v) = uᵀ(tr(A) I - A - 2 vᵀAv (I - v vᵀ)) u`.
pub fn delta_fn(u: &Vec3, v: &Vec3, a: &Mat3) -> f64 {
    let vav = v.dot(&(a * v));
    let m = Mat3::identity() * a.trace() - a - (Mat3::identity() - v * v.transpose()) * (2.0 * vav);
    u.dot(&(m * u))
}

/// A parameter given directly or as a fraction in (0, 1) of its admissible
/// upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounded {
    Value(f64),
    Fraction(f64),
}

impl Bounded {
    fn resolve(self, name: &'static str, bound: f64) -> Result<f64, PotentialError> {
        match self {
            Self::Value(v) => Ok(v),
            Self::Fraction(f) if f > 0.0 && f < 1.0 => Ok(f * bound),
            Self::Fraction(f) => Err(PotentialError::FractionOutOfRange { name, value: f }),
        }
    }
}

/// Builds `{Θ, A, u, γ, δ}`. Without an explicit axis, `u` and `Δ*` come
/// from the eigenvalue case split. Fractions refer to `γ < 4Δ*/π²` and
/// `δ < (4Δ*/π² - γ) θ_m²/2`.
pub fn build_params(
    a: Mat3,
    theta_set: Vec<f64>,
    u: Option<Vec3>,
    gamma: Bounded,
    delta: Bounded,
) -> Result<PotentialParams, PotentialError> {
    check_theta_set(&theta_set)?;
    let (u, delta_star) = match u {
        Some(u) => {
            let norm = u.norm();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(PotentialError::NonUnitAxis(norm));
            }
            let (values, vectors) = sorted_eigen(&a)?;
            (u, derive_spectral(&a, values, vectors, &u).delta_star)
        }
        None => optimal_axis(&a)?,
    };
    let gamma = gamma.resolve("gamma_frac", gamma_upper_bound(delta_star))?;
    let delta = delta.resolve("delta_frac", delta_upper_bound(delta_star, gamma, min_abs(&theta_set)))?;
    PotentialParams::new(a, theta_set, u, gamma, delta)
}

/// [`build_params`] with the constructed axis and both γ and δ as fractions.
pub fn construct_params(
    a: Mat3,
    theta_set: Vec<f64>,
    gamma_frac: f64,
    delta_frac: f64,
) -> Result<PotentialParams, PotentialError> {
    build_params(a, theta_set, None, Bounded::Fraction(gamma_frac), Bounded::Fraction(delta_frac))
}

/// Same construction with γ given directly; δ is still a fraction of its
/// admissible bound.
pub fn construct_params_with_gamma(
    a: Mat3,
    theta_set: Vec<f64>,
    gamma: f64,
    delta_frac: f64,
) -> Result<PotentialParams, PotentialError> {
    build_params(a, theta_set, None, Bounded::Value(gamma), Bounded::Fraction(delta_frac))
}

/// The gap-maximizing axis and its gap `Δ*` for the spectrum of `A`.
pub fn optimal_axis(a: &Mat3) -> Result<(Vec3, f64), PotentialError> {
    let (values, vectors) = sorted_eigen(a)?;
    let (l1, l2, l3) = (values[0], values[1], values[2]);
    let (alphas, delta_star) = match classify(&values) {
        SpectralCase::RepeatedSmallest => {
            let a3_sq = 1.0 - l2 / l3;
            // The free λ1-eigenplane mass goes entirely on v1.
            (
                Vec3::new((1.0 - a3_sq).sqrt(), 0.0, a3_sq.sqrt()),
                l1 * (1.0 - l2 / l3),
            )
        }
        SpectralCase::LargeMiddle => (
            Vec3::new(0.0, (l2 / (l2 + l3)).sqrt(), (l3 / (l2 + l3)).sqrt()),
            l1,
        ),
        SpectralCase::SmallMiddle => {
            let s = 2.0 * (l1 * l2 + l1 * l3 + l2 * l3);
            let prod_except = [l2 * l3, l1 * l3, l1 * l2];
            let alpha = |i: usize| (1.0 - 4.0 * prod_except[i] / s).max(0.0).sqrt();
            (
                Vec3::new(alpha(0), alpha(1), alpha(2)),
                4.0 * l1 * l2 * l3 / s,
            )
        }
    };
    let mut u = vectors * alphas;
    u /= u.norm();
    Ok((u, delta_star))
}

/// `𝒯(R, θ) = R · Ra(θ, u)`.
pub fn transform(r: &Rotation, theta: f64, p: &PotentialParams) -> Rotation {
    r * &rodrigues(theta, &p.u)
}

/// `U(R, θ)`.
pub fn potential(r: &Rotation, theta: f64, p: &PotentialParams) -> f64 {
    let t = transform(r, theta, p);
    (p.a * (Mat3::identity() - t.matrix())).trace() + 0.5 * p.gamma * theta * theta
}

/// Body-frame gradient `ψ(Rᵀ ∇_R U) = Ra(θ, u) ψ(A𝒯)`.
pub fn grad_r_psi(r: &Rotation, theta: f64, p: &PotentialParams) -> Vec3 {
    let warp = rodrigues(theta, &p.u);
    let t = r * &warp;
    warp.apply(&psi(&(p.a * t.matrix())))
}

/// `∇_θ U = γθ + 2uᵀψ(A𝒯)`.
pub fn grad_theta(r: &Rotation, theta: f64, p: &PotentialParams) -> f64 {
    let t = transform(r, theta, p);
    p.gamma * theta + 2.0 * p.u.dot(&psi(&(p.a * t.matrix())))
}

/// Index into Θ minimizing `U(R, ·)`; ties go to the earliest entry.
pub fn argmin_theta(r: &Rotation, p: &PotentialParams) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, &t) in p.theta_set.iter().enumerate() {
        let value = potential(r, t, p);
        if value < best.1 {
            best = (i, value);
        }
    }
    best
}

/// `μ_U(R, θ) = U(R, θ) - min over θ' ∈ Θ of U(R, θ')`.
pub fn mu_u(r: &Rotation, theta: f64, p: &PotentialParams) -> f64 {
    potential(r, theta, p) - argmin_theta(r, p).1
}

/// Time derivative of [`grad_r_psi`] along `Ṙ = R ω×`, `θ̇ = v`.
pub fn psi_dot(r: &Rotation, theta: f64, omega: &Vec3, v: f64, p: &PotentialParams) -> Vec3 {
    let warp = rodrigues(theta, &p.u);
    let at = p.a * (r * &warp).matrix();
    let e = emap(&at);
    let w = warp.matrix();
    let d_r = w * e * w.transpose();
    let d_theta = w * e * p.u - skew(&(w * psi(&at))) * p.u;
    d_r * omega + d_theta * v
}

/// The undesired critical points `(Ra(π, v), 0)` for the eigenvectors `v` of
/// `A`.
#[derive(Debug, Clone)]
pub struct CriticalPoints {
    pub points: Vec<ExtendedState>,
    /// False when λ1 = λ2: the first two points are then representatives of a
    /// continuum of critical points.
    pub isolated: bool,
}

pub fn undesired_critical_points(p: &PotentialParams) -> CriticalPoints {
    let points = (0..3)
        .map(|i| ExtendedState::new(rodrigues(PI, &p.spectral.eigenvector(i)), 0.0))
        .collect();
    CriticalPoints {
        points,
        isolated: !p.spectral.repeated_smallest(),
    }
}

/// `α_A(𝒯) = 1 - |𝒯|²_I cos²∠(n, Ā n)` with `n` the rotation axis of `𝒯`.
pub fn warp_alpha(t: &Rotation, p: &PotentialParams) -> f64 {
    let Some(n) = rotation_axis(t) else {
        return 1.0;
    };
    let abar_n = p.spectral.abar * n;
    let cos2 = n.dot(&abar_n).powi(2) / abar_n.norm_squared();
    let d = rot_distance(t);
    1.0 - d * d * cos2
}

/// Constants of the gradient and ψ-rate bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionConstants {
    /// `max{7(λ_M^Ā)²/λ_m^Ā, 6γ}`.
    pub alpha1: f64,
    /// `min{α*_A (λ_m^Ā)²/(2λ_M^Ā), γ/8}` with α*_A replaced by its sampled
    /// minimum. This is an estimate, not a certified lower bound.
    pub alpha2_approx: f64,
    /// Minimum of `α_A` over the flow-set samples.
    pub alpha_a_min: f64,
    /// 1st percentile of `α_A` over the flow-set samples.
    pub alpha_a_p01: f64,
    pub flow_samples: usize,
    /// `2λ_M^Ā`.
    pub c_psi: f64,
    /// `‖Ā‖_F`.
    pub c_r: f64,
    /// `‖Ā‖_F + 2λ_M^Ā`.
    pub c_theta: f64,
}

/// Closed-form constants plus a sampled estimate of α*_A over the flow set
/// (`samples` accepted points, θ uniform in [-π, π]).
pub fn assumption_constants(p: &PotentialParams, samples: usize, seed: u64) -> AssumptionConstants {
    let s = &p.spectral;
    let alpha1 = (7.0 * s.abar_max * s.abar_max / s.abar_min).max(6.0 * p.gamma);
    let c_psi = 2.0 * s.abar_max;
    let c_r = s.abar.norm();
    let c_theta = c_r + 2.0 * s.abar_max;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alphas = Vec::with_capacity(samples);
    let max_attempts = samples.saturating_mul(50).max(1);
    let mut attempts = 0;
    while alphas.len() < samples && attempts < max_attempts {
        attempts += 1;
        let r = random_rotation(&mut rng);
        let theta = rng.random_range(-PI..=PI);
        if mu_u(&r, theta, p) <= p.delta {
            alphas.push(warp_alpha(&transform(&r, theta, p), p));
        }
    }
    alphas.sort_by(f64::total_cmp);
    let alpha_a_min = alphas.first().copied().unwrap_or(f64::NAN);
    let alpha_a_p01 = alphas
        .get(alphas.len() / 100)
        .copied()
        .unwrap_or(f64::NAN);
    let alpha2_approx = (alpha_a_min * s.abar_min * s.abar_min / (2.0 * s.abar_max)).min(p.gamma / 8.0);
    AssumptionConstants {
        alpha1,
        alpha2_approx,
        alpha_a_min,
        alpha_a_p01,
        flow_samples: alphas.len(),
        c_psi,
        c_r,
        c_theta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::angle_axis;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3::from_diagonal(&Vec3::new(a, b, c))
    }

    /// γ = 7/π², δ = 0.8 · (4Δ*/π² - γ) θ_m²/2, Θ = {0.9π}.
    fn fig_params() -> PotentialParams {
        construct_params_with_gamma(diag(2.0, 4.0, 6.0), vec![0.9 * PI], 7.0 / (PI * PI), 0.8)
            .unwrap()
    }

    #[test]
    fn case_two_axis_for_diag_2_4_6() {
        let p = fig_params();
        let s = p.spectral();
        assert_eq!(s.case, SpectralCase::LargeMiddle);
        let expected = Vec3::new(0.0, (2.0f64 / 5.0).sqrt(), (3.0f64 / 5.0).sqrt());
        assert!((p.u() - expected).norm() < 1e-15);
        assert!((s.delta_star - 2.0).abs() < 1e-12);
        assert!((p.delta() - 0.324).abs() < 1e-12, "{}", p.delta());
    }

    #[test]
    fn case_one_axis() {
        let (u, ds) = optimal_axis(&diag(3.0, 3.0, 6.0)).unwrap();
        assert!((u.z * u.z - 0.5).abs() < 1e-12);
        assert!((ds - 1.5).abs() < 1e-12);
        let p = construct_params(diag(3.0, 3.0, 6.0), vec![PI / 2.0], 0.5, 0.5).unwrap();
        assert_eq!(p.spectral().case, SpectralCase::RepeatedSmallest);
        assert!((p.spectral().delta_star - 1.5).abs() < 1e-12);
        assert!(!undesired_critical_points(&p).isolated);
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(matches!(
            construct_params(diag(2.0, 6.0, 6.0), vec![1.0], 0.5, 0.5),
            Err(PotentialError::RepeatedTopEigenvalue(_))
        ));
        assert!(matches!(
            construct_params(diag(2.0, 4.0, 6.0), vec![], 0.5, 0.5),
            Err(PotentialError::EmptyThetaSet)
        ));
        assert!(matches!(
            construct_params(diag(2.0, 4.0, 6.0), vec![4.0], 0.5, 0.5),
            Err(PotentialError::ThetaOutOfRange(_))
        ));
        assert!(matches!(
            construct_params(diag(-1.0, 4.0, 6.0), vec![1.0], 0.5, 0.5),
            Err(PotentialError::NotPositiveDefinite(_))
        ));
        assert!(construct_params(diag(2.0, 4.0, 6.0), vec![1.0], 1.0, 0.5).is_err());
        let mut a = diag(2.0, 4.0, 6.0);
        a[(0, 1)] = 0.1;
        assert!(matches!(
            construct_params(a, vec![1.0], 0.5, 0.5),
            Err(PotentialError::NotSymmetric(_))
        ));
    }

    #[test]
    fn explicit_params_enforce_gamma_bound() {
        let u = Vec3::new(0.0, (0.4f64).sqrt(), (0.6f64).sqrt());
        let bound = 8.0 / (PI * PI);
        let err = PotentialParams::new(diag(2.0, 4.0, 6.0), vec![1.0], u, bound, 0.01).unwrap_err();
        assert!(matches!(err, PotentialError::GammaOutOfRange { .. }));
        let err = PotentialParams::new(diag(2.0, 4.0, 6.0), vec![1.0], u, 0.5, 10.0).unwrap_err();
        assert!(matches!(err, PotentialError::DeltaOutOfRange { .. }));
    }

    #[test]
    fn delta_fn_hand_values() {
        let a = diag(2.0, 4.0, 6.0);
        let u = Vec3::new(0.0, (0.4f64).sqrt(), (0.6f64).sqrt());
        assert!((delta_fn(&u, &Vec3::x(), &a) - 2.8).abs() < 1e-12);
        let min = [Vec3::x(), Vec3::y(), Vec3::z()]
            .iter()
            .map(|v| delta_fn(&u, v, &a))
            .fold(f64::INFINITY, f64::min);
        assert!((min - 2.0).abs() < 1e-12);
        assert!((delta_fn(&Vec3::z(), &Vec3::z(), &a) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let p = fig_params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rotation(&mut rng);
        assert_eq!(transform(&r, 0.0, &p), r);
        let t = transform(&Rotation::identity(), PI, &p);
        assert!((t.matrix() - angle_axis(PI, p.u()).unwrap().matrix()).norm() < 1e-15);
        let back = transform(&transform(&r, 0.8, &p), -0.8, &p);
        assert!((back.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn potential_values() {
        let p = fig_params();
        assert_eq!(potential(&Rotation::identity(), 0.0, &p), 0.0);
        let r = angle_axis(PI, &Vec3::x()).unwrap();
        assert!((potential(&r, 0.0, &p) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn half_turn_closed_form() {
        // U(Ra(π, v), θ) = 4λ_v^Ā + (γ/2)θ² - 2 sin²(θ/2) Δ(v, u)
        let p = fig_params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..3 {
            let v = p.spectral().eigenvector(i);
            let lam_bar = v.dot(&(p.spectral().abar * v));
            let gap = delta_fn(p.u(), &v, p.a());
            let r = angle_axis(PI, &v).unwrap();
            for _ in 0..100 {
                let theta = rng.random_range(-PI..PI);
                let closed = 4.0 * lam_bar + 0.5 * p.gamma() * theta * theta
                    - 2.0 * (theta / 2.0).sin().powi(2) * gap;
                assert!((potential(&r, theta, &p) - closed).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradients_vanish_at_critical_points() {
        let p = fig_params();
        assert_eq!(grad_r_psi(&Rotation::identity(), 0.0, &p), Vec3::zeros());
        assert_eq!(grad_theta(&Rotation::identity(), 0.0, &p), 0.0);
        let cps = undesired_critical_points(&p);
        assert!(cps.isolated);
        let expected = [
            diag(1.0, -1.0, -1.0),
            diag(-1.0, 1.0, -1.0),
            diag(-1.0, -1.0, 1.0),
        ];
        for (cp, m) in cps.points.iter().zip(expected.iter()) {
            assert!((cp.r.matrix() - m).norm() < 1e-15);
            assert!(grad_r_psi(&cp.r, 0.0, &p).norm() < 1e-10);
            assert!(grad_theta(&cp.r, 0.0, &p).abs() < 1e-10);
            assert!(mu_u(&cp.r, 0.0, &p) > p.delta());
        }
    }

    #[test]
    fn mu_u_at_half_turns_matches_closed_form() {
        let p = fig_params();
        for cp in undesired_critical_points(&p).points {
            let v = rotation_axis(&cp.r).unwrap();
            let gap = delta_fn(p.u(), &v, p.a());
            let expected = p
                .theta_set()
                .iter()
                .map(|t| 2.0 * (t / 2.0).sin().powi(2) * gap - 0.5 * p.gamma() * t * t)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((mu_u(&cp.r, 0.0, &p) - expected).abs() < 1e-10);
        }
        assert!(mu_u(&Rotation::identity(), 0.0, &p) <= 0.0);
    }

    #[test]
    fn argmin_ties_go_to_first_entry() {
        let p = construct_params(diag(2.0, 4.0, 6.0), vec![0.5, 0.5], 0.5, 0.5).unwrap();
        assert_eq!(argmin_theta(&Rotation::identity(), &p).0, 0);
        let q = construct_params(diag(2.0, 4.0, 6.0), vec![0.9 * PI, 0.3], 0.5, 0.5).unwrap();
        let (i, v) = argmin_theta(&Rotation::identity(), &q);
        assert_eq!(i, 1);
        assert_eq!(v, potential(&Rotation::identity(), 0.3, &q));
    }

    #[test]
    fn constants_for_diag_2_4_6() {
        let p = fig_params();
        let c = assumption_constants(&p, 2_000, 9);
        assert!((c.c_psi - 10.0).abs() < 1e-12);
        assert!((c.c_r - 50f64.sqrt()).abs() < 1e-12);
        assert!((c.c_theta - (50f64.sqrt() + 10.0)).abs() < 1e-12);
        assert!((c.alpha1 - 175.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.flow_samples, 2_000);
        assert!(c.alpha_a_min > 0.0 && c.alpha_a_min <= c.alpha_a_p01);
        assert!(c.alpha2_approx > 0.0);
    }

    #[test]
    fn psi_dot_is_zero_when_stationary() {
        let p = fig_params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_rotation(&mut rng);
        assert_eq!(psi_dot(&r, 0.3, &Vec3::zeros(), 0.0, &p), Vec3::zeros());
    }
}
