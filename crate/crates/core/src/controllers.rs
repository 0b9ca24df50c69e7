//! The θ hybrid mechanism, the feedback laws and the closed-loop systems.
//!
//! All laws share the feed-forward term `Υ` and the body-frame gradient of
//! the warped potential. They differ in how damping and the θ jumps reach
//! the torque:
//!
//! - basic: `τ = Υ - 2k_R ∇ψ(R_e, θ) - k_ω ω_e`, θ jumps show up in τ;
//! - smooth: the gradient is filtered through ζ, so τ is continuous;
//! - velocity-free: damping comes from an auxiliary rotation `R̃`;
//! - non-hybrid: the basic law with θ frozen at zero.

use std::fmt;

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::hybrid::HybridSystem;
use crate::potential::{argmin_theta, grad_r_psi, grad_theta, mu_u, potential, psi_dot, PotentialParams};
use crate::rigid_body::{
    check_acceleration, sigma, upsilon, ErrorState, Inertia, MeasurementNoise, NoiseSample, ReferenceProfile,
};
use crate::so3::{exp_so3, polar_factor, psi, skew, Mat3, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("gain {name} must be positive and finite, got {value}")]
    InvalidGain { name: &'static str, value: f64 },
    #[error("Gamma must be symmetric positive definite")]
    GammaNotPositiveDefinite,
    #[error("delta_prime = {delta_prime} must lie in (0, delta = {delta})")]
    DeltaPrimeOutOfRange { delta_prime: f64, delta: f64 },
    #[error("unknown controller kind {0:?}")]
    UnknownKind(String),
    #[error("invalid noise configuration: {0}")]
    Noise(String),
}

/// ζ dynamics of the smoothed controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZetaVariant {
    /// `ζ̇ = -k_ζ (ζ - ∇ψ)`.
    Standard,
    /// `ζ̇ = ψ̇ + ω_e/ϱ - k_ζ (ζ - ∇ψ)`.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Basic,
    NonHybrid,
    Smooth(ZetaVariant),
    VelocityFree,
}

impl ControllerKind {
    pub const NAMES: [&'static str; 5] = ["basic", "non_hybrid", "smooth", "smooth_relaxed", "velocity_free"];

    pub fn by_name(name: &str) -> Result<Self, ControllerError> {
        match name {
            "basic" => Ok(Self::Basic),
            "non_hybrid" => Ok(Self::NonHybrid),
            "smooth" => Ok(Self::Smooth(ZetaVariant::Standard)),
            "smooth_relaxed" => Ok(Self::Smooth(ZetaVariant::Relaxed)),
            "velocity_free" => Ok(Self::VelocityFree),
            other => Err(ControllerError::UnknownKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::NonHybrid => "non_hybrid",
            Self::Smooth(ZetaVariant::Standard) => "smooth",
            Self::Smooth(ZetaVariant::Relaxed) => "smooth_relaxed",
            Self::VelocityFree => "velocity_free",
        }
    }

    pub fn is_hybrid(&self) -> bool {
        !matches!(self, Self::NonHybrid)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-fatal findings of [`ControllerGains::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum GainWarning {
    /// ϱ is not below `(δ - δ′)/c_ψ²`, so the undesired critical points of W
    /// are not guaranteed to lie in the jump set.
    RhoAboveBound { rho: f64, bound: f64 },
    /// k_ζ is not above the sufficient threshold k_ζ*.
    KZetaBelowThreshold { k_zeta: f64, threshold: f64 },
}

impl fmt::Display for GainWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RhoAboveBound { rho, bound } => write!(
                f,
                "rho = {rho} is not below (delta - delta_prime)/c_psi^2 = {bound}; \
                 critical points of W may leave the jump set"
            ),
            Self::KZetaBelowThreshold { k_zeta, threshold } => write!(
                f,
                "k_zeta = {k_zeta} does not exceed the sufficient bound k_zeta* = {threshold}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k_r: f64,
    pub k_omega: f64,
    pub k_theta: f64,
    pub k_zeta: f64,
    pub k_beta: f64,
    pub gamma_mat: Mat3,
    pub rho: f64,
    pub delta_prime: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_r: 1.5,
            k_omega: 0.2,
            k_theta: 50.0,
            k_zeta: 150.0,
            k_beta: 3.0,
            gamma_mat: Mat3::identity() * 30.0,
            rho: 0.0146,
            delta_prime: 0.162,
        }
    }
}

impl ControllerGains {
    /// Checks the gains used by `kind` and returns warnings for sufficient
    /// conditions that are not met.
    pub fn validate(&self, kind: ControllerKind, p: &PotentialParams) -> Result<Vec<GainWarning>, ControllerError> {
        let positive = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ControllerError::InvalidGain { name, value })
            }
        };
        positive("k_r", self.k_r)?;
        positive("k_theta", self.k_theta)?;
        let mut warnings = Vec::new();
        match kind {
            ControllerKind::Basic | ControllerKind::NonHybrid => positive("k_omega", self.k_omega)?,
            ControllerKind::Smooth(_) => {
                positive("k_omega", self.k_omega)?;
                positive("k_zeta", self.k_zeta)?;
                positive("rho", self.rho)?;
                if !(self.delta_prime > 0.0 && self.delta_prime < p.delta()) {
                    return Err(ControllerError::DeltaPrimeOutOfRange {
                        delta_prime: self.delta_prime,
                        delta: p.delta(),
                    });
                }
                let bound = rho_bound(p, self.delta_prime);
                if self.rho >= bound {
                    warnings.push(GainWarning::RhoAboveBound { rho: self.rho, bound });
                }
                let threshold = k_zeta_threshold(p, self);
                if self.k_zeta <= threshold {
                    warnings.push(GainWarning::KZetaBelowThreshold {
                        k_zeta: self.k_zeta,
                        threshold,
                    });
                }
            }
            ControllerKind::VelocityFree => {
                positive("k_beta", self.k_beta)?;
                let g = &self.gamma_mat;
                if !g.iter().all(|v| v.is_finite()) || (g - g.transpose()).amax() > 1e-12 * g.amax().max(1.0) {
                    return Err(ControllerError::GammaNotPositiveDefinite);
                }
                if SymmetricEigen::new(*g).eigenvalues.min() <= 0.0 {
                    return Err(ControllerError::GammaNotPositiveDefinite);
                }
            }
        }
        Ok(warnings)
    }
}

/// `(δ - δ′)/c_ψ²` with `c_ψ = 2λ_M^Ā`.
pub fn rho_bound(p: &PotentialParams, delta_prime: f64) -> f64 {
    let c_psi = 2.0 * p.spectral().abar_max;
    (p.delta() - delta_prime) / (c_psi * c_psi)
}

/// `k_ζ* = max{k_R(1 + ϱc_R)²/(ϱk_ω), c_θ²k_θϱ}`.
pub fn k_zeta_threshold(p: &PotentialParams, g: &ControllerGains) -> f64 {
    let s = p.spectral();
    let c_r = s.abar.norm();
    let c_theta = c_r + 2.0 * s.abar_max;
    let a = g.k_r * (1.0 + g.rho * c_r).powi(2) / (g.rho * g.k_omega);
    let b = c_theta * c_theta * g.k_theta * g.rho;
    a.max(b)
}

/// Reference signals needed by the feed-forward term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefInputs {
    pub omega_r: Vec3,
    pub z: Vec3,
}

impl RefInputs {
    pub fn zero() -> Self {
        Self {
            omega_r: Vec3::zeros(),
            z: Vec3::zeros(),
        }
    }
}

/// `θ̇ = -k_θ ∇_θ U(R, θ)`.
pub fn theta_flow(r: &Rotation, theta: f64, p: &PotentialParams, gains: &ControllerGains) -> f64 {
    -gains.k_theta * grad_theta(r, theta, p)
}

/// `θ⁺`: the element of Θ minimizing `U(R, ·)`, earliest on ties.
pub fn theta_jump(r: &Rotation, _theta: f64, p: &PotentialParams) -> f64 {
    p.theta_set()[argmin_theta(r, p).0]
}

pub fn in_flow_set(r: &Rotation, theta: f64, p: &PotentialParams) -> bool {
    mu_u(r, theta, p) <= p.delta()
}

pub fn in_jump_set(r: &Rotation, theta: f64, p: &PotentialParams) -> bool {
    mu_u(r, theta, p) >= p.delta()
}

pub fn torque_basic(
    e: &ErrorState,
    theta: f64,
    refs: &RefInputs,
    p: &PotentialParams,
    gains: &ControllerGains,
    j: &Inertia,
) -> Vec3 {
    upsilon(&e.re, &refs.omega_r, &refs.z, j) - 2.0 * gains.k_r * grad_r_psi(&e.re, theta, p) - gains.k_omega * e.omega_e
}

/// `τ = Υ - 2k_R ψ(A R_e) - k_ω ω_e`.
pub fn torque_non_hybrid(
    e: &ErrorState,
    refs: &RefInputs,
    p: &PotentialParams,
    gains: &ControllerGains,
    j: &Inertia,
) -> Vec3 {
    upsilon(&e.re, &refs.omega_r, &refs.z, j) - 2.0 * gains.k_r * psi(&(p.a() * e.re.matrix())) - gains.k_omega * e.omega_e
}

/// `τ = Υ - 2k_R ζ - k_ω ω_e`. Does not depend on θ.
pub fn torque_smooth(e: &ErrorState, zeta: &Vec3, refs: &RefInputs, gains: &ControllerGains, j: &Inertia) -> Vec3 {
    upsilon(&e.re, &refs.omega_r, &refs.z, j) - 2.0 * gains.k_r * zeta - gains.k_omega * e.omega_e
}

pub fn zeta_flow(
    variant: ZetaVariant,
    e: &ErrorState,
    theta: f64,
    zeta: &Vec3,
    p: &PotentialParams,
    gains: &ControllerGains,
) -> Vec3 {
    let pull = -gains.k_zeta * (zeta - grad_r_psi(&e.re, theta, p));
    match variant {
        ZetaVariant::Standard => pull,
        ZetaVariant::Relaxed => {
            let v = theta_flow(&e.re, theta, p, gains);
            psi_dot(&e.re, theta, &e.omega_e, v, p) + e.omega_e / gains.rho + pull
        }
    }
}

/// `W = U + ϱ‖ζ - ∇ψ‖²`.
pub fn w_value(re: &Rotation, theta: f64, zeta: &Vec3, p: &PotentialParams, rho: f64) -> f64 {
    potential(re, theta, p) + rho * (zeta - grad_r_psi(re, theta, p)).norm_squared()
}

/// Index into Θ minimizing `W(R_e, ·, ζ)`; ties go to the earliest entry.
pub fn argmin_theta_w(re: &Rotation, zeta: &Vec3, p: &PotentialParams, rho: f64) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, &t) in p.theta_set().iter().enumerate() {
        let value = w_value(re, t, zeta, p, rho);
        if value < best.1 {
            best = (i, value);
        }
    }
    best
}

pub fn mu_w(re: &Rotation, theta: f64, zeta: &Vec3, p: &PotentialParams, rho: f64) -> f64 {
    w_value(re, theta, zeta, p, rho) - argmin_theta_w(re, zeta, p, rho).1
}

pub fn in_flow_set_smooth(re: &Rotation, theta: f64, zeta: &Vec3, p: &PotentialParams, gains: &ControllerGains) -> bool {
    mu_w(re, theta, zeta, p, gains.rho) <= gains.delta_prime
}

pub fn in_jump_set_smooth(re: &Rotation, theta: f64, zeta: &Vec3, p: &PotentialParams, gains: &ControllerGains) -> bool {
    mu_w(re, theta, zeta, p, gains.rho) >= gains.delta_prime
}

/// `β = Γ ∇ψ(R̃, θ̄)`.
pub fn beta(rt: &Rotation, theta_bar: f64, p: &PotentialParams, gains: &ControllerGains) -> Vec3 {
    gains.gamma_mat * grad_r_psi(rt, theta_bar, p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxTangent {
    pub rt_dot: Mat3,
    pub theta_bar_dot: f64,
}

/// `Ṙ̃ = R̃ (ω_e - β)×`, `θ̄̇ = -k_θ ∇_θ U(R̃, θ̄)`.
pub fn aux_flow(
    rt: &Rotation,
    theta_bar: f64,
    omega_e: &Vec3,
    p: &PotentialParams,
    gains: &ControllerGains,
) -> AuxTangent {
    AuxTangent {
        rt_dot: rt.matrix() * skew(&(omega_e - beta(rt, theta_bar, p, gains))),
        theta_bar_dot: theta_flow(rt, theta_bar, p, gains),
    }
}

/// `τ = Υ - 2k_R ∇ψ(R_e, θ) - 2k_β ∇ψ(R̃, θ̄)`. Takes no angular velocity.
#[allow(clippy::too_many_arguments)]
pub fn torque_velocity_free(
    re: &Rotation,
    theta: f64,
    rt: &Rotation,
    theta_bar: f64,
    refs: &RefInputs,
    p: &PotentialParams,
    gains: &ControllerGains,
    j: &Inertia,
) -> Vec3 {
    upsilon(re, &refs.omega_r, &refs.z, j)
        - 2.0 * gains.k_r * grad_r_psi(re, theta, p)
        - 2.0 * gains.k_beta * grad_r_psi(rt, theta_bar, p)
}

/// Dimension of the flat closed-loop state.
pub const STATE_DIM: usize = 38;

const RE: usize = 0;
const THETA: usize = 9;
const OMEGA_E: usize = 10;
const RR: usize = 13;
const OMEGA_R: usize = 22;
const ZETA: usize = 25;
const RTILDE: usize = 28;
const THETA_BAR: usize = 37;

/// Closed-loop state shared by every controller. Fields a controller does
/// not use stay constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopState {
    pub re: Rotation,
    pub theta: f64,
    pub omega_e: Vec3,
    pub rr: Rotation,
    pub omega_r: Vec3,
    pub zeta: Vec3,
    pub rtilde: Rotation,
    pub theta_bar: f64,
}

fn read_mat(x: &[f64], at: usize) -> Mat3 {
    Mat3::from_row_slice(&x[at..at + 9])
}

fn write_mat(x: &mut [f64], at: usize, m: &Mat3) {
    for r in 0..3 {
        for c in 0..3 {
            x[at + 3 * r + c] = m[(r, c)];
        }
    }
}

fn read_vec(x: &[f64], at: usize) -> Vec3 {
    Vec3::new(x[at], x[at + 1], x[at + 2])
}

fn write_vec(x: &mut [f64], at: usize, v: &Vec3) {
    x[at..at + 3].copy_from_slice(v.as_slice());
}

impl LoopState {
    /// Target state: zero errors, θ = θ̄ = 0, ζ = 0, `R̃ = I`.
    pub fn at_target(rr: Rotation, omega_r: Vec3) -> Self {
        Self {
            re: Rotation::identity(),
            theta: 0.0,
            omega_e: Vec3::zeros(),
            rr,
            omega_r,
            zeta: Vec3::zeros(),
            rtilde: Rotation::identity(),
            theta_bar: 0.0,
        }
    }

    /// Flattens into the solver layout.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = vec![0.0; STATE_DIM];
        write_mat(&mut x, RE, self.re.matrix());
        x[THETA] = self.theta;
        write_vec(&mut x, OMEGA_E, &self.omega_e);
        write_mat(&mut x, RR, self.rr.matrix());
        write_vec(&mut x, OMEGA_R, &self.omega_r);
        write_vec(&mut x, ZETA, &self.zeta);
        write_mat(&mut x, RTILDE, self.rtilde.matrix());
        x[THETA_BAR] = self.theta_bar;
        x
    }

    /// Reads a flat state produced by the solver. Rotation blocks are taken
    /// as they are; the solver keeps them projected.
    pub fn from_slice(x: &[f64]) -> Self {
        assert_eq!(x.len(), STATE_DIM, "closed-loop state has {STATE_DIM} entries");
        Self {
            re: Rotation::from_matrix_unchecked(read_mat(x, RE)),
            theta: x[THETA],
            omega_e: read_vec(x, OMEGA_E),
            rr: Rotation::from_matrix_unchecked(read_mat(x, RR)),
            omega_r: read_vec(x, OMEGA_R),
            zeta: read_vec(x, ZETA),
            rtilde: Rotation::from_matrix_unchecked(read_mat(x, RTILDE)),
            theta_bar: x[THETA_BAR],
        }
    }

    pub fn error(&self) -> ErrorState {
        ErrorState {
            re: self.re,
            omega_e: self.omega_e,
        }
    }

    /// Auxiliary attitude `R̄ = R_e R̃ᵀ`.
    pub fn rbar(&self) -> Rotation {
        self.re * self.rtilde.transpose()
    }
}

/// The state as seen through noisy sensors: `R_e,y = R_e exp(n_R×)`,
/// `ω_e,y = ω + n_ω - R_e,yᵀ ω_r` and `R̃_y = R̄ᵀ R_e,y`.
pub fn measured_state(s: &LoopState, n: &NoiseSample) -> LoopState {
    let dr = exp_so3(&n.n_r);
    let re_y = s.re * dr;
    let omega = s.omega_e + s.re.transpose().apply(&s.omega_r);
    LoopState {
        re: re_y,
        omega_e: omega + n.n_w - re_y.transpose().apply(&s.omega_r),
        rtilde: s.rtilde * dr,
        ..*s
    }
}

/// Per-sample data recorded by [`ClosedLoop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRecord {
    pub kind: ControllerKind,
    /// Torque applied from this sample onwards.
    pub torque: Vec3,
    /// Jump indicator evaluated on measurements (jump iff ≥ 0).
    pub indicator: f64,
    pub in_jump_set: bool,
    /// Measurement noise held at this sample (zero without noise).
    pub noise: NoiseSample,
}

/// Measured error signals seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Measured {
    re: Rotation,
    omega_e: Vec3,
    rtilde: Rotation,
}

/// Rigid body, reference generator and one controller as a hybrid system.
///
/// With noise enabled a sample `(n_R, n_ω)` is drawn at the start of each
/// step and held through the step's RK4 stages and any jumps at that
/// instant. The controller sees `R_y = R exp(n_R×)` and `ω_y = ω + n_ω`; the
/// plant integrates the true state.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    kind: ControllerKind,
    params: PotentialParams,
    gains: ControllerGains,
    inertia: Inertia,
    reference: ReferenceProfile,
    m_bound: f64,
    noise: Option<MeasurementNoise>,
    current: NoiseSample,
}

impl ClosedLoop {
    pub fn new(
        kind: ControllerKind,
        params: PotentialParams,
        gains: ControllerGains,
        inertia: Inertia,
        reference: ReferenceProfile,
        m_bound: f64,
    ) -> Result<Self, ControllerError> {
        gains.validate(kind, &params)?;
        Ok(Self::new_unvalidated(kind, params, gains, inertia, reference, m_bound))
    }

    /// Skips gain validation. Meant for robustness experiments such as
    /// destabilizing gains.
    pub fn new_unvalidated(
        kind: ControllerKind,
        params: PotentialParams,
        gains: ControllerGains,
        inertia: Inertia,
        reference: ReferenceProfile,
        m_bound: f64,
    ) -> Self {
        Self {
            kind,
            params,
            gains,
            inertia,
            reference,
            m_bound,
            noise: None,
            current: NoiseSample::zero(),
        }
    }

    pub fn with_noise(mut self, noise: MeasurementNoise) -> Self {
        self.noise = if noise.is_silent() { None } else { Some(noise) };
        self
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn params(&self) -> &PotentialParams {
        &self.params
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn inertia(&self) -> &Inertia {
        &self.inertia
    }

    pub fn reference(&self) -> ReferenceProfile {
        self.reference
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }

    /// Noise sample currently held.
    pub fn current_noise(&self) -> NoiseSample {
        self.current
    }

    fn refs(&self, t: f64, s: &LoopState) -> RefInputs {
        RefInputs {
            omega_r: s.omega_r,
            z: self.reference.z(t),
        }
    }

    fn measure(&self, s: &LoopState) -> Measured {
        if self.noise.is_none() {
            return Measured {
                re: s.re,
                omega_e: s.omega_e,
                rtilde: s.rtilde,
            };
        }
        let y = measured_state(s, &self.current);
        Measured {
            re: y.re,
            omega_e: y.omega_e,
            rtilde: y.rtilde,
        }
    }

    /// Torque applied at `(t, s)` under the currently held noise sample.
    pub fn torque(&self, t: f64, s: &LoopState) -> Vec3 {
        let m = self.measure(s);
        let refs = self.refs(t, s);
        let e = ErrorState {
            re: m.re,
            omega_e: m.omega_e,
        };
        let (p, g, j) = (&self.params, &self.gains, &self.inertia);
        match self.kind {
            ControllerKind::Basic => torque_basic(&e, s.theta, &refs, p, g, j),
            ControllerKind::NonHybrid => torque_non_hybrid(&e, &refs, p, g, j),
            ControllerKind::Smooth(_) => torque_smooth(&e, &s.zeta, &refs, g, j),
            ControllerKind::VelocityFree => torque_velocity_free(&m.re, s.theta, &m.rtilde, s.theta_bar, &refs, p, g, j),
        }
    }

    fn indicators(&self, s: &LoopState) -> (f64, f64) {
        let m = self.measure(s);
        let p = &self.params;
        match self.kind {
            ControllerKind::Basic => (mu_u(&m.re, s.theta, p) - p.delta(), f64::NEG_INFINITY),
            ControllerKind::NonHybrid => (f64::NEG_INFINITY, f64::NEG_INFINITY),
            ControllerKind::Smooth(_) => (
                mu_w(&m.re, s.theta, &s.zeta, p, self.gains.rho) - self.gains.delta_prime,
                f64::NEG_INFINITY,
            ),
            ControllerKind::VelocityFree => (
                mu_u(&m.re, s.theta, p) - p.delta(),
                mu_u(&m.rtilde, s.theta_bar, p) - p.delta(),
            ),
        }
    }

    /// Time derivative of the closed-loop state in the flat layout.
    fn derivative(&self, t: f64, s: &LoopState, dx: &mut [f64]) {
        let tau = self.torque(t, s);
        let z = self.reference.z(t);
        let j = &self.inertia;
        let m = self.measure(s);
        let p = &self.params;
        let g = &self.gains;

        dx.fill(0.0);
        let omega_dot =
            j.inverse() * (sigma(&s.re, &s.omega_e, &s.omega_r, j) * s.omega_e - upsilon(&s.re, &s.omega_r, &z, j) + tau);
        write_mat(dx, RE, &(s.re.matrix() * skew(&s.omega_e)));
        write_vec(dx, OMEGA_E, &omega_dot);
        write_mat(dx, RR, &(s.rr.matrix() * skew(&s.omega_r)));
        write_vec(dx, OMEGA_R, &z);
        if self.kind.is_hybrid() {
            dx[THETA] = theta_flow(&m.re, s.theta, p, g);
        }
        if let ControllerKind::Smooth(variant) = self.kind {
            let e = ErrorState {
                re: m.re,
                omega_e: m.omega_e,
            };
            write_vec(dx, ZETA, &zeta_flow(variant, &e, s.theta, &s.zeta, p, g));
        }
        if self.kind == ControllerKind::VelocityFree {
            let b = beta(&m.rtilde, s.theta_bar, p, g);
            // Ṙ̃ = R̃ (ω_e - R_eᵀ R_e,y β_y)×
            let b_true = (s.re.transpose() * m.re).apply(&b);
            write_mat(dx, RTILDE, &(s.rtilde.matrix() * skew(&(s.omega_e - b_true))));
            dx[THETA_BAR] = theta_flow(&m.rtilde, s.theta_bar, p, g);
        }
    }

    /// Post-jump state. Only the warping angles change.
    pub fn jump_state(&self, s: &LoopState) -> LoopState {
        let m = self.measure(s);
        let p = &self.params;
        let (i1, i2) = self.indicators(s);
        let mut next = *s;
        match self.kind {
            ControllerKind::Basic => next.theta = theta_jump(&m.re, s.theta, p),
            ControllerKind::NonHybrid => {}
            ControllerKind::Smooth(_) => {
                let (k, _) = argmin_theta_w(&m.re, &s.zeta, p, self.gains.rho);
                next.theta = p.theta_set()[k];
            }
            ControllerKind::VelocityFree => {
                if i1 >= 0.0 {
                    next.theta = theta_jump(&m.re, s.theta, p);
                }
                if i2 >= 0.0 {
                    next.theta_bar = theta_jump(&m.rtilde, s.theta_bar, p);
                }
            }
        }
        next
    }
}

impl HybridSystem for ClosedLoop {
    type Record = LoopRecord;

    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn flow(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        self.derivative(t, &LoopState::from_slice(x), dx);
    }

    fn jump(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        self.jump_state(&LoopState::from_slice(x)).to_vec()
    }

    fn jump_indicator(&self, _t: f64, x: &[f64]) -> f64 {
        let (a, b) = self.indicators(&LoopState::from_slice(x));
        a.max(b)
    }

    fn project(&self, x: &mut [f64]) {
        for at in [RE, RR, RTILDE] {
            let m = read_mat(x, at);
            if m.iter().all(|v| v.is_finite()) && m.determinant() > 0.0 {
                write_mat(x, at, &polar_factor(&m));
            }
        }
    }

    fn begin_step(&mut self, _t: f64) {
        if let Some(noise) = self.noise.as_mut() {
            self.current = noise.sample();
        }
    }

    fn check(&self, t: f64, x: &[f64]) -> Result<(), String> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite state".into());
        }
        check_acceleration(t, &self.reference.z(t), self.m_bound).map_err(|e| e.to_string())
    }

    fn record(&self, t: f64, x: &[f64]) -> LoopRecord {
        let s = LoopState::from_slice(x);
        let (a, b) = self.indicators(&s);
        let indicator = a.max(b);
        LoopRecord {
            kind: self.kind,
            torque: self.torque(t, &s),
            indicator,
            in_jump_set: indicator >= 0.0,
            noise: self.current,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{construct_params, undesired_critical_points, ExtendedState};
    use crate::so3::{angle_axis, random_rotation, random_unit, rodrigues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn params() -> PotentialParams {
        construct_params(Mat3::from_diagonal(&Vec3::new(2.0, 4.0, 6.0)), vec![0.9 * PI], 0.875, 0.8).unwrap()
    }

    fn inertia() -> Inertia {
        Inertia::diagonal(0.0159, 0.0150, 0.0297).unwrap()
    }

    #[test]
    fn theta_flow_examples() {
        let p = params();
        let g = ControllerGains::default();
        assert_eq!(theta_flow(&Rotation::identity(), 0.0, &p, &g), 0.0);
        // 𝒯 = I gives ψ(A𝒯) = 0, so only the quadratic term remains.
        let theta = 0.7;
        let r = rodrigues(theta, p.u()).transpose();
        let expected = -g.k_theta * p.gamma() * theta;
        assert!((theta_flow(&r, theta, &p, &g) - expected).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let th = rng.random_range(-PI..PI);
            assert!(theta_flow(&r, th, &p, &g) * grad_theta(&r, th, &p) <= 0.0);
        }
    }

    #[test]
    fn theta_jump_examples() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let th = rng.random_range(-PI..PI);
            assert_eq!(theta_jump(&r, th, &p), 0.9 * PI);
            if in_jump_set(&r, th, &p) {
                let drop = potential(&r, th, &p) - potential(&r, theta_jump(&r, th, &p), &p);
                assert!(drop >= p.delta() - 1e-12);
            }
        }
    }

    #[test]
    fn theta_jump_tie_goes_to_first() {
        let a = Mat3::from_diagonal(&Vec3::new(2.0, 4.0, 6.0));
        let p = construct_params(a, vec![0.5, 0.5], 0.5, 0.5).unwrap();
        assert_eq!(argmin_theta(&Rotation::identity(), &p).0, 0);
        assert_eq!(theta_jump(&Rotation::identity(), 0.0, &p), 0.5);
    }

    #[test]
    fn set_membership() {
        let p = params();
        assert!(in_flow_set(&Rotation::identity(), 0.0, &p));
        assert!(!in_jump_set(&Rotation::identity(), 0.0, &p));
        for cp in undesired_critical_points(&p).points {
            assert!(in_jump_set(&cp.r, cp.theta, &p));
        }
        // Scan θ at R = I for a point on the boundary μ_U = δ.
        let r = Rotation::identity();
        let (mut lo, mut hi) = (0.0, PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mu_u(&r, mid, &p) < p.delta() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = ExtendedState::new(r, hi);
        let mu = mu_u(&b.r, b.theta, &p);
        assert!((mu - p.delta()).abs() < 1e-12);
        // Closed sets: with the exact boundary value both hold.
        assert!(mu_u(&b.r, b.theta, &p) >= p.delta());
        assert!(in_flow_set(&r, lo, &p) && in_jump_set(&r, hi, &p));
    }

    #[test]
    fn torques_vanish_at_target() {
        let p = params();
        let g = ControllerGains::default();
        let j = inertia();
        let e = ErrorState {
            re: Rotation::identity(),
            omega_e: Vec3::zeros(),
        };
        let refs = RefInputs::zero();
        let id = Rotation::identity();
        assert_eq!(torque_basic(&e, 0.0, &refs, &p, &g, &j).norm(), 0.0);
        assert_eq!(torque_non_hybrid(&e, &refs, &p, &g, &j).norm(), 0.0);
        assert_eq!(torque_smooth(&e, &Vec3::zeros(), &refs, &g, &j).norm(), 0.0);
        assert_eq!(torque_velocity_free(&id, 0.0, &id, 0.0, &refs, &p, &g, &j).norm(), 0.0);
    }

    #[test]
    fn non_hybrid_matches_basic_at_zero_theta() {
        let p = params();
        let g = ControllerGains::default();
        let j = inertia();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let e = ErrorState {
                re: random_rotation(&mut rng),
                omega_e: random_unit(&mut rng),
            };
            let refs = RefInputs {
                omega_r: random_unit(&mut rng),
                z: random_unit(&mut rng),
            };
            let a = torque_basic(&e, 0.0, &refs, &p, &g, &j);
            let b = torque_non_hybrid(&e, &refs, &p, &g, &j);
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn non_hybrid_has_no_pull_at_half_turn() {
        let p = params();
        let g = ControllerGains::default();
        let j = inertia();
        let refs = RefInputs {
            omega_r: Vec3::new(0.1, 0.2, 0.3),
            z: Vec3::new(0.0, -1.0, 0.1),
        };
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-6, 0.0] {
            let e = ErrorState {
                re: angle_axis(PI - eps, &Vec3::z()).unwrap(),
                omega_e: Vec3::zeros(),
            };
            let tau = torque_non_hybrid(&e, &refs, &p, &g, &j);
            let ff = upsilon(&e.re, &refs.omega_r, &refs.z, &j);
            let pull = (tau - ff).norm();
            assert!(pull <= prev);
            prev = pull;
        }
        assert!(prev < 1e-14);
    }

    #[test]
    fn smooth_pieces() {
        let p = params();
        let g = ControllerGains::default();
        let id = Rotation::identity();
        assert_eq!(w_value(&id, 0.0, &Vec3::zeros(), &p, g.rho), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let th = rng.random_range(-PI..PI);
            let grad = grad_r_psi(&r, th, &p);
            assert!((w_value(&r, th, &grad, &p, g.rho) - potential(&r, th, &p)).abs() < 1e-14);
            let e = ErrorState {
                re: r,
                omega_e: Vec3::zeros(),
            };
            assert_eq!(zeta_flow(ZetaVariant::Standard, &e, th, &grad, &p, &g).norm(), 0.0);
        }
        // The bound on ϱ used below is far smaller than the shipped ϱ.
        let rho = 0.9 * rho_bound(&p, g.delta_prime);
        for cp in undesired_critical_points(&p).points {
            assert!(mu_w(&cp.r, cp.theta, &Vec3::zeros(), &p, rho) > g.delta_prime);
        }
    }

    #[test]
    fn smooth_torque_ignores_theta_jump() {
        let p = params();
        let g = ControllerGains::default();
        let lp = ClosedLoop::new(
            ControllerKind::Smooth(ZetaVariant::Standard),
            p.clone(),
            g,
            inertia(),
            ReferenceProfile::Sine,
            2.0,
        )
        .unwrap();
        let mut s = LoopState::at_target(Rotation::identity(), Vec3::zeros());
        s.re = angle_axis(PI - 1e-9, &Vec3::z()).unwrap();
        s.zeta = Vec3::new(0.1, -0.2, 0.3);
        let after = lp.jump_state(&s);
        assert_eq!(after.theta, 0.9 * PI);
        assert_eq!(lp.torque(0.0, &s), lp.torque(0.0, &after));
    }

    #[test]
    fn aux_flow_examples() {
        let p = params();
        let g = ControllerGains::default();
        let id = Rotation::identity();
        let d = aux_flow(&id, 0.0, &Vec3::zeros(), &p, &g);
        assert_eq!(d.rt_dot.norm(), 0.0);
        assert_eq!(d.theta_bar_dot, 0.0);
        assert_eq!(beta(&id, 0.0, &p, &g).norm(), 0.0);
        let damping = 2.0 * g.k_beta * g.gamma_mat.try_inverse().unwrap();
        assert!((damping - Mat3::identity() * g.k_omega).norm() < 1e-15);
    }

    #[test]
    fn gain_validation() {
        let p = params();
        let g = ControllerGains::default();
        assert!(g.validate(ControllerKind::Basic, &p).unwrap().is_empty());
        let warnings = g.validate(ControllerKind::Smooth(ZetaVariant::Standard), &p).unwrap();
        assert!(warnings.iter().any(|w| matches!(w, GainWarning::RhoAboveBound { .. })));
        let bound = rho_bound(&p, g.delta_prime);
        assert!((bound - 0.00162).abs() < 1e-12);

        let bad = ControllerGains { k_r: -1.0, ..g.clone() };
        assert!(bad.validate(ControllerKind::Basic, &p).is_err());
        let bad = ControllerGains {
            delta_prime: p.delta(),
            ..g.clone()
        };
        assert!(bad.validate(ControllerKind::Smooth(ZetaVariant::Relaxed), &p).is_err());
        let bad = ControllerGains {
            gamma_mat: Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0)),
            ..g.clone()
        };
        assert_eq!(
            bad.validate(ControllerKind::VelocityFree, &p),
            Err(ControllerError::GammaNotPositiveDefinite)
        );
    }

    #[test]
    fn kind_names_round_trip() {
        for name in ControllerKind::NAMES {
            assert_eq!(ControllerKind::by_name(name).unwrap().name(), name);
        }
        assert!(ControllerKind::by_name("pid").is_err());
    }

    #[test]
    fn state_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = LoopState {
            re: random_rotation(&mut rng),
            theta: 0.3,
            omega_e: random_unit(&mut rng),
            rr: random_rotation(&mut rng),
            omega_r: random_unit(&mut rng),
            zeta: random_unit(&mut rng),
            rtilde: random_rotation(&mut rng),
            theta_bar: -0.2,
        };
        assert_eq!(LoopState::from_slice(&s.to_vec()), s);
        assert!((s.rbar() * s.rtilde).matrix().relative_eq(s.re.matrix(), 1e-14, 1e-14));
    }
}
