#![allow(dead_code)]

use std::f64::consts::PI;

use hybrid_attitude::controllers::{ClosedLoop, ControllerGains, ControllerKind, LoopState};
use hybrid_attitude::potential::{construct_params, PotentialParams};
use hybrid_attitude::rigid_body::{Inertia, MeasurementNoise, ReferenceProfile};
use hybrid_attitude::so3::angle_axis;
use hybrid_attitude::{Mat3, Rotation, Vec3};

pub fn a_matrix() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(2.0, 4.0, 6.0))
}

/// `γ = gamma_frac · 4Δ*/π²`, `δ = 0.8 (4Δ*/π² - γ) θ_m²/2`, Θ = {0.9π}.
pub fn params(gamma_frac: f64) -> PotentialParams {
    construct_params(a_matrix(), vec![0.9 * PI], gamma_frac, 0.8).unwrap()
}

pub fn inertia() -> Inertia {
    Inertia::diagonal(0.0159, 0.0150, 0.0297).unwrap()
}

pub fn closed_loop(kind: ControllerKind, gamma_frac: f64) -> ClosedLoop {
    ClosedLoop::new(
        kind,
        params(gamma_frac),
        ControllerGains::default(),
        inertia(),
        ReferenceProfile::Sine,
        2.0,
    )
    .unwrap()
}

pub fn noisy(lp: ClosedLoop, seed: u64) -> ClosedLoop {
    lp.with_noise(MeasurementNoise::from_variances(0.01, 0.01, seed).unwrap())
}

/// R(0) = Ra(π - 1e-9, e3), Rr(0) = I, zero velocities, R̄(0) = R(0)ᵀ.
pub fn initial_state() -> LoopState {
    let r0 = angle_axis(PI - 1e-9, &Vec3::z()).unwrap();
    let mut s = LoopState::at_target(Rotation::identity(), Vec3::zeros());
    s.re = r0;
    s.rtilde = r0 * r0;
    s
}
