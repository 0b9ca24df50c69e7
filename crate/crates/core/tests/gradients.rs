//! Finite-difference oracles for the analytic gradients and for ψ̇.

mod common;

use std::f64::consts::PI;

use hybrid_attitude::potential::{grad_r_psi, grad_theta, potential, psi_dot};
use hybrid_attitude::so3::{exp_so3, random_rotation, random_unit};
use hybrid_attitude::{Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

/// Five-point central difference of `f` at 0.
fn diff<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(-2.0 * H) - 8.0 * f(-H) + 8.0 * f(H) - f(2.0 * H)) / (12.0 * H)
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= (1e-6 * an.abs()).max(1e-9)
}

fn basis(i: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[i] = 1.0;
    e
}

#[test]
fn gradients_match_finite_differences() {
    let p = common::params(0.875);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let theta = rng.random_range(-PI..PI);
        let g = grad_r_psi(&r, theta, &p);
        for i in 0..3 {
            // dU/dh along R exp(h eᵢ×) equals 2 eᵢᵀ ∇ψ.
            let fd = 0.5 * diff(|h| potential(&(r * exp_so3(&(basis(i) * h))), theta, &p));
            assert!(close(fd, g[i]), "component {i}: fd {fd} analytic {}", g[i]);
        }
        let fd = diff(|h| potential(&r, theta + h, &p));
        let an = grad_theta(&r, theta, &p);
        assert!(close(fd, an), "theta: fd {fd} analytic {an}");
    }
}

#[test]
fn psi_dot_matches_flow_difference() {
    let p = common::params(0.625);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let theta = rng.random_range(-PI..PI);
        let omega = random_unit(&mut rng) * rng.random_range(0.0..3.0);
        let v = rng.random_range(-5.0..5.0);
        let an = psi_dot(&r, theta, &omega, v, &p);
        for i in 0..3 {
            let fd = diff(|h| grad_r_psi(&(r * exp_so3(&(omega * h))), theta + v * h, &p)[i]);
            assert!(close(fd, an[i]), "component {i}: fd {fd} analytic {}", an[i]);
        }
    }
}

#[test]
fn gradients_vanish_at_target() {
    let p = common::params(0.875);
    assert_eq!(grad_r_psi(&Rotation::identity(), 0.0, &p).norm(), 0.0);
    assert_eq!(grad_theta(&Rotation::identity(), 0.0, &p), 0.0);
}
