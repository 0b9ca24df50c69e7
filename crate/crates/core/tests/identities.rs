//! Matrix identities behind the gradient and decrease bounds, on random
//! samples.

mod common;

use std::f64::consts::PI;

use hybrid_attitude::potential::{transform, warp_alpha};
use hybrid_attitude::so3::{psi, random_rotation, rot_distance, skew};
use hybrid_attitude::{Mat3, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn identity_suite_on_random_samples() {
    let p = common::params(0.875);
    let s = p.spectral();
    let a = p.a();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100_000 {
        // ⟨⟨M, x×⟩⟩ = tr(Mᵀ x×) = 2 xᵀψ(M) for any square M.
        let m = Mat3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let x = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let lhs = (m.transpose() * skew(&x)).trace();
        assert!((lhs - 2.0 * x.dot(&psi(&m))).abs() < 1e-9);

        let r = random_rotation(&mut rng);
        let theta = rng.random_range(-PI..PI);
        let t = transform(&r, theta, &p);
        let gap = Mat3::identity() - t.matrix();

        // ‖ψ(A𝒯)‖² = α_A(𝒯) tr(A̲(I - 𝒯))
        let lhs = psi(&(a * t.matrix())).norm_squared();
        let rhs = warp_alpha(&t, &p) * (s.aunder * gap).trace();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");

        // 4λm|𝒯|² ≤ tr(A(I - 𝒯)) ≤ 4λM|𝒯|²
        let d2 = rot_distance(&t).powi(2);
        let tr = (a * gap).trace();
        assert!(4.0 * s.abar_min * d2 <= tr + 1e-9);
        assert!(tr <= 4.0 * s.abar_max * d2 + 1e-9);
    }
}

proptest! {
    #[test]
    fn psi_of_skew_is_identity(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
        let v = Vec3::new(x, y, z);
        prop_assert!((psi(&skew(&v)) - v).norm() < 1e-12);
    }

    #[test]
    fn psi_is_rotation_equivariant(seed in any::<u64>()) {
        // ψ(Q M Qᵀ) = Q ψ(M)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_rotation(&mut rng);
        let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let lhs = psi(&(q.matrix() * m * q.matrix().transpose()));
        prop_assert!((lhs - q.apply(&psi(&m))).norm() < 1e-12);
    }
}
