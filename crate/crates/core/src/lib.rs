//! Hybrid attitude tracking on SO(3) driven by a single potential function on
//! SO(3)×ℝ whose scalar warping angle θ flows and jumps.
//!
//! The crate is organized bottom-up:
//!
//! - [`so3`]: rotation primitives (skew/vee, ψ, E, exp/log, projection).
//! - [`potential`]: the warped potential `U(R, θ)`, its gradients, the gap
//!   function `μ_U` and the parameter construction.
//! - [`rigid_body`]: plant, reference generator, tracking error dynamics and
//!   measurement noise.
//! - [`hybrid`]: a fixed-step hybrid-system solver with event refinement.
//! - [`controllers`]: the θ mechanism and the basic, smoothed, velocity-free
//!   and non-hybrid feedback laws, plus closed-loop systems for the solver.
//! - [`monitors`]: Lyapunov functions and arc certification.

pub mod controllers;
pub mod hybrid;
pub mod monitors;
pub mod potential;
pub mod rigid_body;
pub mod so3;

pub use so3::{Mat3, Rotation, Vec3};
