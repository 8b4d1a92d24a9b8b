//! Advection-diffusion on evolving surfaces, solved on the initial surface.
//!
//! A moving surface `Γ(t) = Φ(Γ₀, t)` is handled by pulling the equation back
//! to `Γ₀`: the unknown `ũ(x, t) = u(Φ(x, t), t)` satisfies
//! `∂ₜũ + c ũ − ∇·(D̃ ∇ũ) = 0` with `c = ∇·∂ₜΦ`. P1 surface finite elements on
//! a fixed mesh of `Γ₀` plus a θ-scheme in time give `ũ_h`, and the solution on
//! the moving surface is the push-forward `ū_h(Φ(p, t), t) = ũ_h(p, t)`.

// `!(x >= y)` is used on purpose so NaN falls into the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod calculus;
pub mod coefficients;
pub mod error;
pub mod evolution;
pub mod flow;
pub mod harness;
pub mod mesh;
pub mod perturbation;

pub use error::{Error, Result};
