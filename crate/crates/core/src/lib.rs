//! Bayesian estimation of the separation of two weak incoherent point
//! sources with a Gaussian point-spread function.
//!
//! The one-photon state of the two sources is a balanced mixture of the
//! coherent states `|±α⟩`, `α = q_α/√2`, of a single bosonic mode (the
//! Hermite-Gauss mode index plays the role of the photon number). Given a
//! prior on `q_α` this crate computes
//!
//! * the minimum mean square error over all quantum measurements (the
//!   Personick bound), from the prior-weighted operators `Γ₀`, `Γ₁` and the
//!   Lyapunov-type equation `Γ₀B + BΓ₀ = 2Γ₁` ([`personick`]);
//! * the mean square errors of photon counting in the mode basis (SPADE) and
//!   of homodyne/position detection (direct imaging), each followed by the
//!   posterior-mean estimator ([`measurements`]).

pub mod error;
pub mod fock;
pub mod measurements;
pub mod personick;
pub mod priors;
pub mod quadrature;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
