//! Numerical laboratory for orbital counting on negatively curved surfaces
//! whose cusps carry slowly varying metric perturbations.
//!
//! The pipeline runs: slowly varying functions ([`svf`]) feed a certified
//! cusp profile ([`profile`]); Clairaut integrals on the cusp cylinder turn
//! the profile into parabolic orbit distances ([`clairaut`]); exact upper
//! half-plane geometry and validated ping-pong data ([`hyperbolic`]) support
//! the free-product word machinery ([`coding`]); discretized Ruelle transfer
//! operators give spectral radii, critical exponents and Markov weights
//! ([`transfer`]); and the renewal-style counting layer ([`counting`])
//! compares direct orbital counts with operator predictions.

pub mod accept;
pub mod clairaut;
pub mod coding;
pub mod config;
pub mod counting;
pub mod error;
pub mod hyperbolic;
pub mod profile;
pub mod quad;
pub mod svf;
pub mod transfer;

pub use error::{Error, Result};
