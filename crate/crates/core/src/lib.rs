//! Differentiable knife-cutting simulation of soft tetrahedral bodies.
//!
//! The crate covers the full pipeline: reverse-mode differentiation
//! ([`autodiff`]), mesh and knife geometry ([`geometry`]), virtual-node cut
//! preprocessing ([`cutmesh`]), the explicit FEM cutting simulator
//! ([`dynamics`]), parameter inference ([`inference`]), optimal transport of
//! per-spring parameters ([`transport`]) and knife trajectory optimization
//! ([`control`]).

pub mod autodiff;
pub mod control;
pub mod cutmesh;
pub mod dynamics;
pub mod geometry;
pub mod inference;
pub mod transport;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
