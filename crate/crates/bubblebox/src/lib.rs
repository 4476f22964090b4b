//! Desk-scale simulator for a single spherical bubble immersed in a
//! barotropic compressible viscous fluid inside a rigid box.
//!
//! The velocity lives in a finite sine-mode space and is driven by a
//! penalized momentum system that forces the flow inside the bubble toward
//! a rigid-plus-dilation mode; the density obeys a diffusion-regularized
//! continuity equation; the bubble itself is advanced by an ODE for its
//! center and radius fed by ball averages of the velocity. Every piece
//! carries diagnostics (mass budgets, energy budgets, mode-projection
//! residuals) so a run certifies its own bookkeeping.

pub mod bubble;
pub mod continuity;
pub mod driver;
pub mod energy;
mod error;
pub mod galerkin;
pub mod grid;
pub mod modes;
pub mod params;
pub mod transport;

pub use error::{SimError, SimResult};
