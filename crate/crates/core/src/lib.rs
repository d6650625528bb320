//! Mimetic finite difference discretizations of the mixed diffusion problem
//! on conforming polygonal and polyhedral meshes.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`]: mesh data model, geometry, generators, quality metrics and the
//!   `pmesh` text format.
//! - [`local_ops`]: cell-local mimetic algebra (`N_c`, `R_c`, the inner-product
//!   family `M_{F,c}`, the flux family `W_{F,c}`, derived gradient).
//! - [`hybrid`]: static condensation onto face multipliers, solve, recovery and
//!   error norms.
//! - [`bridges`]: hybrid/mixed finite volume flux maps, the Raviart-Thomas
//!   stabilization on simplexes and the family-membership audit.
//! - [`high_order`]: the 2D moment-based scheme of order `r` in `{0, 1}`.
//! - [`divk`]: the div-k scheme for degenerate nonlinear diffusion and the
//!   Marshak wave driver.
//! - [`study`] and [`report`]: convergence studies, configuration and output.

pub mod bridges;
pub mod divk;
pub mod error;
pub mod high_order;
pub mod hybrid;
pub mod linalg;
pub mod local_ops;
pub mod mesh;
pub mod quadrature;
pub mod report;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
