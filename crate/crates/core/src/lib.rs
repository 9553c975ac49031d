//! Finite-element solver and optimizer for box-constrained optimal control of
//! doubly diffusive flow on the unit square.
//!
//! The state system couples a Darcy–Brinkman momentum balance (temperature-dependent
//! viscosity, buoyancy forcing) with an advection–diffusion pair (temperature,
//! concentration) through a cross-diffusion matrix. A distributed force control acts
//! on the momentum equation under per-component box constraints. The crate provides
//! the nonlinear state solver, exact discrete linearized/adjoint solvers, a projected
//! gradient method for the regularized tracking objective, and second-order
//! curvature diagnostics.

pub mod analytic;
pub mod assemble;
pub mod config;
pub mod io;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod optimizer;
pub mod quadrature;
pub mod runner;
pub mod sensitivity;
pub mod space;
pub mod ssc;
pub mod state;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
