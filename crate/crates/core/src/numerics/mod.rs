//! Numerical building blocks: ODE integration, quadrature, root finding.

pub mod ode;
pub mod quad;
pub mod roots;

pub use ode::{integrate as integrate_ode, Dopri5, Tolerance};
pub use quad::{integrate as integrate_quad, quad, QuadOptions};
pub use roots::{bisect_predicate, brent};
