//! Arbitrary-precision continuous Galerkin integration of the Lorenz system,
//! with adjoint stability factors and a computability model.

pub mod adjoint;
pub mod errormodel;
pub mod galerkin;
pub mod harness;
pub mod precision;
pub mod problem;
pub mod quadrature;
pub mod trajectory;
