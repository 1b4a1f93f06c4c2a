//! Discrete first-order field theories on rectangular grids.
//!
//! The crate is organised bottom-up: [`grid`] provides nodes, metrics and
//! finite differences, [`exterior`] the algebra of bundle-valued forms and
//! their duals, [`connection`] covariant derivatives and gauge data,
//! [`lagrangian`] densities with their fiber derivatives, and [`dynamics`]
//! the forced Lagrange-Dirac stepper with energy, charge and Bianchi
//! diagnostics.

pub mod connection;
pub mod dynamics;
pub mod exterior;
pub mod grid;
pub mod lagrangian;

/// Scalar type used throughout.
pub type Real = f64;
