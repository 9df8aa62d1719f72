//! Symbolic and numeric workbench for first-order Lagrangian and
//! Hamiltonian field theory in the multisymplectic formulation.
//!
//! The crate builds charts on the jet bundle and the tower of
//! multimomentum bundles, derives the Legendre maps and canonical forms
//! symbolically, classifies regularity, produces primary constraints for
//! singular theories, assembles De Donder-Weyl Hamiltonians, and checks
//! or integrates the resulting field equations numerically at desk scale.

pub mod charts;
pub mod cli;
pub mod expr;
pub mod fieldsolve;
pub mod forms;
pub mod hamiltonian;
pub mod lagrangian;
pub mod legendre;
pub mod linalg;
