//! Restoration-operator priors for linear inverse problems.

pub mod dense;
pub mod experiment;
pub mod linops;
pub mod priors;
pub mod solver;
pub mod sprox;
pub mod tensor;
pub mod theory;
