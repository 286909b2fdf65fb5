//! Dynamic n-copulas for coupled Markov diffusions.
//!
//! The crate evolves a copula lattice C(t, u) forward in time alongside the
//! marginal transition laws of an n-dimensional diffusion, and provides the
//! Monte Carlo and closed-form machinery used to validate the evolution.

pub mod copula_core;
pub mod cli;
pub mod config;
pub mod copula_pde;
pub mod empirical_validate;
pub mod error;
pub mod marginal_solver;
pub mod markov_product;
pub mod numerics;
pub mod sde_engine;

pub use error::{Error, Result};
