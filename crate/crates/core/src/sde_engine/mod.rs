//! The n-dimensional diffusion dX = μ(X)dt + diag(σ̃(X))dB with pairwise
//! state-dependent correlations, and its Euler–Maruyama simulation.

mod ensemble;
mod existence;
mod field;
mod simulate;
mod system;

pub use ensemble::{PathEnsemble, Scheme, BINARY_MAGIC};
pub use existence::{check_existence_conditions, ConditionReport, ProbeBox};
pub use field::{CorrelationField, ScalarField};
pub use simulate::{path_rng, simulate_coupled_levels, simulate_paths, SimOptions};
pub use system::{project_correlation, psd_cholesky, ProjectedCorrelation, SdeSystem};
