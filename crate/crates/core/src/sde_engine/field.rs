use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type PairFn = Arc<dyn Fn(usize, usize, f64, f64) -> f64 + Send + Sync>;

/// A scalar coefficient x ↦ g(x) on the full state vector.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// intercept + Σ_j weights[j]·x_j
    Affine { intercept: f64, weights: Vec<f64> },
    Custom(ScalarFn),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Affine { intercept, weights } => {
                write!(f, "Affine {{ intercept: {intercept}, weights: {weights:?} }}")
            }
            ScalarField::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

impl ScalarField {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Custom(Arc::new(f))
    }

    /// a + b·x_i, everything else ignored.
    pub fn linear_in(dim: usize, i: usize, a: f64, b: f64) -> Self {
        let mut weights = vec![0.0; dim];
        weights[i] = b;
        ScalarField::Affine { intercept: a, weights }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Affine { intercept, weights } => {
                intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            ScalarField::Custom(f) => f(x),
        }
    }

    /// ∂g/∂x_axis; analytic for the closed forms, central difference otherwise.
    pub fn partial(&self, x: &[f64], axis: usize) -> f64 {
        match self {
            ScalarField::Constant(_) => 0.0,
            ScalarField::Affine { weights, .. } => weights.get(axis).copied().unwrap_or(0.0),
            ScalarField::Custom(f) => {
                let h = 1e-5 * (1.0 + x[axis].abs());
                let mut y = x.to_vec();
                y[axis] = x[axis] + h;
                let up = f(&y);
                y[axis] = x[axis] - h;
                let down = f(&y);
                (up - down) / (2.0 * h)
            }
        }
    }

    /// Structural independence from every coordinate other than `i`, when it
    /// can be decided without probing.
    pub(crate) fn structurally_depends_only_on(&self, i: usize) -> Option<bool> {
        match self {
            ScalarField::Constant(_) => Some(true),
            ScalarField::Affine { weights, .. } => {
                Some(weights.iter().enumerate().all(|(j, &w)| j == i || w == 0.0))
            }
            ScalarField::Custom(_) => None,
        }
    }

    pub(crate) fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        if let ScalarField::Affine { weights, .. } = self {
            if weights.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "{what}: {} affine weights for dimension {dim}",
                    weights.len()
                )));
            }
        }
        Ok(())
    }
}

/// Pairwise correlation field ρ_ij(x_i, x_j); ρ_ii ≡ 1.
#[derive(Clone)]
pub enum CorrelationField {
    Independent,
    /// Row-major n×n matrix.
    Constant(Vec<f64>),
    /// ρ_ij = scale·tanh(x_i·x_j) for every pair.
    TanhProduct { scale: f64 },
    Custom(PairFn),
}

impl fmt::Debug for CorrelationField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationField::Independent => write!(f, "Independent"),
            CorrelationField::Constant(m) => write!(f, "Constant({m:?})"),
            CorrelationField::TanhProduct { scale } => write!(f, "TanhProduct {{ scale: {scale} }}"),
            CorrelationField::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

impl CorrelationField {
    pub fn custom(f: impl Fn(usize, usize, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CorrelationField::Custom(Arc::new(f))
    }

    /// Equicorrelation matrix with off-diagonal `rho`.
    pub fn equicorrelated(dim: usize, rho: f64) -> Self {
        let mut m = vec![rho; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        CorrelationField::Constant(m)
    }

    /// Raw (unprojected) entry ρ_ij(x_i, x_j).
    pub fn entry(&self, dim: usize, i: usize, j: usize, xi: f64, xj: f64) -> f64 {
        if i == j {
            return 1.0;
        }
        match self {
            CorrelationField::Independent => 0.0,
            CorrelationField::Constant(m) => m[i * dim + j],
            CorrelationField::TanhProduct { scale } => scale * (xi * xj).tanh(),
            CorrelationField::Custom(f) => f(i, j, xi, xj),
        }
    }

    pub fn is_state_independent(&self) -> bool {
        matches!(self, CorrelationField::Independent | CorrelationField::Constant(_))
    }

    /// Full matrix at state `x`, before any projection.
    pub fn matrix(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.entry(n, i, j, x[i], x[j]);
            }
        }
        m
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if let CorrelationField::Constant(m) = self {
            if m.len() != dim * dim {
                return Err(Error::ShapeMismatch(format!(
                    "correlation matrix has {} entries, expected {}",
                    m.len(),
                    dim * dim
                )));
            }
        }
        Ok(())
    }
}
