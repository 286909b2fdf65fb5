use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bivariate_normal_cdf, norm_cdf, norm_quantile, trivariate_normal_cdf};

/// Quantile clamp so that partial derivatives at u ∈ {0, 1} take their limits.
const QUANTILE_CLAMP: f64 = 38.0;

/// Closed-form copula families used as oracles and initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ParametricCopula {
    /// Independence copula Π(u) = ∏ uᵢ.
    Product { dim: usize },
    /// Gaussian copula with row-major correlation matrix.
    Gaussian { dim: usize, corr: Vec<f64> },
    /// Comonotone upper bound M(u) = minᵢ uᵢ.
    Min { dim: usize },
    /// Countermonotone lower bound W(u) = max(u₁ + u₂ − 1, 0); a copula only for n = 2.
    MaxBound,
}

impl ParametricCopula {
    pub fn product(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::Product { dim })
    }

    pub fn min(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::Min { dim })
    }

    pub fn max_bound() -> Self {
        Self::MaxBound
    }

    /// Bivariate Gaussian copula with correlation `rho`.
    pub fn gaussian2(rho: f64) -> Result<Self> {
        Self::gaussian(2, vec![1.0, rho, rho, 1.0])
    }

    /// Gaussian copula from a full row-major correlation matrix.
    pub fn gaussian(dim: usize, corr: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        validate_correlation(dim, &corr)?;
        Ok(Self::Gaussian { dim, corr })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Product { dim } | Self::Gaussian { dim, .. } | Self::Min { dim } => *dim,
            Self::MaxBound => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Product { .. } => "product",
            Self::Gaussian { .. } => "gaussian",
            Self::Min { .. } => "min",
            Self::MaxBound => "max_bound",
        }
    }

    /// Re-validates parameters, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim())?;
        if let Self::Gaussian { dim, corr } = self {
            validate_correlation(*dim, corr)?;
        }
        Ok(())
    }

    /// Evaluates C(u). Gaussian families are limited to n ≤ 3.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        let n = self.dim();
        if u.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coordinates, copula has dimension {n}",
                u.len()
            )));
        }
        for (i, &v) in u.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("u{} = {v} outside [0,1]", i + 1)));
            }
        }
        let v = match self {
            Self::Product { .. } => u.iter().product(),
            Self::Min { .. } => u.iter().copied().fold(1.0, f64::min),
            Self::MaxBound => (u[0] + u[1] - 1.0).max(0.0),
            Self::Gaussian { dim, corr } => gaussian_eval(*dim, corr, u)?,
        };
        Ok(v.clamp(0.0, 1.0))
    }

    /// ∂C/∂u_axis for bivariate families, analytic. At the kinks of M and W the
    /// symmetric value ½ is returned.
    pub fn partial(&self, u: &[f64], axis: usize) -> Result<f64> {
        if self.dim() != 2 || u.len() != 2 || axis > 1 {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        let (a, b) = (u[axis], u[1 - axis]);
        let v = match self {
            Self::Product { .. } => b,
            Self::Min { .. } => step(b - a),
            Self::MaxBound => step(a + b - 1.0),
            Self::Gaussian { corr, .. } => {
                let rho = corr[1];
                if b <= 0.0 {
                    0.0
                } else if b >= 1.0 {
                    1.0
                } else if rho >= 1.0 {
                    step(b - a)
                } else if rho <= -1.0 {
                    step(a + b - 1.0)
                } else {
                    let qa = norm_quantile(a).clamp(-QUANTILE_CLAMP, QUANTILE_CLAMP);
                    let qb = norm_quantile(b).clamp(-QUANTILE_CLAMP, QUANTILE_CLAMP);
                    norm_cdf((qb - rho * qa) / (1.0 - rho * rho).sqrt())
                }
            }
        };
        Ok(v)
    }
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::Parameter(format!("copula dimension must be >= 2, got {dim}")));
    }
    Ok(())
}

/// Symmetric, unit diagonal, entries in [−1, 1], positive semidefinite.
pub fn validate_correlation(dim: usize, corr: &[f64]) -> Result<()> {
    if corr.len() != dim * dim {
        return Err(Error::Parameter(format!(
            "correlation matrix needs {} entries, got {}",
            dim * dim,
            corr.len()
        )));
    }
    for i in 0..dim {
        if (corr[i * dim + i] - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("correlation diagonal entry {i} is not 1")));
        }
        for j in 0..dim {
            let v = corr[i * dim + j];
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("correlation entry ({i},{j}) = {v} outside [-1,1]")));
            }
            if (v - corr[j * dim + i]).abs() > 1e-12 {
                return Err(Error::Parameter(format!("correlation matrix not symmetric at ({i},{j})")));
            }
        }
    }
    let m = DMatrix::from_row_slice(dim, dim, corr);
    let min_eig = SymmetricEigen::new(m).eigenvalues.min();
    if min_eig < -1e-12 {
        return Err(Error::Parameter(format!(
            "correlation matrix not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

fn gaussian_eval(dim: usize, corr: &[f64], u: &[f64]) -> Result<f64> {
    if u.contains(&0.0) {
        return Ok(0.0);
    }
    // Coordinates at 1 marginalize out exactly.
    let active: Vec<usize> = (0..dim).filter(|&i| u[i] < 1.0).collect();
    match active.len() {
        0 => Ok(1.0),
        1 => Ok(u[active[0]]),
        2 => {
            let (i, j) = (active[0], active[1]);
            Ok(bivariate_normal_cdf(
                norm_quantile(u[i]),
                norm_quantile(u[j]),
                corr[i * dim + j],
            ))
        }
        3 => {
            let q = [norm_quantile(u[0]), norm_quantile(u[1]), norm_quantile(u[2])];
            Ok(trivariate_normal_cdf(q, corr[1], corr[2], corr[dim + 2]))
        }
        k => Err(Error::UnsupportedDimension(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate;

    #[test]
    fn spec_examples() {
        let p = ParametricCopula::product(2).unwrap();
        assert!((p.eval(&[0.3, 0.5]).unwrap() - 0.15).abs() < 1e-15);
        let g1 = ParametricCopula::gaussian2(1.0).unwrap();
        assert!((g1.eval(&[0.3, 0.7]).unwrap() - 0.3).abs() < 1e-15);
        // Independent oracle: 2-D iterated quadrature of the bivariate normal density.
        let rho: f64 = 0.5;
        let s = (1.0 - rho * rho).sqrt();
        let oracle = integrate(
            |x| {
                integrate(
                    |y| {
                        (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s * s)).exp()
                            / (2.0 * std::f64::consts::PI * s)
                    },
                    -12.0,
                    0.0,
                    1e-14,
                )
            },
            -12.0,
            0.0,
            1e-13,
        );
        assert!((oracle - 1.0 / 3.0).abs() < 1e-10);
        let g = ParametricCopula::gaussian2(rho).unwrap();
        assert!((g.eval(&[0.5, 0.5]).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ParametricCopula::gaussian(3, vec![1.0, -0.9, -0.9, -0.9, 1.0, -0.9, -0.9, -0.9, 1.0]),
            Err(Error::Parameter(_))
        ));
        let p = ParametricCopula::product(2).unwrap();
        assert!(matches!(p.eval(&[1.2, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_margins_exact() {
        let g = ParametricCopula::gaussian(
            3,
            vec![1.0, 0.4, 0.2, 0.4, 1.0, 0.3, 0.2, 0.3, 1.0],
        )
        .unwrap();
        assert_eq!(g.eval(&[1.0, 0.37, 1.0]).unwrap(), 0.37);
        assert_eq!(g.eval(&[0.0, 0.37, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_partial_matches_difference_quotient() {
        let g = ParametricCopula::gaussian2(0.6).unwrap();
        let u = [0.3, 0.45];
        let h = 1e-6;
        let fd = (g.eval(&[0.3, 0.45 + h]).unwrap() - g.eval(&[0.3, 0.45 - h]).unwrap()) / (2.0 * h);
        assert!((g.partial(&u, 1).unwrap() - fd).abs() < 1e-6);
    }
}
