use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::existence::ProbeBox;
use super::field::{CorrelationField, ScalarField};
use crate::error::{Error, Result};

const PROBE_SEED: u64 = 0x5eed_c0b1;
const PROBE_COUNT: usize = 256;
const PROBE_HALF_WIDTH: f64 = 5.0;
/// Eigenvalues below this before clipping mean the field is not a usable correlation.
pub const SEVERE_EIGENVALUE: f64 = -0.5;

/// dX = μ(X)dt + diag(σ̃(X)) dB, with dB_i dB_j = ρ_ij(X_i, X_j) dt.
#[derive(Clone, Debug)]
pub struct SdeSystem {
    dim: usize,
    mu: Vec<ScalarField>,
    sigma: Vec<ScalarField>,
    rho: CorrelationField,
    x0: Vec<f64>,
    markov_flags: Vec<bool>,
    domain: Option<ProbeBox>,
}

/// ρ(x) after symmetrization and PSD repair.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedCorrelation {
    pub matrix: Vec<f64>,
    pub projected: bool,
    /// Smallest eigenvalue of the symmetrized matrix before clipping.
    pub min_eigenvalue: f64,
}

impl SdeSystem {
    /// Validates the coefficients by probing around x0 and infers which
    /// components are individually Markov.
    pub fn new(
        mu: Vec<ScalarField>,
        sigma: Vec<ScalarField>,
        rho: CorrelationField,
        x0: Vec<f64>,
    ) -> Result<Self> {
        Self::new_on_domain(mu, sigma, rho, x0, None)
    }

    /// As [`SdeSystem::new`], probing only inside `domain` (e.g. the positive
    /// orthant for GBM) for validation and the existence check.
    pub fn new_on_domain(
        mu: Vec<ScalarField>,
        sigma: Vec<ScalarField>,
        rho: CorrelationField,
        x0: Vec<f64>,
        domain: Option<ProbeBox>,
    ) -> Result<Self> {
        let dim = x0.len();
        if dim == 0 || mu.len() != dim || sigma.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "x0 has {dim} entries, mu {}, sigma {}",
                mu.len(),
                sigma.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("x0 must be finite".into()));
        }
        for (i, (m, s)) in mu.iter().zip(&sigma).enumerate() {
            m.check_dim(dim, &format!("mu[{i}]"))?;
            s.check_dim(dim, &format!("sigma[{i}]"))?;
        }
        rho.check_dim(dim)?;
        if let Some(d) = &domain {
            if d.lo.len() != dim || d.hi.len() != dim {
                return Err(Error::ShapeMismatch("probe domain dimension".into()));
            }
            if d.lo.iter().zip(&d.hi).any(|(a, b)| !(a <= b)) {
                return Err(Error::Parameter("probe domain needs lo <= hi".into()));
            }
        }
        let mut sys = Self { dim, mu, sigma, rho, x0, markov_flags: vec![false; dim], domain };
        let probes = sys.probe_points();
        sys.validate_on(&probes)?;
        sys.markov_flags = (0..dim).map(|i| sys.probe_markov(i, &probes)).collect();
        Ok(sys)
    }

    /// Region used for probing; defaults to a box of half-width 5 around x0.
    pub fn probe_domain(&self) -> ProbeBox {
        self.domain.clone().unwrap_or_else(|| ProbeBox::around(&self.x0, PROBE_HALF_WIDTH))
    }

    /// Replaces the inferred flags; a component claimed Markov must pass probing.
    pub fn with_markov_flags(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "{} markov flags for dimension {}",
                flags.len(),
                self.dim
            )));
        }
        let probes = self.probe_points();
        for (i, &f) in flags.iter().enumerate() {
            if f && !self.probe_markov(i, &probes) {
                return Err(Error::Parameter(format!(
                    "component {} flagged individually Markov but its coefficients depend on other components",
                    i + 1
                )));
            }
        }
        self.markov_flags = flags;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn markov_flags(&self) -> &[bool] {
        &self.markov_flags
    }

    pub fn is_individually_markov(&self) -> bool {
        self.markov_flags.iter().all(|&f| f)
    }

    pub fn mu_field(&self, i: usize) -> &ScalarField {
        &self.mu[i]
    }

    pub fn sigma_field(&self, i: usize) -> &ScalarField {
        &self.sigma[i]
    }

    pub fn correlation_field(&self) -> &CorrelationField {
        &self.rho
    }

    pub fn mu(&self, i: usize, x: &[f64]) -> f64 {
        self.mu[i].eval(x)
    }

    pub fn sigma(&self, i: usize, x: &[f64]) -> f64 {
        self.sigma[i].eval(x)
    }

    /// Raw pairwise entry ρ_ij(x_i, x_j).
    pub fn rho(&self, i: usize, j: usize, xi: f64, xj: f64) -> f64 {
        self.rho.entry(self.dim, i, j, xi, xj)
    }

    fn probe_points(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let b = self.probe_domain();
        let mut pts = vec![self.x0.clone()];
        for _ in 0..PROBE_COUNT {
            pts.push(b.sample(&mut rng));
        }
        pts
    }

    fn validate_on(&self, probes: &[Vec<f64>]) -> Result<()> {
        let n = self.dim;
        for x in probes {
            for i in 0..n {
                let s = self.sigma(i, x);
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::Parameter(format!(
                        "sigma[{}] = {s} at probe {x:?}; must be finite and >= 0",
                        i + 1
                    )));
                }
                if !self.mu(i, x).is_finite() {
                    return Err(Error::Parameter(format!("mu[{}] not finite at {x:?}", i + 1)));
                }
                for j in 0..n {
                    let r = self.rho(i, j, x[i], x[j]);
                    let rt = self.rho(j, i, x[j], x[i]);
                    if !(-1.0..=1.0).contains(&r) {
                        return Err(Error::Parameter(format!(
                            "rho[{}][{}] = {r} outside [-1, 1]",
                            i + 1,
                            j + 1
                        )));
                    }
                    if (r - rt).abs() > 1e-12 {
                        return Err(Error::Parameter(format!(
                            "rho not symmetric: rho[{}][{}] = {r}, rho[{}][{}] = {rt}",
                            i + 1,
                            j + 1,
                            j + 1,
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn probe_markov(&self, i: usize, probes: &[Vec<f64>]) -> bool {
        let structural = [&self.mu[i], &self.sigma[i]]
            .iter()
            .map(|f| f.structurally_depends_only_on(i))
            .collect::<Vec<_>>();
        if structural.iter().all(|s| *s == Some(true)) {
            return true;
        }
        if structural.contains(&Some(false)) {
            return false;
        }
        // Move every other coordinate between probes while holding x_i fixed.
        for w in probes.windows(2) {
            let base = &w[0];
            let mut moved = w[1].clone();
            moved[i] = base[i];
            for f in [&self.mu[i], &self.sigma[i]] {
                if f.eval(base) != f.eval(&moved) {
                    return false;
                }
            }
        }
        true
    }

    /// ρ(x) symmetrized, eigenvalue-clipped and rescaled to unit diagonal.
    pub fn correlation_at(&self, x: &[f64]) -> Result<ProjectedCorrelation> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "state has {} entries, system dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(project_correlation(&self.rho.matrix(x), self.dim))
    }
}

/// Nearest-PSD repair by eigenvalue clipping followed by diagonal rescaling.
pub fn project_correlation(raw: &[f64], n: usize) -> ProjectedCorrelation {
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = if i == j {
                1.0
            } else {
                (0.5 * (raw[i * n + j] + raw[j * n + i])).clamp(-1.0, 1.0)
            };
        }
    }
    if n == 1 {
        return ProjectedCorrelation { matrix: sym, projected: raw[0] != 1.0, min_eigenvalue: 1.0 };
    }
    if n == 2 {
        let r = sym[1];
        let projected = (raw[1] - r).abs() > 1e-12 || (raw[2] - r).abs() > 1e-12;
        return ProjectedCorrelation { matrix: sym, projected, min_eigenvalue: 1.0 - r.abs() };
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &sym));
    let min_eigenvalue = eig.eigenvalues.min();
    let mut out = sym.clone();
    if min_eigenvalue < 0.0 {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        let d: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].max(1e-300).sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] =
                    if i == j { 1.0 } else { (rebuilt[(i, j)] / (d[i] * d[j])).clamp(-1.0, 1.0) };
            }
        }
    }
    let projected = raw.iter().zip(&out).any(|(a, b)| (a - b).abs() > 1e-12);
    ProjectedCorrelation { matrix: out, projected, min_eigenvalue }
}

/// Lower-triangular L with L Lᵀ = m for a positive semidefinite m; zero pivots
/// leave their column empty.
pub fn psd_cholesky(m: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        let pivot = if d > 1e-14 { d.sqrt() } else { 0.0 };
        l[j * n + j] = pivot;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if pivot > 0.0 { s / pivot } else { 0.0 };
        }
    }
    l
}
