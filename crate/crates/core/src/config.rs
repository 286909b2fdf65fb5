//! Experiment configuration: a TOML document with `system`, `grid`, `run`,
//! and optional `validate` and `product` tables. The grammar is documented in
//! `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::copula_core::ParametricCopula;
use crate::copula_pde::RhsForm;
use crate::empirical_validate::Metric;
use crate::error::{Error, Result};
use crate::markov_product::BivariateCopulaFn;
use crate::sde_engine::{CorrelationField, ProbeBox, ScalarField, SdeSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<ProductConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub drift: Vec<Coefficient>,
    pub diffusion: Vec<Coefficient>,
    #[serde(default)]
    pub correlation: Correlation,
    /// Box probed by the coefficient checks; defaults to x0 ± 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_box: Option<ProbeBoxConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Named coefficient built-ins, each a function of the component's own state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    Constant { value: f64 },
    /// intercept + slope·x_i
    Linear { intercept: f64, slope: f64 },
    /// rate·x_i
    Gbm { rate: f64 },
    /// theta·(mean − x_i); drift only.
    Ou { theta: f64, mean: f64 },
}

impl Coefficient {
    fn field(&self, dim: usize, i: usize) -> ScalarField {
        match *self {
            Coefficient::Constant { value } => ScalarField::Constant(value),
            Coefficient::Linear { intercept, slope } => ScalarField::linear_in(dim, i, intercept, slope),
            Coefficient::Gbm { rate } => ScalarField::linear_in(dim, i, 0.0, rate),
            Coefficient::Ou { theta, mean } => ScalarField::linear_in(dim, i, theta * mean, -theta),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    #[default]
    Independent,
    /// Full n×n matrix, one row per inner list.
    Constant { matrix: Vec<Vec<f64>> },
    Equicorrelated { rho: f64 },
    /// ρ_ij = scale·tanh(x_i·x_j)
    TanhProduct { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Copula lattice points per axis.
    pub resolution: usize,
    /// Points of each marginal x-grid.
    pub x_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_span: Option<[f64; 2]>,
    pub t0: f64,
    pub t1: f64,
    /// Copula evolution steps; the stability bound decides when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Euler steps per recorded interval of a simulation.
    pub substeps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 51, x_points: 801, x_span: None, t0: 0.25, t1: 1.0, steps: None, substeps: 100 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFormat {
    #[default]
    Binary,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCopula {
    Product,
    /// Equicorrelated Gaussian copula.
    Gaussian { rho: f64 },
    Min,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub form: RhsForm,
    pub initial: InitialCopula,
    pub metric: Metric,
    /// Pass threshold for copula distances.
    pub tolerance: f64,
    pub output_dir: PathBuf,
    pub path_format: PathFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_paths: 10_000,
            form: RhsForm::Simplified,
            initial: InitialCopula::Product,
            metric: Metric::Sup,
            tolerance: 2e-2,
            output_dir: PathBuf::from("out"),
            path_format: PathFormat::Binary,
        }
    }
}

/// Inputs of a validation run; whatever is missing is computed from the config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Evolved copula CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evolved: Option<PathBuf>,
    /// Path ensemble file (CSV or binary, by extension).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProductFamily {
    /// Copula of standard Brownian motion at each time pair.
    Brownian,
    Product,
    Min,
    Gaussian { rho: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    /// (s, u, t) with s < u < t.
    pub times: [f64; 3],
    pub copula: ProductFamily,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    #[serde(default = "default_product_resolution")]
    pub resolution: usize,
    #[serde(default = "default_product_tolerance")]
    pub tolerance: f64,
}

fn default_quad_points() -> usize {
    crate::markov_product::DEFAULT_QUAD_POINTS
}

fn default_product_resolution() -> usize {
    crate::markov_product::DEFAULT_PRODUCT_RESOLUTION
}

fn default_product_tolerance() -> f64 {
    1e-3
}

fn config_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Configuration(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Field-level consistency checks.
    pub fn check(&self) -> Result<()> {
        let s = &self.system;
        if s.dim == 0 {
            return Err(config_error("system.dim", "must be >= 1"));
        }
        for (name, len) in [("system.x0", s.x0.len()), ("system.drift", s.drift.len()), ("system.diffusion", s.diffusion.len())] {
            if len != s.dim {
                return Err(config_error(name, format!("has {len} entries but system.dim = {}", s.dim)));
            }
        }
        for (i, c) in s.diffusion.iter().enumerate() {
            if matches!(c, Coefficient::Ou { .. }) {
                return Err(config_error(&format!("system.diffusion[{i}]"), "ou is a drift built-in"));
            }
        }
        match &s.correlation {
            Correlation::Constant { matrix } => {
                if matrix.len() != s.dim || matrix.iter().any(|row| row.len() != s.dim) {
                    return Err(config_error("system.correlation.matrix", format!("must be {0}×{0}", s.dim)));
                }
            }
            Correlation::Equicorrelated { rho } if !(-1.0..=1.0).contains(rho) => {
                return Err(config_error("system.correlation.rho", "must lie in [-1, 1]"));
            }
            Correlation::TanhProduct { scale } if !(-1.0..=1.0).contains(scale) => {
                return Err(config_error("system.correlation.scale", "must lie in [-1, 1]"));
            }
            _ => {}
        }
        if let Some(b) = &s.probe_box {
            if b.lo.len() != s.dim || b.hi.len() != s.dim {
                return Err(config_error("system.probe_box", format!("lo and hi need {} entries", s.dim)));
            }
            if b.lo.iter().zip(&b.hi).any(|(l, h)| !(l < h)) {
                return Err(config_error("system.probe_box", "needs lo < hi in every coordinate"));
            }
        }
        let g = &self.grid;
        if g.resolution < 5 {
            return Err(config_error("grid.resolution", "must be >= 5"));
        }
        if g.x_points < 3 {
            return Err(config_error("grid.x_points", "must be >= 3"));
        }
        if let Some([a, b]) = g.x_span {
            if !(a < b) {
                return Err(config_error("grid.x_span", "needs lower < upper"));
            }
        }
        if !(g.t0 > 0.0 && g.t1 > g.t0) {
            return Err(config_error("grid", format!("need 0 < t0 < t1 (t0 = {}, t1 = {})", g.t0, g.t1)));
        }
        if g.steps == Some(0) {
            return Err(config_error("grid.steps", "must be >= 1"));
        }
        if g.substeps == 0 {
            return Err(config_error("grid.substeps", "must be >= 1"));
        }
        if !(self.run.tolerance > 0.0) {
            return Err(config_error("run.tolerance", "must be > 0"));
        }
        if let InitialCopula::Gaussian { rho } = self.run.initial {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(config_error("run.initial.rho", "must lie in [-1, 1]"));
            }
        }
        if let Some(p) = &self.product {
            let [a, b, c] = p.times;
            if !(a < b && b < c) || a < 0.0 {
                return Err(config_error("product.times", format!("need 0 <= s < u < t, got ({a}, {b}, {c})")));
            }
            if matches!(p.copula, ProductFamily::Brownian) && a <= 0.0 {
                return Err(config_error("product.times", "the Brownian copula needs s > 0"));
            }
            if p.quad_points < 16 {
                return Err(config_error("product.quad_points", "must be >= 16"));
            }
            if p.resolution < 2 {
                return Err(config_error("product.resolution", "must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SdeSystem> {
        let s = &self.system;
        let n = s.dim;
        let mu = s.drift.iter().enumerate().map(|(i, c)| c.field(n, i)).collect();
        let sigma = s.diffusion.iter().enumerate().map(|(i, c)| c.field(n, i)).collect();
        let rho = match &s.correlation {
            Correlation::Independent => CorrelationField::Independent,
            Correlation::Constant { matrix } => CorrelationField::Constant(matrix.concat()),
            Correlation::Equicorrelated { rho } => CorrelationField::equicorrelated(n, *rho),
            Correlation::TanhProduct { scale } => CorrelationField::TanhProduct { scale: *scale },
        };
        let domain = s.probe_box.as_ref().map(|b| ProbeBox::new(b.lo.clone(), b.hi.clone()));
        SdeSystem::new_on_domain(mu, sigma, rho, s.x0.clone(), domain)
            .map_err(|e| config_error("system", e))
    }

    pub fn initial_copula(&self) -> Result<ParametricCopula> {
        let n = self.system.dim;
        match self.run.initial {
            InitialCopula::Product => ParametricCopula::product(n),
            InitialCopula::Min => ParametricCopula::min(n),
            InitialCopula::Gaussian { rho } => {
                let mut corr = vec![rho; n * n];
                (0..n).for_each(|i| corr[i * n + i] = 1.0);
                ParametricCopula::gaussian(n, corr)
            }
        }
        .map_err(|e| config_error("run.initial", e))
    }

    /// The three copulas (C_su, C_ut, C_st) of the product check.
    pub fn product_triple(&self) -> Result<[BivariateCopulaFn; 3]> {
        let p = self.product.as_ref().ok_or_else(|| config_error("product", "table missing"))?;
        let [s, u, t] = p.times;
        let make = |a: f64, b: f64| -> Result<BivariateCopulaFn> {
            match p.copula {
                ProductFamily::Brownian => BivariateCopulaFn::brownian(a, b),
                ProductFamily::Product => BivariateCopulaFn::parametric(ParametricCopula::product(2)?, a, b),
                ProductFamily::Min => BivariateCopulaFn::parametric(ParametricCopula::min(2)?, a, b),
                ProductFamily::Gaussian { rho } => {
                    BivariateCopulaFn::parametric(ParametricCopula::gaussian2(rho)?, a, b)
                }
            }
            .map_err(|e| config_error("product.copula", e))
        };
        Ok([make(s, u)?, make(u, t)?, make(s, t)?])
    }
}
