//! One-dimensional Kolmogorov forward solves for each component's transition
//! law, and the A*, A and B operators that act on densities and CDFs.

use serde::{Deserialize, Serialize};

use crate::copula_core::MarginalState;
use crate::error::{Error, Result};
use crate::numerics::{
    cumulative_trapezoid, interp_linear, linspace, norm_cdf, norm_pdf, trapezoid,
};
use crate::sde_engine::SdeSystem;

/// Start time used when the law at t = 0 would be a point mass.
pub const DEFAULT_T0: f64 = 0.01;
/// CFL factor in Δt ≤ CFL·Δx²/max σ̃².
pub const CFL: f64 = 0.4;
/// Pre-normalization mass drift tolerated per step.
pub const MASS_DRIFT_LIMIT: f64 = 1e-4;
/// Minimum width of the short-time Gaussian, in grid cells.
const MIN_WIDTH_CELLS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticTag {
    #[default]
    None,
    Brownian,
    Gbm,
    Ou,
}

/// Closed-form law parameters recovered from a tagged model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticLaw {
    Brownian { mu: f64, sigma: f64 },
    Gbm { mu: f64, sigma: f64 },
    Ou { theta: f64, mean: f64, sigma: f64 },
}

/// Component i of an [`SdeSystem`] seen as a scalar diffusion, with the other
/// coordinates frozen when its coefficients are not individually Markov.
#[derive(Clone, Debug)]
pub struct MarginalModel {
    component: usize,
    sys: SdeSystem,
    freeze_state: Vec<f64>,
    tag: AnalyticTag,
    law: Option<AnalyticLaw>,
}

impl MarginalModel {
    /// `freeze_state` defaults to x0.
    pub fn new(
        sys: &SdeSystem,
        component: usize,
        freeze_state: Option<Vec<f64>>,
        tag: AnalyticTag,
    ) -> Result<Self> {
        if component >= sys.dim() {
            return Err(Error::Parameter(format!(
                "component {component} out of range for dimension {}",
                sys.dim()
            )));
        }
        let freeze_state = freeze_state.unwrap_or_else(|| sys.x0().to_vec());
        if freeze_state.len() != sys.dim() {
            return Err(Error::ShapeMismatch("freeze state length".into()));
        }
        let mut m = Self { component, sys: sys.clone(), freeze_state, tag: AnalyticTag::None, law: None };
        if tag != AnalyticTag::None {
            m.law = Some(m.fit_law(tag).ok_or_else(|| {
                Error::Parameter(format!(
                    "coefficients of component {} do not match the {tag:?} family",
                    component + 1
                ))
            })?);
            m.tag = tag;
        }
        Ok(m)
    }

    /// Picks the first closed-form family the coefficients match, else `None`.
    pub fn auto(sys: &SdeSystem, component: usize) -> Result<Self> {
        let base = Self::new(sys, component, None, AnalyticTag::None)?;
        for tag in [AnalyticTag::Brownian, AnalyticTag::Ou, AnalyticTag::Gbm] {
            if let Some(law) = base.fit_law(tag) {
                return Ok(Self { tag, law: Some(law), ..base });
            }
        }
        Ok(base)
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn system(&self) -> &SdeSystem {
        &self.sys
    }

    pub fn analytic_tag(&self) -> AnalyticTag {
        self.tag
    }

    pub fn analytic_law(&self) -> Option<AnalyticLaw> {
        self.law
    }

    pub fn freeze_state(&self) -> &[f64] {
        &self.freeze_state
    }

    /// True when the 1-D law is only an approximation (coefficients depend on
    /// frozen coordinates).
    pub fn uses_freeze_approximation(&self) -> bool {
        !self.sys.markov_flags()[self.component]
    }

    fn state(&self, x: f64) -> Vec<f64> {
        let mut s = self.freeze_state.clone();
        s[self.component] = x;
        s
    }

    pub fn mu(&self, x: f64) -> f64 {
        self.sys.mu(self.component, &self.state(x))
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.sys.sigma(self.component, &self.state(x))
    }

    /// d/dx(½σ̃²) = σ̃·σ̃'.
    pub fn half_sigma2_prime(&self, x: f64) -> f64 {
        let s = self.state(x);
        let i = self.component;
        self.sys.sigma(i, &s) * self.sys.sigma_field(i).partial(&s, i)
    }

    fn fit_law(&self, tag: AnalyticTag) -> Option<AnalyticLaw> {
        let d = self.sys.probe_domain();
        let (lo, hi) = (d.lo[self.component], d.hi[self.component]);
        let xs = linspace(lo, hi, 41);
        let x0 = self.sys.x0()[self.component];
        let (a, b) = (xs[10], xs[30]);
        let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs()));
        let matches = |mu: &dyn Fn(f64) -> f64, sg: &dyn Fn(f64) -> f64| {
            xs.iter().all(|&x| close(self.mu(x), mu(x)) && close(self.sigma(x), sg(x)))
        };
        match tag {
            AnalyticTag::None => None,
            AnalyticTag::Brownian => {
                let (m, s) = (self.mu(a), self.sigma(a));
                matches(&|_| m, &|_| s).then_some(AnalyticLaw::Brownian { mu: m, sigma: s })
            }
            AnalyticTag::Ou => {
                let slope = (self.mu(b) - self.mu(a)) / (b - a);
                let theta = -slope;
                if !(theta > 0.0) {
                    return None;
                }
                let mean = (self.mu(a) + theta * a) / theta;
                let s = self.sigma(a);
                matches(&|x| theta * (mean - x), &|_| s)
                    .then_some(AnalyticLaw::Ou { theta, mean, sigma: s })
            }
            AnalyticTag::Gbm => {
                if !(x0 > 0.0) || a == 0.0 {
                    return None;
                }
                let (m, s) = (self.mu(a) / a, self.sigma(a) / a);
                matches(&|x| m * x, &|x| s * x).then_some(AnalyticLaw::Gbm { mu: m, sigma: s })
            }
        }
    }

    /// Largest stable explicit step on a grid with spacing `dx`.
    pub fn stable_dt(&self, x_grid: &[f64]) -> f64 {
        let dx = x_grid[1] - x_grid[0];
        let smax = x_grid.iter().map(|&x| self.sigma(x).powi(2)).fold(0.0, f64::max);
        if smax > 0.0 { CFL * dx * dx / smax } else { f64::INFINITY }
    }

    /// Fewest steps satisfying the CFL bound over [t0, t1].
    pub fn required_steps(&self, x_grid: &[f64], t0: f64, t1: f64) -> usize {
        let dt = self.stable_dt(x_grid);
        if dt.is_finite() { ((t1 - t0) / dt).ceil().max(1.0) as usize } else { 1 }
    }

    /// A grid spanning the bulk of the law at `t1` (≥ 8 standard deviations
    /// either side for the Gaussian cases).
    pub fn suggest_x_grid(&self, t1: f64, points: usize) -> Vec<f64> {
        let x0 = self.sys.x0()[self.component];
        let (lo, hi) = match self.law {
            Some(AnalyticLaw::Gbm { mu, sigma }) => {
                let m = x0.ln() + (mu - 0.5 * sigma * sigma) * t1;
                let s = sigma * t1.sqrt();
                (0.0, (m + 8.0 * s.max(1e-3)).exp())
            }
            _ => {
                let (m, s) = match self.law {
                    Some(l) => gaussian_moments(l, x0, t1),
                    None => (x0 + self.mu(x0) * t1, self.sigma(x0) * t1.sqrt()),
                };
                let s = s.max(0.05);
                (m - 9.0 * s, m + 9.0 * s)
            }
        };
        linspace(lo, hi, points)
    }

    /// Closed-form law at `t` on `x_grid`.
    pub fn analytic_state(&self, t: f64, x_grid: &[f64]) -> Result<MarginalState> {
        let law = self.law.ok_or_else(|| Error::Precondition("model has no analytic tag".into()))?;
        let x0 = self.sys.x0()[self.component];
        let min_sd = min_width(x_grid);
        let (cdf, pdf): (Vec<f64>, Vec<f64>) = match law {
            AnalyticLaw::Gbm { mu, sigma } => {
                let m = x0.ln() + (mu - 0.5 * sigma * sigma) * t;
                let s = (sigma * t.sqrt()).max(1e-12);
                x_grid
                    .iter()
                    .map(|&x| {
                        if x <= 0.0 {
                            (0.0, 0.0)
                        } else {
                            let z = (x.ln() - m) / s;
                            (norm_cdf(z), norm_pdf(z) / (s * x))
                        }
                    })
                    .unzip()
            }
            _ => {
                let (m, s) = gaussian_moments(law, x0, t);
                let s = s.max(min_sd);
                x_grid
                    .iter()
                    .map(|&x| {
                        let z = (x - m) / s;
                        (norm_cdf(z), norm_pdf(z) / s)
                    })
                    .unzip()
            }
        };
        MarginalState::new(self.component, x_grid.to_vec(), cdf, pdf, t, self.sys.x0().to_vec())
    }

    /// N(x0 + μ(x0)t0, σ̃²(x0)t0), widened to a few grid cells when σ̃ vanishes.
    pub fn short_time_state(&self, t0: f64, x_grid: &[f64]) -> Result<MarginalState> {
        let x0 = self.sys.x0()[self.component];
        let m = x0 + self.mu(x0) * t0;
        let s = (self.sigma(x0) * t0.sqrt()).max(min_width(x_grid));
        let pdf: Vec<f64> = x_grid.iter().map(|&x| norm_pdf((x - m) / s) / s).collect();
        finish_state(self, x_grid, pdf, t0)
    }
}

fn gaussian_moments(law: AnalyticLaw, x0: f64, t: f64) -> (f64, f64) {
    match law {
        AnalyticLaw::Brownian { mu, sigma } => (x0 + mu * t, sigma * t.sqrt()),
        AnalyticLaw::Ou { theta, mean, sigma } => {
            let m = mean + (x0 - mean) * (-theta * t).exp();
            let v = sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
            (m, v.sqrt())
        }
        AnalyticLaw::Gbm { mu, sigma } => {
            let m = x0 * (mu * t).exp();
            (m, m * ((sigma * sigma * t).exp() - 1.0).sqrt())
        }
    }
}

fn min_width(x_grid: &[f64]) -> f64 {
    MIN_WIDTH_CELLS * (x_grid[x_grid.len() - 1] - x_grid[0]) / (x_grid.len() - 1) as f64
}

fn check_uniform(x: &[f64]) -> Result<f64> {
    if x.len() < 5 {
        return Err(Error::Parameter("x grid needs at least 5 points".into()));
    }
    let dx = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if !(dx > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - dx).abs() > 1e-9 * dx.max(1.0)) {
        return Err(Error::Parameter("the forward solver needs a uniform increasing x grid".into()));
    }
    Ok(dx)
}

/// Normalizes a density and wraps it with its cumulative trapezoid CDF.
fn finish_state(m: &MarginalModel, x: &[f64], mut pdf: Vec<f64>, t: f64) -> Result<MarginalState> {
    let mass = trapezoid(x, &pdf);
    if !(mass > 0.0) {
        return Err(Error::Accuracy("density has no mass on the grid".into()));
    }
    pdf.iter_mut().for_each(|v| *v /= mass);
    let mut cdf = cumulative_trapezoid(x, &pdf);
    cdf.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    MarginalState::new(m.component, x.to_vec(), cdf, pdf, t, m.sys.x0().to_vec())
}

/// Values of an operator applied on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorField {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl OperatorField {
    pub fn at(&self, x: f64) -> f64 {
        interp_linear(&self.x, &self.values, x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Conservative central stencil of A*f = −∂x(μf) + ∂²x(½σ̃²f); zero at the ends.
fn a_star_into(x: &[f64], dx: f64, mu: &[f64], d: &[f64], f: &[f64], out: &mut [f64]) {
    let n = x.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    let inv2 = 1.0 / (2.0 * dx);
    let invsq = 1.0 / (dx * dx);
    for k in 1..n - 1 {
        out[k] = -(mu[k + 1] * f[k + 1] - mu[k - 1] * f[k - 1]) * inv2
            + (d[k + 1] * f[k + 1] - 2.0 * d[k] * f[k] + d[k - 1] * f[k - 1]) * invsq;
    }
}

fn coefficient_samples(model: &MarginalModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mu = x.iter().map(|&v| model.mu(v)).collect();
    let d = x.iter().map(|&v| 0.5 * model.sigma(v).powi(2)).collect();
    (mu, d)
}

/// A*f on a uniform grid.
pub fn apply_a_star(f: &[f64], x_grid: &[f64], model: &MarginalModel, time: f64) -> Result<OperatorField> {
    let dx = check_uniform(x_grid)?;
    if f.len() != x_grid.len() {
        return Err(Error::ShapeMismatch("density and grid lengths differ".into()));
    }
    let (mu, d) = coefficient_samples(model, x_grid);
    let mut values = vec![0.0; f.len()];
    a_star_into(x_grid, dx, &mu, &d, f, &mut values);
    Ok(OperatorField { x: x_grid.to_vec(), values, time })
}

/// Generator A g = μ g' + ½σ̃² g'' by central differences; zero at the ends.
pub fn apply_a(g: &[f64], x_grid: &[f64], model: &MarginalModel, time: f64) -> Result<OperatorField> {
    let dx = check_uniform(x_grid)?;
    let n = x_grid.len();
    let mut values = vec![0.0; n];
    for k in 1..n - 1 {
        let x = x_grid[k];
        let g1 = (g[k + 1] - g[k - 1]) / (2.0 * dx);
        let g2 = (g[k + 1] - 2.0 * g[k] + g[k - 1]) / (dx * dx);
        values[k] = model.mu(x) * g1 + 0.5 * model.sigma(x).powi(2) * g2;
    }
    Ok(OperatorField { x: x_grid.to_vec(), values, time })
}

/// First and second derivatives on a possibly nonuniform grid (three-point
/// stencils, one-sided at the ends).
pub(crate) fn derivatives(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let d1 = crate::numerics::gradient(x, y);
    let mut d2 = vec![0.0; n];
    for k in 1..n - 1 {
        let h0 = x[k] - x[k - 1];
        let h1 = x[k + 1] - x[k];
        d2[k] = 2.0 * (y[k + 1] * h0 - y[k] * (h0 + h1) + y[k - 1] * h1) / (h0 * h1 * (h0 + h1));
    }
    d2[0] = d2[1];
    d2[n - 1] = d2[n - 2];
    (d1, d2)
}

/// B F = [∂x(½σ̃²) − μ]·F' + ½σ̃²·F'' with central differences on F.
pub fn apply_b_operator(state: &MarginalState, model: &MarginalModel) -> Result<OperatorField> {
    if state.component() != model.component() {
        return Err(Error::Consistency(format!(
            "marginal state of component {} used with model of component {}",
            state.component() + 1,
            model.component() + 1
        )));
    }
    let x = state.x_grid();
    let (d1, d2) = derivatives(x, state.cdf_values());
    let values = x
        .iter()
        .zip(d1.iter().zip(&d2))
        .map(|(&xv, (&f1, &f2))| {
            (model.half_sigma2_prime(xv) - model.mu(xv)) * f1 + 0.5 * model.sigma(xv).powi(2) * f2
        })
        .collect();
    Ok(OperatorField { x: x.to_vec(), values, time: state.time() })
}

/// B^i_t F_i at a full state z (with z_i = x_i), from the coefficients at z and
/// the marginal density and its slope at x_i: F' = f, F'' = f'.
pub fn b_pointwise(sys: &SdeSystem, i: usize, z: &[f64], f: f64, f_prime: f64) -> f64 {
    let s = sys.sigma(i, z);
    let half_s2_prime = s * sys.sigma_field(i).partial(z, i);
    (half_s2_prime - sys.mu(i, z)) * f + 0.5 * s * s * f_prime
}

/// Diagnostics of an explicit forward solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct KfeDiagnostics {
    pub steps: usize,
    pub dt: f64,
    pub max_mass_drift: f64,
    pub max_clip: f64,
}

/// Advances a density from `state.time()` to `t1` in `steps` explicit steps.
pub fn advance_marginal(
    model: &MarginalModel,
    state: &MarginalState,
    t1: f64,
    steps: usize,
) -> Result<(MarginalState, KfeDiagnostics)> {
    let t0 = state.time();
    if !(t1 > t0) || steps == 0 {
        return Err(Error::Parameter(format!("need t1 > t0 ({t1} vs {t0}) and steps >= 1")));
    }
    let x = state.x_grid();
    let dx = check_uniform(x)?;
    let dt = (t1 - t0) / steps as f64;
    let bound = model.stable_dt(x);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Configuration(format!(
            "marginal step {dt:.3e} exceeds the CFL bound {bound:.3e}; use at least {} steps",
            ((t1 - t0) / bound).ceil() as usize
        )));
    }
    let (mu, d) = coefficient_samples(model, x);
    let mut f = state.pdf_values().to_vec();
    let mut rhs = vec![0.0; f.len()];
    let mut diag = KfeDiagnostics { steps, dt, ..Default::default() };
    for _ in 0..steps {
        a_star_into(x, dx, &mu, &d, &f, &mut rhs);
        for (fk, r) in f.iter_mut().zip(&rhs) {
            *fk += dt * r;
            if *fk < 0.0 {
                diag.max_clip = diag.max_clip.max(-*fk);
                *fk = 0.0;
            }
        }
        let mass = trapezoid(x, &f);
        let drift = (mass - 1.0).abs();
        diag.max_mass_drift = diag.max_mass_drift.max(drift);
        if drift > MASS_DRIFT_LIMIT {
            return Err(Error::Accuracy(format!(
                "mass drifted by {drift:.3e} in one step; widen the x grid"
            )));
        }
        f.iter_mut().for_each(|v| *v /= mass);
    }
    Ok((finish_state(model, x, f, t1)?, diag))
}

/// The law of X_i(t1) given x0. Tagged models return the closed form; otherwise
/// the density starts from the short-time Gaussian at `t0 > 0`.
pub fn solve_marginal_kfe(
    model: &MarginalModel,
    t0: f64,
    t1: f64,
    x_grid: &[f64],
    steps: usize,
) -> Result<MarginalState> {
    if model.law.is_some() {
        return model.analytic_state(t1, x_grid);
    }
    if !(t0 > 0.0) {
        return Err(Error::Precondition(
            "numeric marginal solves start at t0 > 0 from the short-time Gaussian".into(),
        ));
    }
    let start = model.short_time_state(t0, x_grid)?;
    Ok(advance_marginal(model, &start, t1, steps)?.0)
}

/// Numeric solve ignoring any analytic tag (used to validate the closed forms).
pub fn solve_marginal_numeric(
    model: &MarginalModel,
    t0: f64,
    t1: f64,
    x_grid: &[f64],
    steps: usize,
) -> Result<(MarginalState, KfeDiagnostics)> {
    if !(t0 > 0.0) {
        return Err(Error::Precondition("t0 must be > 0".into()));
    }
    let start = model.short_time_state(t0, x_grid)?;
    advance_marginal(model, &start, t1, steps)
}

/// Both marginals of a 2-D system from an explicit solve of the joint forward
/// equation, as a cross-check of the freeze-state approximation. Meant for
/// coarse grids only.
pub fn solve_joint_kfe_2d(
    sys: &SdeSystem,
    t0: f64,
    t1: f64,
    grids: [&[f64]; 2],
    steps: usize,
) -> Result<[MarginalState; 2]> {
    if sys.dim() != 2 {
        return Err(Error::UnsupportedDimension(sys.dim()));
    }
    if !(t0 > 0.0 && t1 > t0) || steps == 0 {
        return Err(Error::Parameter("need 0 < t0 < t1 and steps >= 1".into()));
    }
    let (gx, gy) = (grids[0], grids[1]);
    let hx = check_uniform(gx)?;
    let hy = check_uniform(gy)?;
    let (nx, ny) = (gx.len(), gy.len());
    let idx = |i: usize, j: usize| i * ny + j;
    let mut mu = [vec![0.0; nx * ny], vec![0.0; nx * ny]];
    let mut cov = [vec![0.0; nx * ny], vec![0.0; nx * ny], vec![0.0; nx * ny]];
    for i in 0..nx {
        for j in 0..ny {
            let s = [gx[i], gy[j]];
            let (s1, s2) = (sys.sigma(0, &s), sys.sigma(1, &s));
            let r = sys.rho(0, 1, s[0], s[1]);
            mu[0][idx(i, j)] = sys.mu(0, &s);
            mu[1][idx(i, j)] = sys.mu(1, &s);
            cov[0][idx(i, j)] = 0.5 * s1 * s1;
            cov[1][idx(i, j)] = 0.5 * s2 * s2;
            cov[2][idx(i, j)] = s1 * s2 * r;
        }
    }
    let dmax = cov[0].iter().chain(&cov[1]).fold(0.0f64, |a, &b| a.max(b));
    let dt = (t1 - t0) / steps as f64;
    if dmax > 0.0 {
        let bound = 0.2 * hx.min(hy).powi(2) / dmax;
        if dt > bound {
            return Err(Error::Configuration(format!(
                "joint step {dt:.3e} exceeds stability bound {bound:.3e}; use at least {} steps",
                ((t1 - t0) / bound).ceil() as usize
            )));
        }
    }
    // short-time bivariate Gaussian around x0
    let x0 = sys.x0();
    let m = [x0[0] + sys.mu(0, x0) * t0, x0[1] + sys.mu(1, x0) * t0];
    let sd = [
        (sys.sigma(0, x0) * t0.sqrt()).max(min_width(gx)),
        (sys.sigma(1, x0) * t0.sqrt()).max(min_width(gy)),
    ];
    let r0 = sys.rho(0, 1, x0[0], x0[1]).clamp(-0.999, 0.999);
    let mut p = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let a = (gx[i] - m[0]) / sd[0];
            let b = (gy[j] - m[1]) / sd[1];
            let q = (a * a - 2.0 * r0 * a * b + b * b) / (1.0 - r0 * r0);
            p[idx(i, j)] = (-0.5 * q).exp()
                / (2.0 * std::f64::consts::PI * sd[0] * sd[1] * (1.0 - r0 * r0).sqrt());
        }
    }
    let mut next = p.clone();
    for _ in 0..steps {
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                let k = idx(i, j);
                let flux = |arr: &[f64], a: usize| arr[a] * p[a];
                let adv = (flux(&mu[0], idx(i + 1, j)) - flux(&mu[0], idx(i - 1, j))) / (2.0 * hx)
                    + (flux(&mu[1], idx(i, j + 1)) - flux(&mu[1], idx(i, j - 1))) / (2.0 * hy);
                let dxx = (flux(&cov[0], idx(i + 1, j)) - 2.0 * flux(&cov[0], k)
                    + flux(&cov[0], idx(i - 1, j)))
                    / (hx * hx);
                let dyy = (flux(&cov[1], idx(i, j + 1)) - 2.0 * flux(&cov[1], k)
                    + flux(&cov[1], idx(i, j - 1)))
                    / (hy * hy);
                let dxy = (flux(&cov[2], idx(i + 1, j + 1)) - flux(&cov[2], idx(i + 1, j - 1))
                    - flux(&cov[2], idx(i - 1, j + 1))
                    + flux(&cov[2], idx(i - 1, j - 1)))
                    / (4.0 * hx * hy);
                next[k] = (p[k] + dt * (-adv + dxx + dyy + dxy)).max(0.0);
            }
        }
        std::mem::swap(&mut p, &mut next);
    }
    let mx: Vec<f64> = (0..nx).map(|i| trapezoid(gy, &p[idx(i, 0)..idx(i, 0) + ny])).collect();
    let my: Vec<f64> = (0..ny)
        .map(|j| trapezoid(gx, &(0..nx).map(|i| p[idx(i, j)]).collect::<Vec<_>>()))
        .collect();
    let m0 = MarginalModel::new(sys, 0, None, AnalyticTag::None)?;
    let m1 = MarginalModel::new(sys, 1, None, AnalyticTag::None)?;
    Ok([finish_state(&m0, gx, mx, t1)?, finish_state(&m1, gy, my, t1)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_engine::{CorrelationField, ProbeBox, ScalarField};

    fn scalar(mu: ScalarField, sigma: ScalarField, x0: f64) -> SdeSystem {
        SdeSystem::new(vec![mu], vec![sigma], CorrelationField::Independent, vec![x0]).unwrap()
    }

    fn brownian() -> MarginalModel {
        let sys = scalar(ScalarField::Constant(0.0), ScalarField::Constant(1.0), 0.0);
        MarginalModel::new(&sys, 0, None, AnalyticTag::None).unwrap()
    }

    fn ou() -> MarginalModel {
        let sys = scalar(ScalarField::linear_in(1, 0, 0.0, -1.0), ScalarField::Constant(2f64.sqrt()), 0.0);
        MarginalModel::new(&sys, 0, None, AnalyticTag::None).unwrap()
    }

    fn sup_cdf_error(s: &MarginalState, exact: impl Fn(f64) -> f64) -> f64 {
        s.x_grid().iter().zip(s.cdf_values()).map(|(&x, &f)| (f - exact(x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn brownian_numeric_matches_normal_cdf() {
        let m = brownian();
        let x = linspace(-8.0, 8.0, 801);
        let steps = m.required_steps(&x, DEFAULT_T0, 1.0);
        let (s, d) = solve_marginal_numeric(&m, DEFAULT_T0, 1.0, &x, steps).unwrap();
        let err = sup_cdf_error(&s, norm_cdf);
        assert!(err <= 1e-4, "sup error {err}");
        assert!(d.max_mass_drift < 1e-7, "drift {}", d.max_mass_drift);
        assert!((s.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ou_relaxes_to_stationary_law() {
        let m = ou();
        let x = linspace(-8.0, 8.0, 401);
        let steps = m.required_steps(&x, DEFAULT_T0, 8.0);
        let (s, _) = solve_marginal_numeric(&m, DEFAULT_T0, 8.0, &x, steps).unwrap();
        let err = s.x_grid().iter().zip(s.pdf_values()).map(|(&x, &f)| (f - norm_pdf(x)).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "sup density error {err}");
    }

    #[test]
    fn frozen_dynamics_keep_the_surrogate() {
        let sys = scalar(ScalarField::Constant(0.0), ScalarField::Constant(0.0), 0.5);
        let m = MarginalModel::new(&sys, 0, None, AnalyticTag::None).unwrap();
        let x = linspace(-1.0, 2.0, 301);
        let start = m.short_time_state(DEFAULT_T0, &x).unwrap();
        let (end, _) = advance_marginal(&m, &start, 1.0, 10).unwrap();
        assert_eq!(start.pdf_values(), end.pdf_values());
        let mean = crate::numerics::trapezoid(&x, &x.iter().zip(end.pdf_values()).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_a_configuration_error() {
        let m = brownian();
        let x = linspace(-8.0, 8.0, 801);
        let r = solve_marginal_kfe(&m, DEFAULT_T0, 1.0, &x, 10);
        assert!(matches!(r, Err(Error::Configuration(msg)) if msg.contains("at least")));
    }

    #[test]
    fn analytic_tags_short_circuit() {
        let sys = scalar(ScalarField::linear_in(1, 0, 0.5, -2.0), ScalarField::Constant(0.7), 1.0);
        let m = MarginalModel::new(&sys, 0, None, AnalyticTag::Ou).unwrap();
        assert_eq!(m.analytic_law(), Some(AnalyticLaw::Ou { theta: 2.0, mean: 0.25, sigma: 0.7 }));
        let x = m.suggest_x_grid(0.5, 801);
        let s = solve_marginal_kfe(&m, 0.0, 0.5, &x, 1).unwrap();
        let mean = 0.25 + 0.75 * (-1.0f64).exp();
        let sd = (0.49 * (1.0 - (-2.0f64).exp()) / 4.0).sqrt();
        assert!(sup_cdf_error(&s, |v| norm_cdf((v - mean) / sd)) < 1e-14);
        assert!(MarginalModel::new(&sys, 0, None, AnalyticTag::Brownian).is_err());
        assert_eq!(MarginalModel::auto(&sys, 0).unwrap().analytic_tag(), AnalyticTag::Ou);

        let gbm = SdeSystem::new_on_domain(
            vec![ScalarField::linear_in(1, 0, 0.0, 0.05)],
            vec![ScalarField::linear_in(1, 0, 0.0, 0.2)],
            CorrelationField::Independent,
            vec![1.0],
            Some(ProbeBox::cube(1, 0.1, 10.0)),
        )
        .unwrap();
        let g = MarginalModel::auto(&gbm, 0).unwrap();
        match g.analytic_law() {
            Some(AnalyticLaw::Gbm { mu, sigma }) => {
                assert!((mu - 0.05).abs() < 1e-14 && (sigma - 0.2).abs() < 1e-14)
            }
            other => panic!("{other:?}"),
        }
        let x = g.suggest_x_grid(1.0, 2001);
        let s = solve_marginal_kfe(&g, 0.0, 1.0, &x, 1).unwrap();
        // median of the lognormal law: exp(μ − σ²/2)
        let med = s.pseudo_inverse(0.5).unwrap();
        assert!((med - (0.05f64 - 0.02).exp()).abs() < 1e-3);
    }

    #[test]
    fn b_operator_on_standard_normal_cdf() {
        let m = brownian();
        let x = linspace(-8.0, 8.0, 1601);
        let s = MarginalState::from_fns(0, x, 1.0, vec![0.0], norm_cdf, norm_pdf).unwrap();
        let b = apply_b_operator(&s, &m).unwrap();
        // ½φ'(x) = −½xφ(x)
        assert!((b.at(1.0) - (-0.5 * norm_pdf(1.0))).abs() < 1e-5);
        assert!((b.at(1.0) + 0.12099).abs() < 1e-5);
    }

    #[test]
    fn b_operator_vanishes_on_linear_cdf() {
        let sys = scalar(ScalarField::Constant(0.0), ScalarField::Constant(0.8), 0.0);
        let m = MarginalModel::new(&sys, 0, None, AnalyticTag::None).unwrap();
        let x = linspace(0.0, 1.0, 51);
        let s = MarginalState::from_fns(0, x, 1.0, vec![0.0], |v| v, |_| 1.0).unwrap();
        let b = apply_b_operator(&s, &m).unwrap();
        assert!(b.values[1..50].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn b_operator_equals_time_derivative_of_cdf() {
        let m = brownian();
        let x = linspace(-8.0, 8.0, 801);
        let steps = m.required_steps(&x, DEFAULT_T0, 1.0);
        let (s, _) = solve_marginal_numeric(&m, DEFAULT_T0, 1.0, &x, steps).unwrap();
        let h = 0.01;
        let n2 = m.required_steps(&x, 1.0, 1.0 + h);
        let (up, _) = advance_marginal(&m, &s, 1.0 + h, n2).unwrap();
        let dt: Vec<f64> = up.cdf_values().iter().zip(s.cdf_values()).map(|(a, b)| (a - b) / h).collect();
        let b = apply_b_operator(&s, &m).unwrap();
        let err = dt.iter().zip(&b.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "sup |dF/dt − BF| = {err}");
    }

    #[test]
    fn a_star_properties() {
        let m = ou();
        let x = linspace(-8.0, 8.0, 801);
        let f: Vec<f64> = x.iter().map(|&v| norm_pdf(v)).collect();
        let a = apply_a_star(&f, &x, &m, 1.0).unwrap();
        assert!(a.sup_norm() <= 1e-3, "stationary residual {}", a.sup_norm());
        // plateau: μ = 0, σ̃ constant, f constant on an interval
        let flat = scalar(ScalarField::Constant(0.0), ScalarField::Constant(1.3), 0.0);
        let mf = MarginalModel::new(&flat, 0, None, AnalyticTag::None).unwrap();
        let g: Vec<f64> = x.iter().map(|&v| if v.abs() < 2.0 { 0.25 } else { 0.0 }).collect();
        let a = apply_a_star(&g, &x, &mf, 1.0).unwrap();
        for (v, r) in x.iter().zip(&a.values) {
            if v.abs() < 1.9 {
                assert_eq!(*r, 0.0);
            }
        }
        // divergence form: total integral vanishes for compact support
        let bump: Vec<f64> = x.iter().map(|&v| if v.abs() < 3.0 { (1.0 - (v / 3.0).powi(2)).powi(3) } else { 0.0 }).collect();
        let a = apply_a_star(&bump, &x, &m, 1.0).unwrap();
        assert!(trapezoid(&x, &a.values).abs() < 1e-12);
    }

    #[test]
    fn duality_with_generator() {
        let sys = scalar(ScalarField::custom(|x| -x[0] + 0.3 * x[0].sin()), ScalarField::custom(|x| 1.0 + 0.2 * x[0].cos()), 0.0);
        let m = MarginalModel::new(&sys, 0, None, AnalyticTag::None).unwrap();
        let x = linspace(-8.0, 8.0, 801);
        let f: Vec<f64> = x.iter().map(|&v| norm_pdf((v - 0.5) / 1.2) / 1.2).collect();
        let g: Vec<f64> = x.iter().map(|&v| (-(v * v) / 4.0).exp() * v.cos()).collect();
        let asf = apply_a_star(&f, &x, &m, 0.0).unwrap();
        let ag = apply_a(&g, &x, &m, 0.0).unwrap();
        let lhs = trapezoid(&x, &asf.values.iter().zip(&g).map(|(a, b)| a * b).collect::<Vec<_>>());
        let rhs = trapezoid(&x, &f.iter().zip(&ag.values).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!((lhs - rhs).abs() <= 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn second_order_in_space() {
        let m = brownian();
        let err = |points: usize| {
            let x = linspace(-8.0, 8.0, points);
            let steps = m.required_steps(&x, DEFAULT_T0, 1.0) * 4;
            let (s, _) = solve_marginal_numeric(&m, DEFAULT_T0, 1.0, &x, steps).unwrap();
            sup_cdf_error(&s, norm_cdf)
        };
        let (coarse, fine) = (err(201), err(401));
        assert!(coarse / fine >= 3.5, "{coarse} / {fine}");
    }

    #[test]
    fn joint_solver_agrees_for_independent_brownian_pair() {
        let sys = SdeSystem::new(
            vec![ScalarField::Constant(0.0); 2],
            vec![ScalarField::Constant(1.0); 2],
            CorrelationField::equicorrelated(2, 0.5),
            vec![0.0, 0.0],
        )
        .unwrap();
        let g = linspace(-6.0, 6.0, 81);
        let [a, b] = solve_joint_kfe_2d(&sys, 0.25, 1.0, [&g, &g], 600).unwrap();
        for s in [a, b] {
            let e = sup_cdf_error(&s, norm_cdf);
            assert!(e < 5e-3, "joint marginal error {e}");
        }
    }
}
