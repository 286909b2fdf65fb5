//! Copula product, transition probabilities from bivariate copulas,
//! Chapman–Kolmogorov residuals and the bivariate-chain joint formula.

use rayon::prelude::*;

use crate::copula_core::{
    check_copula_axioms, lattice_coord, AxiomTolerances, CopulaGrid, MarginalState, ParametricCopula,
};
use crate::error::{Error, Result};

/// Default number of quadrature subintervals on [0, 1].
pub const DEFAULT_QUAD_POINTS: usize = 512;
/// Default output lattice; 128 intervals divide the default quadrature evenly.
pub const DEFAULT_PRODUCT_RESOLUTION: usize = 129;
/// Densities below this are treated as null events.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum BivariateSource {
    Parametric(ParametricCopula),
    Grid(CopulaGrid),
}

/// A 2-copula linking the law at time `s` to the law at time `t`.
#[derive(Clone, Debug)]
pub struct BivariateCopulaFn {
    source: BivariateSource,
    pub s: f64,
    pub t: f64,
}

impl BivariateCopulaFn {
    pub fn parametric(c: ParametricCopula, s: f64, t: f64) -> Result<Self> {
        if c.dim() != 2 {
            return Err(Error::UnsupportedDimension(c.dim()));
        }
        Ok(Self { source: BivariateSource::Parametric(c), s, t })
    }

    pub fn grid(g: CopulaGrid, s: f64, t: f64) -> Result<Self> {
        if g.dim() != 2 {
            return Err(Error::UnsupportedDimension(g.dim()));
        }
        Ok(Self { source: BivariateSource::Grid(g), s, t })
    }

    /// Copula of (B(s), B(t)) for standard Brownian motion: Gaussian with ρ = √(s/t).
    pub fn brownian(s: f64, t: f64) -> Result<Self> {
        if !(0.0 < s && s <= t) {
            return Err(Error::Parameter(format!("Brownian copula needs 0 < s <= t, got ({s}, {t})")));
        }
        Self::parametric(ParametricCopula::gaussian2((s / t).sqrt())?, s, t)
    }

    pub fn source(&self) -> &BivariateSource {
        &self.source
    }

    pub fn label(&self) -> String {
        format!("C[{}, {}]", self.s, self.t)
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        match &self.source {
            BivariateSource::Parametric(c) => c.eval(&[x, y]),
            BivariateSource::Grid(g) => g.interpolate(&[x, y]),
        }
    }

    /// ∂C/∂u₂ at (x, y): analytic for parametric families, central difference
    /// (one-sided second order at the edges) on the lattice for grids.
    pub fn partial_second(&self, x: f64, y: f64) -> Result<f64> {
        match &self.source {
            BivariateSource::Parametric(c) => c.partial(&[x, y], 1),
            BivariateSource::Grid(g) => {
                let h = g.spacing();
                let v = |yy: f64| g.interpolate(&[x, yy.clamp(0.0, 1.0)]);
                if y - h < 0.0 {
                    Ok((-3.0 * v(0.0)? + 4.0 * v(h)? - v(2.0 * h)?) / (2.0 * h))
                } else if y + h > 1.0 {
                    Ok((3.0 * v(1.0)? - 4.0 * v(1.0 - h)? + v(1.0 - 2.0 * h)?) / (2.0 * h))
                } else {
                    Ok((v(y + h)? - v(y - h)?) / (2.0 * h))
                }
            }
        }
    }

    fn sample_lattice(&self, resolution: usize) -> Result<CopulaGrid> {
        match &self.source {
            BivariateSource::Grid(g) if g.resolution() == resolution => Ok(g.clone()),
            _ => CopulaGrid::from_fn(2, resolution, self.t, |u| self.eval(u[0], u[1])),
        }
    }

    fn check_axioms(&self) -> Result<()> {
        let g = match &self.source {
            BivariateSource::Grid(g) => g.clone(),
            BivariateSource::Parametric(_) => self.sample_lattice(33)?,
        };
        let tol = AxiomTolerances::parametric().with_margin(1e-6).with_volume(1e-9);
        let rep = check_copula_axioms(&g, &tol);
        if !rep.all_passed() {
            return Err(Error::Precondition(format!("{} fails the copula axioms", self.label())));
        }
        Ok(())
    }
}

/// (C_a * C_b)(x, y) = ∫₀¹ ∂₂C_a(x, z) ∂₁C_b(z, y) dz on a `resolution` lattice.
///
/// Both partials are taken as cell differences over `quad_points` uniform
/// subintervals of z, so each cell contributes ΔC_a·ΔC_b / Δz (midpoint rule
/// with midpoint differences). With that stencil Π annihilates and M acts as
/// the identity exactly whenever the output lattice nodes are quadrature nodes.
pub fn copula_product(
    ca: &BivariateCopulaFn,
    cb: &BivariateCopulaFn,
    quad_points: usize,
    resolution: usize,
) -> Result<CopulaGrid> {
    if quad_points < 16 {
        return Err(Error::Precondition(format!("quad_points must be >= 16, got {quad_points}")));
    }
    if resolution < 2 {
        return Err(Error::Parameter("resolution must be >= 2".into()));
    }
    ca.check_axioms()?;
    cb.check_axioms()?;
    let nodes: Vec<f64> = (0..=quad_points).map(|m| lattice_coord(m, quad_points + 1)).collect();
    let dz = 1.0 / quad_points as f64;
    let coords: Vec<f64> = (0..resolution).map(|k| lattice_coord(k, resolution)).collect();

    // ΔC_a(x_k, ·) for every output abscissa and ΔC_b(·, y_l) for every ordinate.
    let diffs = |f: &(dyn Fn(f64, f64) -> Result<f64> + Sync), first_fixed: bool| -> Result<Vec<Vec<f64>>> {
        coords
            .par_iter()
            .map(|&c| {
                let vals: Vec<f64> = nodes
                    .iter()
                    .map(|&z| if first_fixed { f(c, z) } else { f(z, c) })
                    .collect::<Result<_>>()?;
                Ok(vals.windows(2).map(|w| w[1] - w[0]).collect())
            })
            .collect()
    };
    let da = diffs(&|x, y| ca.eval(x, y), true)?;
    let db = diffs(&|x, y| cb.eval(x, y), false)?;

    let values: Vec<f64> = (0..resolution * resolution)
        .into_par_iter()
        .map(|flat| {
            let (k, l) = (flat / resolution, flat % resolution);
            let s: f64 = da[k].iter().zip(&db[l]).map(|(a, b)| a * b).sum();
            (s / dz).clamp(0.0, 1.0)
        })
        .collect();
    CopulaGrid::new(2, resolution, values, cb.t)
}

/// F(t_i, x_i | t_j, x_j) = ∂_{u₂} C(F_{t_i}(x_i), F_{t_j}(x_j)), clamped to [0, 1].
pub fn transition_from_copula(
    c: &BivariateCopulaFn,
    m_ti: &MarginalState,
    m_tj: &MarginalState,
    x_i: f64,
    x_j: f64,
) -> Result<f64> {
    if (c.s - m_ti.time()).abs() > 1e-12 || (c.t - m_tj.time()).abs() > 1e-12 {
        return Err(Error::Consistency(format!(
            "{} does not connect margin times ({}, {})",
            c.label(),
            m_ti.time(),
            m_tj.time()
        )));
    }
    if m_tj.pdf_at(x_j) < DENSITY_FLOOR {
        return Err(Error::DegenerateCondition(format!(
            "density of the conditioning margin vanishes at x = {x_j}"
        )));
    }
    let u1 = m_ti.cdf_at(x_i);
    let u2 = m_tj.cdf_at(x_j);
    Ok(c.partial_second(u1, u2)?.clamp(0.0, 1.0))
}

/// sup over the lattice of |(C_su * C_ut) − C_st|.
pub fn chapman_kolmogorov_residual(
    c_su: &BivariateCopulaFn,
    c_ut: &BivariateCopulaFn,
    c_st: &BivariateCopulaFn,
) -> Result<f64> {
    chapman_kolmogorov_residual_with(c_su, c_ut, c_st, DEFAULT_QUAD_POINTS, DEFAULT_PRODUCT_RESOLUTION)
}

pub fn chapman_kolmogorov_residual_with(
    c_su: &BivariateCopulaFn,
    c_ut: &BivariateCopulaFn,
    c_st: &BivariateCopulaFn,
    quad_points: usize,
    resolution: usize,
) -> Result<f64> {
    let prod = copula_product(c_su, c_ut, quad_points, resolution)?;
    let target = c_st.sample_lattice(resolution)?;
    Ok(prod
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Pr{X(t₁) ≤ x₁, …, X(t_n) ≤ x_n} assembled from consecutive bivariate
/// copulas and margins as
/// ∏_{i≥2} C_{t_{i−1},t_i}(F_{t_{i−1}}(x_{i−1}), F_{t_i}(x_i)) / ∏_{1<i<n} F_{t_i}(x_i).
pub fn markov_joint(
    copulas: &[BivariateCopulaFn],
    margins: &[MarginalState],
    x: &[f64],
) -> Result<f64> {
    let n = margins.len();
    if n < 2 || copulas.len() != n - 1 || x.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} copulas, {} margins, {} points",
            copulas.len(),
            n,
            x.len()
        )));
    }
    for (i, c) in copulas.iter().enumerate() {
        let (a, b) = (margins[i].time(), margins[i + 1].time());
        if (c.s - a).abs() > 1e-12 || (c.t - b).abs() > 1e-12 {
            return Err(Error::Consistency(format!(
                "{} does not connect times ({a}, {b})",
                c.label()
            )));
        }
    }
    let u: Vec<f64> = margins.iter().zip(x).map(|(m, &xi)| m.cdf_at(xi)).collect();
    let mut num = 1.0;
    for (i, c) in copulas.iter().enumerate() {
        num *= c.eval(u[i], u[i + 1])?;
    }
    let mut den = 1.0;
    for (i, &ui) in u.iter().enumerate().take(n - 1).skip(1) {
        if ui <= 0.0 {
            return Err(Error::DivisionDegeneracy(format!("F at interior time index {i} is zero")));
        }
        den *= ui;
    }
    Ok((num / den).clamp(0.0, 1.0))
}
