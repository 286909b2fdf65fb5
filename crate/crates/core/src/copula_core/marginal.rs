use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::{gradient, interp_linear, trapezoid};

/// Tolerances for the [`MarginalState`] invariants.
#[derive(Clone, Copy, Debug)]
pub struct MarginalTolerances {
    pub tail: f64,
    pub mass: f64,
    pub consistency: f64,
}

impl Default for MarginalTolerances {
    fn default() -> Self {
        Self { tail: 1e-6, mass: 1e-6, consistency: 1e-3 }
    }
}

/// A component's transition law F_i(t,·|x0), f_i(t,·|x0) sampled on a spatial grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalState {
    component: usize,
    x: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    time: f64,
    x0: Vec<f64>,
    monotone: bool,
}

impl MarginalState {
    /// Builds a state after structural checks. Monotonicity of the CDF samples is
    /// recorded rather than enforced; [`MarginalState::pseudo_inverse`] refuses a
    /// non-monotone CDF.
    pub fn new(
        component: usize,
        x: Vec<f64>,
        cdf: Vec<f64>,
        pdf: Vec<f64>,
        time: f64,
        x0: Vec<f64>,
    ) -> Result<Self> {
        if x.len() < 3 || cdf.len() != x.len() || pdf.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "marginal arrays need equal length >= 3 (x {}, F {}, f {})",
                x.len(),
                cdf.len(),
                pdf.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invariant("x grid must be strictly increasing".into()));
        }
        if cdf.iter().chain(&pdf).chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite marginal sample".into()));
        }
        let monotone = cdf.windows(2).all(|w| w[1] >= w[0]);
        Ok(Self { component, x, cdf, pdf, time, x0, monotone })
    }

    /// Samples closed-form CDF and density on `x`.
    pub fn from_fns(
        component: usize,
        x: Vec<f64>,
        time: f64,
        x0: Vec<f64>,
        cdf: impl Fn(f64) -> f64,
        pdf: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let f_cdf = x.iter().map(|&v| cdf(v)).collect();
        let f_pdf = x.iter().map(|&v| pdf(v)).collect();
        Self::new(component, x, f_cdf, f_pdf, time, x0)
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn pdf_values(&self) -> &[f64] {
        &self.pdf
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn span(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    /// F(x) by linear interpolation, 0/1 outside the span.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let (lo, hi) = self.span();
        if x < lo {
            return 0.0;
        }
        if x > hi {
            return 1.0;
        }
        interp_linear(&self.x, &self.cdf, x).clamp(0.0, 1.0)
    }

    pub fn pdf_at(&self, x: f64) -> f64 {
        let (lo, hi) = self.span();
        if x < lo || x > hi {
            return 0.0;
        }
        interp_linear(&self.x, &self.pdf, x).max(0.0)
    }

    /// Derivative samples of the density on the grid.
    pub fn pdf_gradient(&self) -> Vec<f64> {
        gradient(&self.x, &self.pdf)
    }

    /// inf{x : F(x) ≥ u} on the piecewise-linear CDF; u = 0 gives the first
    /// abscissa and u = 1 the last.
    pub fn pseudo_inverse(&self, u: f64) -> Result<f64> {
        if !self.monotone {
            return Err(Error::Invariant(format!(
                "CDF samples of component {} are not monotone",
                self.component
            )));
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("probability {u} outside [0,1]")));
        }
        Ok(self.pseudo_inverse_unchecked(u))
    }

    pub(crate) fn pseudo_inverse_unchecked(&self, u: f64) -> f64 {
        let n = self.x.len();
        if u <= 0.0 || u <= self.cdf[0] {
            return self.x[0];
        }
        if u >= 1.0 {
            return self.x[n - 1];
        }
        let k = self.cdf.partition_point(|&v| v < u);
        if k >= n {
            return self.x[n - 1];
        }
        let (f0, f1) = (self.cdf[k - 1], self.cdf[k]);
        let w = (u - f0) / (f1 - f0);
        self.x[k - 1] + w * (self.x[k] - self.x[k - 1])
    }

    /// Trapezoid mass of the density samples.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.x, &self.pdf)
    }

    /// Checks tails, mass and F/f consistency.
    pub fn check_invariants(&self, tol: &MarginalTolerances) -> Result<()> {
        if !self.monotone {
            return Err(Error::Invariant("CDF not nondecreasing".into()));
        }
        if self.pdf.iter().any(|&v| v < 0.0) {
            return Err(Error::Invariant("negative density sample".into()));
        }
        let n = self.x.len();
        if self.cdf[0] > tol.tail || self.cdf[n - 1] < 1.0 - tol.tail {
            return Err(Error::Invariant(format!(
                "CDF tails F(first) = {:.3e}, F(last) = {:.9}",
                self.cdf[0],
                self.cdf[n - 1]
            )));
        }
        let m = self.mass();
        if (m - 1.0).abs() > tol.mass {
            return Err(Error::Invariant(format!("density mass {m} not within {} of 1", tol.mass)));
        }
        for k in 1..n - 1 {
            let d = (self.cdf[k + 1] - self.cdf[k - 1]) / (self.x[k + 1] - self.x[k - 1]);
            if (d - self.pdf[k]).abs() > tol.consistency {
                return Err(Error::Invariant(format!(
                    "F and f inconsistent at x = {}: dF = {d}, f = {}",
                    self.x[k], self.pdf[k]
                )));
            }
        }
        Ok(())
    }

    /// Writes the `x,F,f` CSV layout.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,F,f")?;
        for k in 0..self.x.len() {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", self.x[k], self.cdf[k], self.pdf[k])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, component: usize, time: f64, x0: Vec<f64>) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty marginal CSV".into()))??;
        if header.trim() != "x,F,f" {
            return Err(Error::Parse(format!("unexpected marginal CSV header '{header}'")));
        }
        let (mut x, mut cdf, mut pdf) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!("row {} needs 3 fields", lineno + 2)));
            }
            x.push(vals[0]);
            cdf.push(vals[1]);
            pdf.push(vals[2]);
        }
        Self::new(component, x, cdf, pdf, time, x0)
    }
}
