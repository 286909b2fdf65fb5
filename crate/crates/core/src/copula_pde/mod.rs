//! Time evolution of the copula of a diffusion on the u-lattice.
//!
//! The interior of the cube follows the copula PDE; boundary values are the
//! copula axioms and are re-imposed after every step rather than evolved.

mod evolve;
mod frame;
mod lattice;
mod rhs;

pub use evolve::{evolve, EvolveOutcome, StepDiagnostics};
pub use frame::{AxisMap, DENSITY_FLOOR};
pub use lattice::LatticeDerivatives;
pub use rhs::{FirstTermVariant, RhsField, RhsForm};

use frame::{Frame, MarginTrack};
use lattice::Shape;

use crate::copula_core::{CopulaGrid, MarginalState};
use crate::error::{Error, Result};
use crate::marginal_solver::{advance_marginal, solve_marginal_kfe, MarginalModel, DEFAULT_T0};
use crate::sde_engine::SdeSystem;

/// Stability safety factor: Δt ≤ 0.25·Δu² / max ½σ̃²f², scaled by 2/n.
pub const STABILITY_FACTOR: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct PdeOptions {
    /// Points of each marginal x grid.
    pub x_points: usize,
    /// Latest time the marginal grids must cover.
    pub horizon: Option<f64>,
    pub first_term: FirstTermVariant,
    /// Solve every margin numerically even when a closed form exists.
    pub force_numeric: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self { x_points: 801, horizon: None, first_term: FirstTermVariant::Outside, force_numeric: false }
    }
}

/// A copula grid together with the margins, coefficients and lattice
/// derivatives needed to evaluate its time derivative.
#[derive(Clone, Debug)]
pub struct PdeWorkspace {
    copula: CopulaGrid,
    margins: Vec<MarginalState>,
    system: SdeSystem,
    tracks: Vec<MarginTrack>,
    options: PdeOptions,
    horizon: f64,
    quantiles: Vec<f64>,
    derivs: LatticeDerivatives,
    frame: Frame,
}

impl PdeWorkspace {
    /// Builds the margins at the copula's time stamp, which must be positive.
    pub fn new(system: SdeSystem, copula: CopulaGrid, options: PdeOptions) -> Result<Self> {
        let n = system.dim();
        if copula.dim() != n {
            return Err(Error::ShapeMismatch(format!(
                "copula dimension {} vs system dimension {n}",
                copula.dim()
            )));
        }
        if !(2..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if copula.resolution() < 5 {
            return Err(Error::Parameter("lattice resolution must be at least 5".into()));
        }
        let t0 = copula.time();
        if !(t0 > 0.0) {
            return Err(Error::Precondition(
                "copula evolution starts at t0 > 0 (the law at t = 0 is a point mass)".into(),
            ));
        }
        let horizon = options.horizon.unwrap_or((4.0 * t0).max(1.0)).max(t0);
        let mut tracks = Vec::with_capacity(n);
        let mut margins = Vec::with_capacity(n);
        for i in 0..n {
            let auto = MarginalModel::auto(&system, i)?;
            let x = auto.suggest_x_grid(horizon, options.x_points);
            if auto.analytic_law().is_some() && !options.force_numeric {
                margins.push(auto.analytic_state(t0, &x)?);
                tracks.push(MarginTrack::Analytic(auto));
            } else {
                let model = MarginalModel::new(&system, i, None, Default::default())?;
                let x = if auto.analytic_law().is_some() { x } else { model.suggest_x_grid(horizon, options.x_points) };
                let start = DEFAULT_T0.min(t0 * 0.5);
                let steps = model.required_steps(&x, start, t0);
                margins.push(solve_marginal_kfe(&model, start, t0, &x, steps)?);
                tracks.push(MarginTrack::Numeric(model));
            }
        }
        Self::assemble(system, copula, margins, tracks, options, horizon)
    }

    /// Uses caller-supplied margins, all stamped with the copula's time; they
    /// are advanced numerically during evolution.
    pub fn with_margins(
        system: SdeSystem,
        copula: CopulaGrid,
        margins: Vec<MarginalState>,
        options: PdeOptions,
    ) -> Result<Self> {
        let n = system.dim();
        if copula.dim() != n || margins.len() != n {
            return Err(Error::ShapeMismatch("copula, margins and system disagree on dimension".into()));
        }
        if !(2..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        for m in &margins {
            if (m.time() - copula.time()).abs() > 1e-12 {
                return Err(Error::Consistency(format!(
                    "margin {} stamped {} but the copula is at {}",
                    m.component() + 1,
                    m.time(),
                    copula.time()
                )));
            }
        }
        let tracks = (0..n)
            .map(|i| MarginalModel::new(&system, i, None, Default::default()).map(MarginTrack::Numeric))
            .collect::<Result<Vec<_>>>()?;
        let horizon = options.horizon.unwrap_or(f64::INFINITY);
        Self::assemble(system, copula, margins, tracks, options, horizon)
    }

    fn assemble(
        system: SdeSystem,
        copula: CopulaGrid,
        margins: Vec<MarginalState>,
        tracks: Vec<MarginTrack>,
        options: PdeOptions,
        horizon: f64,
    ) -> Result<Self> {
        let shape = Shape::new(copula.dim(), copula.resolution());
        let quantiles = frame::lattice_quantiles(shape.r);
        let derivs = LatticeDerivatives::compute(copula.values(), shape);
        let frame = build_frame(&system, &tracks, &margins, &quantiles, shape, copula.time(), true);
        Ok(Self { copula, margins, system, tracks, options, horizon, quantiles, derivs, frame })
    }

    pub fn copula(&self) -> &CopulaGrid {
        &self.copula
    }

    pub fn margins(&self) -> &[MarginalState] {
        &self.margins
    }

    pub fn system(&self) -> &SdeSystem {
        &self.system
    }

    pub fn options(&self) -> &PdeOptions {
        &self.options
    }

    pub fn set_first_term(&mut self, v: FirstTermVariant) {
        self.options.first_term = v;
    }

    pub fn time(&self) -> f64 {
        self.copula.time()
    }

    pub fn derivatives(&self) -> &LatticeDerivatives {
        &self.derivs
    }

    /// x = F⁻¹(u) and f(x) along each axis at the current time.
    pub fn axis_maps(&self) -> &[AxisMap] {
        &self.frame.axes
    }

    /// True when a margin is solved by the closed form.
    pub fn analytic_margins(&self) -> Vec<bool> {
        self.tracks.iter().map(|t| matches!(t, MarginTrack::Analytic(_))).collect()
    }

    /// Replaces the copula (same shape and time) and rebuilds the derivative cache.
    pub fn set_copula(&mut self, c: CopulaGrid) -> Result<()> {
        if c.dim() != self.copula.dim() || c.resolution() != self.copula.resolution() {
            return Err(Error::ShapeMismatch("replacement grid has a different shape".into()));
        }
        if (c.time() - self.time()).abs() > 1e-12 {
            return Err(Error::Consistency("replacement grid has a different time stamp".into()));
        }
        self.copula = c;
        self.refresh();
        Ok(())
    }

    /// Recomputes every cache from the copula values and margins.
    pub fn refresh(&mut self) {
        let shape = self.shape();
        self.derivs = LatticeDerivatives::compute(self.copula.values(), shape);
        self.frame =
            build_frame(&self.system, &self.tracks, &self.margins, &self.quantiles, shape, self.time(), true);
    }

    pub(crate) fn shape(&self) -> Shape {
        Shape::new(self.copula.dim(), self.copula.resolution())
    }

    /// Largest stable step at the current time.
    pub fn stable_dt(&self) -> f64 {
        stable_dt(&self.frame)
    }

    /// Fewest steps to t1 that respect the stability bound at the current time.
    pub fn required_steps(&self, t1: f64) -> usize {
        let dt = self.stable_dt();
        if dt.is_finite() { ((t1 - self.time()) / dt).ceil().max(1.0) as usize } else { 1 }
    }

    pub fn rhs(&self, form: RhsForm) -> Result<RhsField> {
        match form {
            RhsForm::Simplified => rhs_simplified(self),
            RhsForm::General => rhs_general(self),
            RhsForm::Galichon2d => galichon2d_rhs(self),
        }
    }

    fn check_sync(&self) -> Result<()> {
        for m in &self.margins {
            if (m.time() - self.time()).abs() > 1e-12 {
                return Err(Error::Consistency(format!(
                    "margin {} is at t = {}, copula at t = {}",
                    m.component() + 1,
                    m.time(),
                    self.time()
                )));
            }
        }
        Ok(())
    }

    /// Advances the numerically tracked margins to `t1`. Analytic tracks are
    /// passed through unchanged: their frames only need the time, and
    /// [`PdeWorkspace::settle_margins`] evaluates them once at the end.
    pub(crate) fn margins_at(&self, from: &[MarginalState], t1: f64) -> Result<Vec<MarginalState>> {
        let numeric = self.tracks.iter().any(|t| matches!(t, MarginTrack::Numeric(_)));
        if numeric && t1 > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "marginal grids cover t <= {}; rebuild the workspace with a later horizon to reach {t1}",
                self.horizon
            )));
        }
        self.tracks
            .iter()
            .zip(from)
            .map(|(track, m)| match track {
                MarginTrack::Analytic(_) => Ok(m.clone()),
                MarginTrack::Numeric(model) => {
                    let steps = model.required_steps(m.x_grid(), m.time(), t1);
                    Ok(advance_marginal(model, m, t1, steps)?.0)
                }
            })
            .collect()
    }

    pub(crate) fn settle_margins(&self, margins: Vec<MarginalState>, t1: f64) -> Result<Vec<MarginalState>> {
        self.tracks
            .iter()
            .zip(margins)
            .map(|(track, m)| match track {
                MarginTrack::Analytic(model) => model.analytic_state(t1, m.x_grid()),
                MarginTrack::Numeric(_) => Ok(m),
            })
            .collect()
    }

    pub(crate) fn frame_for(&self, margins: &[MarginalState], time: f64, with_b: bool) -> Frame {
        build_frame(&self.system, &self.tracks, margins, &self.quantiles, self.shape(), time, with_b)
    }
}

fn build_frame(
    sys: &SdeSystem,
    tracks: &[MarginTrack],
    margins: &[MarginalState],
    quantiles: &[f64],
    shape: Shape,
    time: f64,
    with_b: bool,
) -> Frame {
    let axes = tracks.iter().zip(margins).map(|(t, m)| t.axis_map(m, time, quantiles)).collect();
    Frame::build(sys, axes, shape, time, with_b)
}

pub(crate) fn stable_dt(frame: &Frame) -> f64 {
    let d = frame.max_diffusion();
    let h = frame.shape.h;
    if d > 0.0 {
        STABILITY_FACTOR * h * h / d * 2.0 / frame.shape.n as f64
    } else {
        f64::INFINITY
    }
}

/// ∂_tC from the trace form; needs individually Markov coefficients.
pub fn rhs_simplified(w: &PdeWorkspace) -> Result<RhsField> {
    w.check_sync()?;
    rhs::simplified(&w.system, &w.frame, w.copula.values())
}

/// ∂_tC from the three groups of integral terms (n ≤ 3).
pub fn rhs_general(w: &PdeWorkspace) -> Result<RhsField> {
    w.check_sync()?;
    rhs::general(&w.frame, &w.derivs, w.options.first_term)
}

/// ∂_tC from the written-out two-dimensional equation.
pub fn galichon2d_rhs(w: &PdeWorkspace) -> Result<RhsField> {
    w.check_sync()?;
    rhs::galichon2d(&w.system, &w.frame, w.copula.values())
}
