//! The u → x maps of one time level and the coefficient samples they induce.

use super::lattice::Shape;
use crate::copula_core::{lattice_coord, MarginalState};
use crate::marginal_solver::{b_pointwise, AnalyticLaw, MarginalModel};
use crate::numerics::{interp_linear, norm_pdf, norm_quantile};
use crate::sde_engine::{ScalarField, SdeSystem};

/// Divisor guard for marginal densities.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Analytic quantiles are truncated at this many standard deviations.
const TAIL_SD: f64 = 9.0;

/// Per-axis samples at the lattice coordinates u_k: x_k = F⁻¹(u_k), f(x_k), f'(x_k).
/// The density is taken as 0 at u ∈ {0, 1}; interior values are floored at
/// [`DENSITY_FLOOR`].
#[derive(Clone, Debug, PartialEq)]
pub struct AxisMap {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub f_prime: Vec<f64>,
    /// Interior samples raised to the floor.
    pub floor_hits: usize,
}

impl AxisMap {
    fn zeros(r: usize) -> Self {
        Self { x: vec![0.0; r], f: vec![0.0; r], f_prime: vec![0.0; r], floor_hits: 0 }
    }

    fn apply_floor(mut self) -> Self {
        let r = self.f.len();
        for v in &mut self.f[1..r - 1] {
            if *v < DENSITY_FLOOR {
                *v = DENSITY_FLOOR;
                self.floor_hits += 1;
            }
        }
        self
    }

    pub fn from_state(m: &MarginalState, r: usize) -> Self {
        let grad = m.pdf_gradient();
        let mut out = Self::zeros(r);
        for k in 0..r {
            let u = lattice_coord(k, r);
            let x = m.pseudo_inverse_unchecked(u);
            out.x[k] = x;
            if k > 0 && k + 1 < r {
                out.f[k] = m.pdf_at(x);
                out.f_prime[k] = interp_linear(m.x_grid(), &grad, x);
            }
        }
        out.apply_floor()
    }

    /// `z` holds the standard normal quantiles of the lattice coordinates.
    pub fn from_law(law: AnalyticLaw, x0: f64, t: f64, z: &[f64]) -> Self {
        let r = z.len();
        let mut out = Self::zeros(r);
        let (mean, sd, log) = match law {
            AnalyticLaw::Brownian { mu, sigma } => (x0 + mu * t, sigma * t.sqrt(), false),
            AnalyticLaw::Ou { theta, mean, sigma } => (
                mean + (x0 - mean) * (-theta * t).exp(),
                (sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta)).sqrt(),
                false,
            ),
            AnalyticLaw::Gbm { mu, sigma } => {
                (x0.ln() + (mu - 0.5 * sigma * sigma) * t, sigma * t.sqrt(), true)
            }
        };
        let sd = sd.max(1e-9);
        for (k, &z) in z.iter().enumerate() {
            let y = mean + sd * z;
            if log {
                let x = y.exp();
                out.x[k] = x;
                if k > 0 && k + 1 < r {
                    let f = norm_pdf(z) / (sd * x);
                    out.f[k] = f;
                    out.f_prime[k] = -f / x * (1.0 + z / sd);
                }
            } else {
                out.x[k] = y;
                if k > 0 && k + 1 < r {
                    let f = norm_pdf(z) / sd;
                    out.f[k] = f;
                    out.f_prime[k] = -z / sd * f;
                }
            }
        }
        out.apply_floor()
    }
}

/// Φ⁻¹(u_k) on the lattice, truncated in the tails.
pub(crate) fn lattice_quantiles(r: usize) -> Vec<f64> {
    (0..r).map(|k| norm_quantile(lattice_coord(k, r)).clamp(-TAIL_SD, TAIL_SD)).collect()
}

/// A coefficient sampled on the lattice, stored with only the dependence it has.
#[derive(Clone, Debug)]
pub(crate) enum Field {
    Const(f64),
    /// Depends on one axis coordinate only.
    Axis(usize, Vec<f64>),
    Full(Vec<f64>),
}

impl Field {
    #[inline]
    pub fn at(&self, flat: usize, multi: &[usize]) -> f64 {
        match self {
            Field::Const(c) => *c,
            Field::Axis(a, v) => v[multi[*a]],
            Field::Full(v) => v[flat],
        }
    }

    /// Expanded to one value per lattice point.
    pub fn to_full(&self, s: Shape) -> Vec<f64> {
        match self {
            Field::Const(c) => vec![*c; s.len()],
            Field::Axis(a, v) => {
                let st = s.stride(*a);
                let mut out = Vec::with_capacity(s.len());
                while out.len() < s.len() {
                    for &x in v {
                        out.extend(std::iter::repeat_n(x, st));
                    }
                }
                out
            }
            Field::Full(v) => v.clone(),
        }
    }
}

fn axis_multi(n: usize, i: usize, k: usize) -> Vec<usize> {
    let mut m = vec![0; n];
    m[i] = k;
    m
}

/// Everything the right-hand sides need at one time level.
#[derive(Clone, Debug)]
pub struct Frame {
    pub time: f64,
    pub axes: Vec<AxisMap>,
    pub(crate) shape: Shape,
    /// σ̃_i(x(m)) per component.
    pub(crate) sigma: Vec<Field>,
    /// B^i_t F_i at x(m) per component; empty unless requested.
    pub(crate) b: Vec<Field>,
    /// ρ_ij(x_i, x_j) at index i·n + j, i < j.
    pub(crate) rho: Vec<Field>,
    /// σ̃_i·f_i at every lattice point.
    pub(crate) amp: Vec<Vec<f64>>,
    /// Interior axis samples whose density was raised to the floor.
    pub floor_hits: usize,
}

impl Frame {
    pub(crate) fn build(sys: &SdeSystem, axes: Vec<AxisMap>, shape: Shape, time: f64, with_b: bool) -> Self {
        let n = shape.n;
        let r = shape.r;
        let len = shape.len();
        // a state on the lattice with coordinate i at position k and the rest at mid-lattice
        let axis_state = |i: usize, k: usize| -> Vec<f64> {
            (0..n).map(|a| if a == i { axes[a].x[k] } else { axes[a].x[r / 2] }).collect()
        };
        let full = |g: &dyn Fn(&[f64], &[usize]) -> f64| -> Vec<f64> {
            let mut multi = vec![0; n];
            let mut x = vec![0.0; n];
            (0..len)
                .map(|f| {
                    shape.multi(f, &mut multi);
                    for a in 0..n {
                        x[a] = axes[a].x[multi[a]];
                    }
                    g(&x, &multi)
                })
                .collect()
        };
        let own_only = |i: usize| {
            sys.markov_flags()[i]
                || (sys.mu_field(i).structurally_depends_only_on(i) == Some(true)
                    && sys.sigma_field(i).structurally_depends_only_on(i) == Some(true))
        };
        let mut sigma = Vec::with_capacity(n);
        let mut b = Vec::new();
        for i in 0..n {
            let sf = sys.sigma_field(i);
            if let ScalarField::Constant(c) = sf {
                sigma.push(Field::Const(*c));
            } else if own_only(i) || sf.structurally_depends_only_on(i) == Some(true) {
                sigma.push(Field::Axis(i, (0..r).map(|k| sys.sigma(i, &axis_state(i, k))).collect()));
            } else {
                sigma.push(Field::Full(full(&|x, _| sys.sigma(i, x))));
            }
            if with_b {
                let ax = &axes[i];
                if own_only(i) {
                    b.push(Field::Axis(
                        i,
                        (0..r).map(|k| b_pointwise(sys, i, &axis_state(i, k), ax.f[k], ax.f_prime[k])).collect(),
                    ));
                } else {
                    b.push(Field::Full(full(&|x, m| b_pointwise(sys, i, x, ax.f[m[i]], ax.f_prime[m[i]]))));
                }
            }
        }
        let mut rho = vec![Field::Const(0.0); n * n];
        for i in 0..n {
            for j in i + 1..n {
                rho[i * n + j] = if sys.correlation_field().is_state_independent() {
                    Field::Const(sys.rho(i, j, 0.0, 0.0))
                } else {
                    Field::Full(full(&|x, _| sys.rho(i, j, x[i], x[j])))
                };
            }
        }
        let amp = (0..n)
            .map(|i| {
                let f = &axes[i].f;
                match &sigma[i] {
                    Field::Full(v) => {
                        let fa = Field::Axis(i, f.clone()).to_full(shape);
                        v.iter().zip(fa).map(|(a, b)| a * b).collect()
                    }
                    g => {
                        let per_axis: Vec<f64> = (0..r).map(|k| g.at(0, &axis_multi(n, i, k)) * f[k]).collect();
                        Field::Axis(i, per_axis).to_full(shape)
                    }
                }
            })
            .collect();
        let floor_hits = axes.iter().map(|a| a.floor_hits).sum();
        Self { time, axes, shape, sigma, b, rho, amp, floor_hits }
    }

    pub(crate) fn rho(&self, i: usize, j: usize) -> &Field {
        let n = self.shape.n;
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        &self.rho[a * n + b]
    }

    /// Largest ½σ̃_i²f_i² over the lattice.
    pub fn max_diffusion(&self) -> f64 {
        let s = self.shape;
        let mut best: f64 = 0.0;
        for i in 0..s.n {
            let f = &self.axes[i].f;
            match &self.sigma[i] {
                Field::Const(c) => {
                    best = best.max(f.iter().map(|v| 0.5 * (c * v).powi(2)).fold(0.0, f64::max));
                }
                Field::Axis(_, v) => {
                    best = best.max(v.iter().zip(f).map(|(a, b)| 0.5 * (a * b).powi(2)).fold(0.0, f64::max));
                }
                Field::Full(v) => {
                    for (flat, sv) in v.iter().enumerate() {
                        best = best.max(0.5 * (sv * f[s.coord(flat, i)]).powi(2));
                    }
                }
            }
        }
        best
    }

    /// Fraction of interior axis samples below the density floor.
    pub fn floor_fraction(&self) -> f64 {
        self.floor_hits as f64 / (self.shape.n * (self.shape.r - 2)) as f64
    }
}

/// Source of a component's law over time.
#[derive(Clone, Debug)]
pub(crate) enum MarginTrack {
    Analytic(MarginalModel),
    Numeric(MarginalModel),
}

impl MarginTrack {
    /// Analytic tracks use only `time` and the lattice quantiles `z`; numeric
    /// tracks read `state`, which must be at `time`.
    pub fn axis_map(&self, state: &MarginalState, time: f64, z: &[f64]) -> AxisMap {
        match self {
            MarginTrack::Analytic(m) => {
                let law = m.analytic_law().expect("analytic track carries a law");
                AxisMap::from_law(law, m.system().x0()[m.component()], time, z)
            }
            MarginTrack::Numeric(_) => AxisMap::from_state(state, z.len()),
        }
    }
}
