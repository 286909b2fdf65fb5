use serde::Serialize;

use super::grid::CopulaGrid;

#[derive(Clone, Copy, Debug)]
pub struct AxiomTolerances {
    pub groundedness: f64,
    pub margin: f64,
    /// Allowed negative C-volume per lattice cell.
    pub volume: f64,
    pub frechet: f64,
}

impl AxiomTolerances {
    /// Freshly constructed parametric grids.
    pub fn parametric() -> Self {
        Self { groundedness: 1e-9, margin: 1e-9, volume: 1e-9, frechet: 1e-9 }
    }

    /// Grids produced by time evolution.
    pub fn evolution() -> Self {
        Self { groundedness: 5e-3, margin: 5e-3, volume: 1e-6, frechet: 5e-3 }
    }

    pub fn with_margin(mut self, eps: f64) -> Self {
        self.margin = eps;
        self.groundedness = eps;
        self.frechet = eps;
        self
    }

    pub fn with_volume(mut self, eps: f64) -> Self {
        self.volume = eps;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomCheck {
    pub passed: bool,
    /// Largest violation magnitude (0 when none).
    pub worst: f64,
    /// Lattice multi-index of the worst violation (lower corner for cell checks).
    pub location: Option<Vec<usize>>,
}

impl AxiomCheck {
    fn new() -> Self {
        Self { passed: true, worst: 0.0, location: None }
    }

    fn record(&mut self, violation: f64, tol: f64, at: &[usize]) {
        if violation > self.worst {
            self.worst = violation;
            self.location = Some(at.to_vec());
        }
        if violation > tol {
            self.passed = false;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    pub groundedness: AxiomCheck,
    pub margins: AxiomCheck,
    pub n_increasing: AxiomCheck,
    pub frechet_bounds: AxiomCheck,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.groundedness.passed
            && self.margins.passed
            && self.n_increasing.passed
            && self.frechet_bounds.passed
    }
}

pub fn frechet_lower(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    (u.iter().sum::<f64>() - n + 1.0).max(0.0)
}

pub fn frechet_upper(u: &[f64]) -> f64 {
    u.iter().copied().fold(1.0, f64::min)
}

/// Reports groundedness, margin identities, cell volumes and Fréchet bounds.
pub fn check_copula_axioms(g: &CopulaGrid, tol: &AxiomTolerances) -> AxiomReport {
    let n = g.dim();
    let r = g.resolution();
    let strides = g.strides();
    let values = g.values();
    let mut ground = AxiomCheck::new();
    let mut margins = AxiomCheck::new();
    let mut volume = AxiomCheck::new();
    let mut frechet = AxiomCheck::new();
    let mut multi = vec![0usize; n];
    let mut u = vec![0.0; n];
    let corners = 1usize << n;

    for (flat, &c) in values.iter().enumerate() {
        g.multi_index(flat, &mut multi);
        for (ui, &k) in u.iter_mut().zip(&multi) {
            *ui = g.coord(k);
        }
        if multi.contains(&0) {
            ground.record(c.abs(), tol.groundedness, &multi);
        }
        let below_one = multi.iter().filter(|&&k| k + 1 < r).count();
        if below_one <= 1 {
            // All other coordinates at 1: C equals the free coordinate.
            let target = frechet_upper(&u);
            margins.record((c - target).abs(), tol.margin, &multi);
        }
        let lo = frechet_lower(&u);
        let hi = frechet_upper(&u);
        frechet.record((lo - c).max(c - hi).max(0.0), tol.frechet, &multi);

        if multi.iter().all(|&k| k + 1 < r) {
            let mut vol = 0.0;
            for corner in 0..corners {
                let mut idx = flat;
                let mut upper = 0;
                for (axis, s) in strides.iter().enumerate() {
                    if corner >> axis & 1 == 1 {
                        idx += s;
                        upper += 1;
                    }
                }
                let sign = if (n - upper).is_multiple_of(2) { 1.0 } else { -1.0 };
                vol += sign * values[idx];
            }
            volume.record((-vol).max(0.0), tol.volume, &multi);
        }
    }
    AxiomReport { groundedness: ground, margins, n_increasing: volume, frechet_bounds: frechet }
}
