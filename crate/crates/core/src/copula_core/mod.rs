//! Static copula representations: lattice grids, closed-form families, sampled
//! marginal laws, axiom checks and Sklar composition.

mod axioms;
mod grid;
mod marginal;
mod parametric;
mod sklar;

pub use axioms::{
    check_copula_axioms, frechet_lower, frechet_upper, AxiomCheck, AxiomReport, AxiomTolerances,
};
pub use grid::{lattice_coord, CopulaGrid};
pub use marginal::{MarginalState, MarginalTolerances};
pub use parametric::{validate_correlation, ParametricCopula};
pub use sklar::sklar_compose;

use crate::error::Result;

/// Anything that evaluates C(u) on the unit cube.
pub trait Copula {
    fn dim(&self) -> usize;
    fn cdf(&self, u: &[f64]) -> Result<f64>;
}

impl Copula for ParametricCopula {
    fn dim(&self) -> usize {
        ParametricCopula::dim(self)
    }

    fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.eval(u)
    }
}

impl Copula for CopulaGrid {
    fn dim(&self) -> usize {
        CopulaGrid::dim(self)
    }

    fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.interpolate(u)
    }
}

/// Samples a parametric copula on the lattice.
pub fn sample_grid(c: &ParametricCopula, resolution: usize, time: f64) -> Result<CopulaGrid> {
    CopulaGrid::from_fn(c.dim(), resolution, time, |u| c.eval(u))
}

/// Default lattice resolution per axis: 101 for n = 2, 41 for n = 3.
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        2 => 101,
        3 => 41,
        _ => 21,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn families() -> Vec<ParametricCopula> {
        vec![
            ParametricCopula::product(2).unwrap(),
            ParametricCopula::min(2).unwrap(),
            ParametricCopula::max_bound(),
            ParametricCopula::gaussian2(0.7).unwrap(),
            ParametricCopula::gaussian2(-0.4).unwrap(),
            ParametricCopula::gaussian(3, vec![1.0, 0.5, 0.2, 0.5, 1.0, -0.1, 0.2, -0.1, 1.0]).unwrap(),
            ParametricCopula::product(3).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frechet_bounds_hold(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            for fam in families() {
                let u = &[a, b, c][..fam.dim()];
                let v = fam.eval(u).unwrap();
                prop_assert!(v >= frechet_lower(u) - 1e-12 && v <= frechet_upper(u) + 1e-12);
            }
        }

        #[test]
        fn zero_correlation_gaussian_is_product(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let g = ParametricCopula::gaussian2(0.0).unwrap();
            prop_assert!((g.eval(&[a, b]).unwrap() - a * b).abs() < 1e-10);
        }

        #[test]
        fn sklar_is_rank_invariant(k1 in 0usize..601, k2 in 0usize..601) {
            use crate::numerics::{linspace, norm_cdf, norm_pdf};
            let g = ParametricCopula::gaussian2(0.6).unwrap();
            let grid = linspace(-6.0, 6.0, 601);
            let base: Vec<MarginalState> = (0..2)
                .map(|i| MarginalState::from_fns(i, grid.clone(), 1.0, vec![0.0, 0.0], norm_cdf, norm_pdf).unwrap())
                .collect();
            // x -> exp(x) is strictly increasing; the transformed margins carry the same CDF samples.
            let mapped: Vec<MarginalState> = base
                .iter()
                .map(|m| {
                    let xs: Vec<f64> = m.x_grid().iter().map(|x| x.exp()).collect();
                    MarginalState::new(m.component(), xs, m.cdf_values().to_vec(), m.pdf_values().to_vec(), 1.0, vec![0.0, 0.0]).unwrap()
                })
                .collect();
            let a = sklar_compose(&g, &base, &[grid[k1], grid[k2]]).unwrap();
            let b = sklar_compose(&g, &mapped, &[grid[k1].exp(), grid[k2].exp()]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sampled_grids_pass_axioms() {
        for fam in families() {
            let r = if fam.dim() == 2 { 41 } else { 11 };
            let g = sample_grid(&fam, r, 0.0).unwrap();
            let rep = check_copula_axioms(&g, &AxiomTolerances::parametric().with_margin(1e-9));
            assert!(rep.all_passed(), "{} {rep:?}", fam.name());
        }
    }
}
