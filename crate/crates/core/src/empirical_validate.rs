//! Rank-based empirical copulas, distances between lattice copulas, and
//! convergence ladders: the Monte Carlo side of every comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula_core::{lattice_coord, CopulaGrid, ParametricCopula};
use crate::error::{Error, Result};
use crate::sde_engine::{simulate_paths, PathEnsemble, SdeSystem, SimOptions};

/// Fewest paths accepted by [`empirical_copula`].
pub const MIN_PATHS: usize = 100;
/// Tied samples beyond this share of a component signal an atom.
pub const TIE_LIMIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Sup,
    L2,
}

/// Average ranks (1-based) of `v`; also returns how many samples share a value
/// with some other sample.
fn average_ranks(v: &[f64]) -> (Vec<f64>, usize) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut tied = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = 0.5 * ((start + 1) + end) as f64;
        for &p in &order[start..end] {
            ranks[p] = avg;
        }
        if end - start > 1 {
            tied += end - start;
        }
        start = end;
    }
    (ranks, tied)
}

/// Empirical copula of per-component samples (all of equal length) on the lattice.
pub fn empirical_copula_from_columns(columns: &[Vec<f64>], resolution: usize, time: f64) -> Result<CopulaGrid> {
    let n = columns.len();
    if n == 0 {
        return Err(Error::Parameter("no components".into()));
    }
    let size = columns[0].len();
    if columns.iter().any(|c| c.len() != size) {
        return Err(Error::ShapeMismatch("components have different sample counts".into()));
    }
    if size < MIN_PATHS {
        return Err(Error::Precondition(format!("need at least {MIN_PATHS} samples, got {size}")));
    }
    if resolution < 2 {
        return Err(Error::Parameter("resolution must be at least 2".into()));
    }
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let last = (resolution - 1) as f64;
    // lattice bucket of each pseudo-observation: smallest k with u_k >= U
    let buckets: Vec<Vec<usize>> = columns
        .par_iter()
        .enumerate()
        .map(|(c, col)| {
            let (ranks, tied) = average_ranks(col);
            if tied as f64 > TIE_LIMIT * size as f64 {
                return Err(Error::Degeneracy(format!(
                    "component {} has {tied} of {size} samples tied",
                    c + 1
                )));
            }
            Ok(ranks
                .iter()
                .map(|&rk| {
                    let u = rk / (size as f64 + 1.0);
                    let mut k = (u * last).ceil() as usize;
                    // guard against u·last landing just above an integer
                    if k > 0 && lattice_coord(k - 1, resolution) >= u {
                        k -= 1;
                    }
                    k.min(resolution - 1)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let total = resolution.pow(n as u32);
    let mut counts = vec![0.0; total];
    for p in 0..size {
        let mut idx = 0;
        for b in &buckets {
            idx = idx * resolution + b[p];
        }
        counts[idx] += 1.0;
    }
    // cumulative sum along every axis turns bucket counts into C(u)
    for axis in 0..n {
        let stride = resolution.pow((n - 1 - axis) as u32);
        for f in 0..total {
            if !(f / stride).is_multiple_of(resolution) {
                counts[f] += counts[f - stride];
            }
        }
    }
    let inv = 1.0 / size as f64;
    counts.iter_mut().for_each(|v| *v *= inv);
    CopulaGrid::new(n, resolution, counts, time)
}

/// Empirical copula of the ensemble's cross-section at `t_index`, from
/// pseudo-observations rank/(n_paths+1) with average ranks for ties.
pub fn empirical_copula(ens: &PathEnsemble, t_index: usize, resolution: usize) -> Result<CopulaGrid> {
    if t_index >= ens.n_times() {
        return Err(Error::Parameter(format!(
            "time index {t_index} out of range ({} times)",
            ens.n_times()
        )));
    }
    if ens.n_paths() < MIN_PATHS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_PATHS} paths, got {}",
            ens.n_paths()
        )));
    }
    let columns: Vec<Vec<f64>> = (0..ens.dim()).map(|c| ens.cross_section(t_index, c)).collect();
    empirical_copula_from_columns(&columns, resolution, ens.t_grid()[t_index])
}

pub fn copula_distance(a: &CopulaGrid, b: &CopulaGrid, metric: Metric) -> Result<f64> {
    if a.dim() != b.dim() || a.resolution() != b.resolution() {
        return Err(Error::ShapeMismatch(format!(
            "grids {}^{} and {}^{}",
            a.resolution(),
            a.dim(),
            b.resolution(),
            b.dim()
        )));
    }
    let diffs = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs());
    Ok(match metric {
        Metric::Sup => diffs.fold(0.0, f64::max),
        Metric::L2 => (diffs.map(|d| d * d).sum::<f64>() / a.len() as f64).sqrt(),
    })
}

/// Monte Carlo standard error of an empirical copula value, at its worst
/// point: sqrt(max C(1 − C) / N).
pub fn empirical_stderr(reference: &CopulaGrid, sample_size: usize) -> f64 {
    let v = reference.values().iter().map(|c| c * (1.0 - c)).fold(0.0, f64::max);
    (v.max(1e-300) / sample_size as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metric: Metric,
    pub value: f64,
    /// `None` for comparisons between deterministic grids.
    pub sample_size: Option<usize>,
    pub resolution: usize,
    pub stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationReport {
    /// Distance between `grid` and `reference`; with a sample size the standard
    /// error comes from the reference values.
    pub fn compare(
        grid: &CopulaGrid,
        reference: &CopulaGrid,
        metric: Metric,
        sample_size: Option<usize>,
        tolerance: f64,
    ) -> Result<Self> {
        let value = copula_distance(grid, reference, metric)?;
        let stderr = sample_size.map_or(0.0, |s| empirical_stderr(reference, s));
        Ok(Self {
            metric,
            value,
            sample_size,
            resolution: grid.resolution(),
            stderr,
            tolerance,
            pass: value <= tolerance,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Sample size or lattice resolution.
    pub size: usize,
    pub distance: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of log distance against log size.
    pub slope: f64,
}

fn fitted_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.size as f64).ln(), r.distance.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Sample-size ladder: simulates `repeats` independent ensembles per size
/// (seeds `seed`, `seed + 1`, … in ladder order), measures the sup distance of
/// the terminal empirical copula to `reference`, and reports the mean and its
/// standard error per size.
pub fn sample_size_ladder(
    sys: &SdeSystem,
    t_grid: &[f64],
    reference: &CopulaGrid,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    if sizes.len() < 2 || repeats == 0 {
        return Err(Error::Parameter("need at least two sizes and one repeat".into()));
    }
    let opts = SimOptions::default();
    let last = t_grid.len() - 1;
    let jobs: Vec<(usize, u64)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| (0..repeats).map(move |k| (s, seed + (i * repeats + k) as u64)))
        .collect();
    let dists: Vec<f64> = jobs
        .par_iter()
        .map(|&(size, sd)| {
            let ens = simulate_paths(sys, t_grid, size, sd, &opts)?;
            let emp = empirical_copula(&ens, last, reference.resolution())?;
            copula_distance(&emp, reference, Metric::Sup)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ConvergenceRow> = sizes
        .iter()
        .zip(dists.chunks(repeats))
        .map(|(&size, d)| {
            let k = d.len() as f64;
            let mean = d.iter().sum::<f64>() / k;
            let stderr = if d.len() > 1 {
                (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                empirical_stderr(reference, size)
            };
            ConvergenceRow { size, distance: mean, stderr }
        })
        .collect();
    let slope = fitted_slope(&rows);
    Ok(ConvergenceTable { rows, slope })
}

/// Resolution ladder: sup error of the multilinear interpolant of each lattice
/// sample against the closed form, over a fixed set of off-lattice probes.
pub fn resolution_ladder(c: &ParametricCopula, resolutions: &[usize], probes: usize) -> Result<ConvergenceTable> {
    if resolutions.len() < 2 {
        return Err(Error::Parameter("need at least two resolutions".into()));
    }
    let n = c.dim();
    // an irrational-step probe set avoids aligning with any lattice
    let pts: Vec<Vec<f64>> = (0..probes)
        .map(|k| {
            (0..n)
                .map(|a| {
                    let g = [0.618_033_988_749_895, 0.754_877_666_246_693, 0.569_840_290_998_053][a % 3];
                    0.05 + 0.9 * ((k as f64 + 0.5) * g).fract()
                })
                .collect()
        })
        .collect();
    let exact: Vec<f64> = pts.iter().map(|u| c.eval(u)).collect::<Result<_>>()?;
    let rows = resolutions
        .par_iter()
        .map(|&r| {
            let g = CopulaGrid::from_fn(n, r, 0.0, |u| c.eval(u))?;
            let mut worst: f64 = 0.0;
            for (u, e) in pts.iter().zip(&exact) {
                worst = worst.max((g.interpolate(u)? - e).abs());
            }
            Ok(ConvergenceRow { size: r, distance: worst, stderr: 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = fitted_slope(&rows);
    Ok(ConvergenceTable { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula_core::{check_copula_axioms, sample_grid, AxiomTolerances};
    use crate::sde_engine::{CorrelationField, ScalarField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_columns(n: usize, size: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..size).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn comonotone_samples_give_the_upper_bound() {
        let col = uniform_columns(1, 2000, 1).remove(0);
        let g = empirical_copula_from_columns(&[col.clone(), col], 21, 1.0).unwrap();
        let m = sample_grid(&ParametricCopula::min(2).unwrap(), 21, 1.0).unwrap();
        assert!(copula_distance(&g, &m, Metric::Sup).unwrap() <= 2.0 / 2001.0);
    }

    #[test]
    fn independent_uniforms_approach_the_product() {
        let cols = uniform_columns(2, 100_000, 7);
        let g = empirical_copula_from_columns(&cols, 51, 1.0).unwrap();
        let p = sample_grid(&ParametricCopula::product(2).unwrap(), 51, 1.0).unwrap();
        let d = copula_distance(&g, &p, Metric::Sup).unwrap();
        assert!(d <= 2.5 / (1e5f64).sqrt(), "{d}");
    }

    #[test]
    fn increasing_transforms_change_nothing() {
        let cols = uniform_columns(2, 500, 3);
        let a = empirical_copula_from_columns(&cols, 26, 0.0).unwrap();
        let warped = vec![cols[0].iter().map(|v| (5.0 * v).exp() - 3.0).collect(), cols[1].clone()];
        let b = empirical_copula_from_columns(&warped, 26, 0.0).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn output_satisfies_the_axioms() {
        let cols = uniform_columns(3, 999, 11);
        let g = empirical_copula_from_columns(&cols, 11, 0.0).unwrap();
        let tol = AxiomTolerances::parametric().with_margin(2.0 / 1000.0);
        assert!(check_copula_axioms(&g, &tol).all_passed());
    }

    #[test]
    fn atoms_are_degenerate() {
        let cols = vec![vec![1.0; 500], uniform_columns(1, 500, 2).remove(0)];
        assert!(matches!(empirical_copula_from_columns(&cols, 11, 0.0), Err(Error::Degeneracy(_))));
        let few = uniform_columns(2, 50, 2);
        assert!(matches!(empirical_copula_from_columns(&few, 11, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn average_ranks_of_ties() {
        let (r, tied) = average_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(tied, 2);
    }

    #[test]
    fn distance_examples() {
        let p = sample_grid(&ParametricCopula::product(2).unwrap(), 101, 0.0).unwrap();
        let m = sample_grid(&ParametricCopula::min(2).unwrap(), 101, 0.0).unwrap();
        let g = sample_grid(&ParametricCopula::gaussian2(0.5).unwrap(), 101, 0.0).unwrap();
        assert_eq!(copula_distance(&p, &p, Metric::Sup).unwrap(), 0.0);
        assert!((copula_distance(&p, &m, Metric::Sup).unwrap() - 0.25).abs() < 1e-15);
        // C(½,½) = ¼ + arcsin(ρ)/(2π) = 1/3 for ρ = ½
        assert!((copula_distance(&g, &p, Metric::Sup).unwrap() - 1.0 / 12.0).abs() < 1e-9);
        let small = sample_grid(&ParametricCopula::product(2).unwrap(), 11, 0.0).unwrap();
        assert!(matches!(copula_distance(&p, &small, Metric::L2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_serializes_and_passes_on_identity() {
        let p = sample_grid(&ParametricCopula::product(2).unwrap(), 11, 0.0).unwrap();
        let r = ValidationReport::compare(&p, &p, Metric::Sup, Some(1000), 1e-3).unwrap();
        assert!(r.pass && r.value == 0.0 && r.stderr > 0.0);
        let back: ValidationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    fn independent_brownian() -> SdeSystem {
        SdeSystem::new(
            vec![ScalarField::Constant(0.0); 2],
            vec![ScalarField::Constant(1.0); 2],
            CorrelationField::Independent,
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn sample_ladder_has_root_n_rate() {
        let p = sample_grid(&ParametricCopula::product(2).unwrap(), 51, 1.0).unwrap();
        let t = ladder_of(&p, &[1_000, 10_000, 100_000], 4, 100);
        assert!((-0.65..=-0.35).contains(&t.slope), "{t:?}");
    }

    fn ladder_of(p: &CopulaGrid, sizes: &[usize], repeats: usize, seed: u64) -> ConvergenceTable {
        sample_size_ladder(&independent_brownian(), &[0.0, 1.0], p, sizes, repeats, seed).unwrap()
    }

    #[test]
    fn doubling_paths_reduces_the_median_distance() {
        let p = sample_grid(&ParametricCopula::product(2).unwrap(), 51, 1.0).unwrap();
        let median = |size: usize, seed: u64| {
            let mut d: Vec<f64> = (0..10)
                .map(|k| {
                    let ens = simulate_paths(&independent_brownian(), &[0.0, 1.0], size, seed + k, &SimOptions::default())
                        .unwrap();
                    copula_distance(&empirical_copula(&ens, 1, 51).unwrap(), &p, Metric::Sup).unwrap()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            0.5 * (d[4] + d[5])
        };
        assert!(median(4000, 500) < median(2000, 900));
    }

    #[test]
    fn resolution_ladder_is_second_order() {
        let c = ParametricCopula::gaussian2(0.5).unwrap();
        let t = resolution_ladder(&c, &[11, 21, 41, 81], 400).unwrap();
        assert!((-2.3..=-1.7).contains(&t.slope), "{t:?}");
    }

    #[test]
    fn constant_paths_are_degenerate() {
        let sys = SdeSystem::new(
            vec![ScalarField::Constant(0.0); 2],
            vec![ScalarField::Constant(0.0); 2],
            CorrelationField::Independent,
            vec![1.0, 2.0],
        )
        .unwrap();
        let ens = simulate_paths(&sys, &[0.0, 1.0], 200, 1, &SimOptions::default()).unwrap();
        assert!(matches!(empirical_copula(&ens, 1, 11), Err(Error::Degeneracy(_))));
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(seed in 0u64..1000) {
            let grids: Vec<CopulaGrid> = (0..3)
                .map(|k| empirical_copula_from_columns(&uniform_columns(2, 150, seed * 3 + k), 9, 0.0).unwrap())
                .collect();
            for metric in [Metric::Sup, Metric::L2] {
                let d = |a: usize, b: usize| copula_distance(&grids[a], &grids[b], metric).unwrap();
                prop_assert_eq!(d(0, 1), d(1, 0));
                prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-15);
                prop_assert_eq!(d(0, 0), 0.0);
            }
        }
    }
}
