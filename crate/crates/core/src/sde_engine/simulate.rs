use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::ensemble::{check_time_grid, PathEnsemble};
use super::existence::check_existence_conditions;
use super::system::{project_correlation, psd_cholesky, SdeSystem, SEVERE_EIGENVALUE};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Euler steps per recorded interval of the time grid.
    pub substeps: usize,
    /// Simulate even when the existence check reports a violation.
    pub skip_existence_check: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { substeps: 1, skip_existence_check: false }
    }
}

/// Independent stream for one path: same root seed, stream number = path index.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

enum Failure {
    BlowUp(usize),
    Model(String),
}

/// Diffusion factor: Cholesky of ρ either fixed for the whole run or rebuilt per state.
struct Factor {
    n: usize,
    fixed: Option<Vec<f64>>,
}

impl Factor {
    fn new(sys: &SdeSystem) -> Result<Self> {
        let n = sys.dim();
        let fixed = if sys.correlation_field().is_state_independent() {
            let p = sys.correlation_at(sys.x0())?;
            if p.min_eigenvalue < SEVERE_EIGENVALUE {
                return Err(Error::Model(format!(
                    "correlation matrix has eigenvalue {:.4} before clipping",
                    p.min_eigenvalue
                )));
            }
            Some(psd_cholesky(&p.matrix, n))
        } else {
            None
        };
        Ok(Self { n, fixed })
    }

    /// Writes L·z into `out`; returns whether PSD repair was needed.
    fn apply(
        &self,
        sys: &SdeSystem,
        x: &[f64],
        z: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<bool, Failure> {
        let n = self.n;
        if let Some(l) = &self.fixed {
            lower_mul(l, n, z, out);
            return Ok(false);
        }
        if n == 2 {
            let r = sys.rho(0, 1, x[0], x[1]).clamp(-1.0, 1.0);
            out[0] = z[0];
            out[1] = r * z[0] + (1.0 - r * r).max(0.0).sqrt() * z[1];
            return Ok(false);
        }
        let p = project_correlation(&sys.correlation_field().matrix(x), n);
        if p.min_eigenvalue < SEVERE_EIGENVALUE {
            return Err(Failure::Model(format!(
                "correlation at {x:?} has eigenvalue {:.4} before clipping",
                p.min_eigenvalue
            )));
        }
        lower_mul(&psd_cholesky(&p.matrix, n), n, z, out);
        Ok(p.projected)
    }
}

fn lower_mul(l: &[f64], n: usize, z: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..=i).map(|k| l[i * n + k] * z[k]).sum();
    }
}

struct Scratch {
    corr: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self { corr: vec![0.0; n], drift: vec![0.0; n], diff: vec![0.0; n] }
    }
}

/// One Euler–Maruyama update given independent N(0, dt) increments `dw`.
fn em_step(
    sys: &SdeSystem,
    factor: &Factor,
    x: &mut [f64],
    dt: f64,
    dw: &[f64],
    s: &mut Scratch,
) -> std::result::Result<bool, Failure> {
    let projected = factor.apply(sys, x, dw, &mut s.corr)?;
    for i in 0..x.len() {
        s.drift[i] = sys.mu(i, x);
        s.diff[i] = sys.sigma(i, x);
    }
    for i in 0..x.len() {
        x[i] += s.drift[i] * dt + s.diff[i] * s.corr[i];
    }
    Ok(projected)
}

fn existence_gate(sys: &SdeSystem, opts: &SimOptions) -> Result<()> {
    if opts.skip_existence_check {
        return Ok(());
    }
    let rep = check_existence_conditions(sys, &sys.probe_domain(), 512);
    if !rep.violations.is_empty() {
        return Err(Error::Precondition(format!(
            "existence conditions not met ({}); set skip_existence_check to simulate anyway",
            rep.violations.join("; ")
        )));
    }
    Ok(())
}

fn surface(failures: Vec<(usize, Failure)>) -> Result<()> {
    if let Some((path, f)) = failures.into_iter().min_by_key(|(p, _)| *p) {
        return Err(match f {
            Failure::BlowUp(k) => Error::BlowUp { path, time_index: k },
            Failure::Model(m) => Error::Model(m),
        });
    }
    Ok(())
}

/// Euler–Maruyama simulation of `n_paths` independent paths recorded on `t_grid`.
pub fn simulate_paths(
    sys: &SdeSystem,
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    check_time_grid(t_grid)?;
    if opts.substeps == 0 {
        return Err(Error::Parameter("substeps must be >= 1".into()));
    }
    existence_gate(sys, opts)?;
    let n = sys.dim();
    let nt = t_grid.len();
    let factor = Factor::new(sys)?;
    let mut states = vec![0.0; n_paths * nt * n];
    let outcome: Vec<(u64, Option<Failure>)> = states
        .par_chunks_mut(nt * n)
        .enumerate()
        .map(|(p, out)| {
            let mut rng = path_rng(seed, p);
            let mut x = sys.x0().to_vec();
            let mut z = vec![0.0; n];
            let mut scratch = Scratch::new(n);
            let mut projected = 0u64;
            out[..n].copy_from_slice(&x);
            for k in 1..nt {
                let dt = (t_grid[k] - t_grid[k - 1]) / opts.substeps as f64;
                let sdt = dt.sqrt();
                for _ in 0..opts.substeps {
                    for zi in z.iter_mut() {
                        let g: f64 = rng.sample(StandardNormal);
                        *zi = g * sdt;
                    }
                    match em_step(sys, &factor, &mut x, dt, &z, &mut scratch) {
                        Ok(pr) => projected += pr as u64,
                        Err(f) => return (projected, Some(f)),
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return (projected, Some(Failure::BlowUp(k)));
                }
                out[k * n..(k + 1) * n].copy_from_slice(&x);
            }
            (projected, None)
        })
        .collect();
    let projected_steps = outcome.iter().map(|o| o.0).sum();
    surface(
        outcome
            .into_iter()
            .enumerate()
            .filter_map(|(p, o)| o.1.map(|f| (p, f)))
            .collect(),
    )?;
    let mut e = PathEnsemble::new(n_paths, n, t_grid.to_vec(), states, seed)?;
    e.projected_steps = projected_steps;
    Ok(e)
}

/// Terminal states at T for a ladder of step sizes driven by the same Brownian
/// path: level l uses `fine_steps / 2^l` steps. Returns one [path][component]
/// array per level.
pub fn simulate_coupled_levels(
    sys: &SdeSystem,
    t_end: f64,
    fine_steps: usize,
    levels: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if levels == 0 || !fine_steps.is_multiple_of(1 << (levels - 1)) || !(t_end > 0.0) {
        return Err(Error::Parameter(format!(
            "fine_steps {fine_steps} must be divisible by 2^(levels-1) with levels >= 1 and t_end > 0"
        )));
    }
    let n = sys.dim();
    let factor = Factor::new(sys)?;
    let h = t_end / fine_steps as f64;
    let per_path: Vec<std::result::Result<Vec<Vec<f64>>, Failure>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let noise: Vec<f64> = (0..fine_steps * n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * h.sqrt())
                .collect();
            let mut out = Vec::with_capacity(levels);
            let mut dw = vec![0.0; n];
            let mut scratch = Scratch::new(n);
            for l in 0..levels {
                let block = 1 << l;
                let dt = h * block as f64;
                let mut x = sys.x0().to_vec();
                for m in 0..fine_steps / block {
                    dw.iter_mut().for_each(|v| *v = 0.0);
                    for k in m * block..(m + 1) * block {
                        for i in 0..n {
                            dw[i] += noise[k * n + i];
                        }
                    }
                    em_step(sys, &factor, &mut x, dt, &dw, &mut scratch)?;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Failure::BlowUp(fine_steps / block));
                }
                out.push(x);
            }
            Ok(out)
        })
        .collect();
    let mut levels_out = vec![Vec::with_capacity(n_paths * n); levels];
    let mut failures = Vec::new();
    for (p, r) in per_path.into_iter().enumerate() {
        match r {
            Ok(xs) => {
                for (l, x) in xs.into_iter().enumerate() {
                    levels_out[l].extend(x);
                }
            }
            Err(f) => failures.push((p, f)),
        }
    }
    surface(failures)?;
    Ok(levels_out)
}
