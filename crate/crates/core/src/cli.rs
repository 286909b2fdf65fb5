//! Config-driven runners behind the `dyncopula` binary. Each writes its outputs
//! under the configured output directory and returns the path of its JSON
//! summary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{ExperimentConfig, PathFormat};
use crate::copula_core::{sample_grid, CopulaGrid};
use crate::copula_pde::{evolve, PdeOptions, PdeWorkspace};
use crate::empirical_validate::{empirical_copula, ValidationReport};
use crate::error::{Error, Result};
use crate::marginal_solver::{solve_marginal_kfe, MarginalModel, DEFAULT_T0};
use crate::markov_product::chapman_kolmogorov_residual_with;
use crate::numerics::linspace;
use crate::sde_engine::{check_existence_conditions, simulate_paths, PathEnsemble, SdeSystem, SimOptions};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.run.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(r) = self.resolution {
            cfg.grid.resolution = r;
        }
        cfg.check()
    }
}

/// 2 for bad input or a failed check, 3 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

/// A run that completed but whose check did not pass; the summary is written.
#[derive(Debug)]
pub struct CheckFailed {
    pub summary: PathBuf,
    pub detail: String,
}

pub enum Outcome {
    Done(PathBuf),
    Failed(CheckFailed),
}

impl Outcome {
    pub fn summary(&self) -> &Path {
        match self {
            Outcome::Done(p) => p,
            Outcome::Failed(f) => &f.summary,
        }
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run.output_dir.clone();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn write_grid(path: &Path, g: &CopulaGrid) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    g.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

fn record_times(cfg: &ExperimentConfig) -> Vec<f64> {
    vec![0.0, cfg.grid.t0, cfg.grid.t1]
}

/// Simulates the configured system, recording at 0, t0 and t1.
pub fn simulate_from_config(cfg: &ExperimentConfig, sys: &SdeSystem) -> Result<PathEnsemble> {
    let opts = SimOptions { substeps: cfg.grid.substeps, ..Default::default() };
    simulate_paths(sys, &record_times(cfg), cfg.run.n_paths, cfg.run.seed, &opts)
}

fn moments(ens: &PathEnsemble, k: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let n = ens.dim();
    let cols: Vec<Vec<f64>> = (0..n).map(|i| ens.cross_section(k, i)).collect();
    let len = ens.n_paths() as f64;
    let mean: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / len).collect();
    let cov = |a: usize, b: usize| {
        cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - mean[a]) * (y - mean[b])).sum::<f64>() / (len - 1.0)
    };
    let var: Vec<f64> = (0..n).map(|i| cov(i, i)).collect();
    let corr = (0..n)
        .map(|a| (0..n).map(|b| cov(a, b) / (var[a] * var[b]).sqrt()).collect())
        .collect();
    (mean, var, corr)
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.build_system()?;
    let dir = out_dir(cfg)?;
    let existence = check_existence_conditions(&sys, &sys.probe_domain(), 512);
    let ens = simulate_from_config(cfg, &sys)?;
    let paths = match cfg.run.path_format {
        PathFormat::Binary => {
            let p = dir.join("paths.bin");
            ens.write_binary(BufWriter::new(File::create(&p)?))?;
            p
        }
        PathFormat::Csv => {
            let p = dir.join("paths.csv");
            ens.write_csv(BufWriter::new(File::create(&p)?))?;
            p
        }
    };
    let (mean, var, corr) = moments(&ens, ens.n_times() - 1);
    let summary = dir.join("simulate.json");
    write_json(
        &summary,
        &json!({
            "paths_file": paths.file_name().and_then(|s| s.to_str()),
            "n_paths": ens.n_paths(),
            "dim": ens.dim(),
            "seed": ens.seed(),
            "t_grid": ens.t_grid(),
            "substeps": cfg.grid.substeps,
            "terminal_mean": mean,
            "terminal_variance": var,
            "terminal_correlation": corr,
            "projected_steps": ens.projected_steps,
            "existence": existence,
        }),
    )?;
    Ok(Outcome::Done(summary))
}

pub fn run_marginal(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.build_system()?;
    let dir = out_dir(cfg)?;
    let t1 = cfg.grid.t1;
    let mut rows = Vec::new();
    for i in 0..sys.dim() {
        let model = MarginalModel::auto(&sys, i)?;
        let x = match cfg.grid.x_span {
            Some([a, b]) => linspace(a, b, cfg.grid.x_points),
            None => model.suggest_x_grid(t1, cfg.grid.x_points),
        };
        let steps = model.required_steps(&x, DEFAULT_T0, t1);
        let state = solve_marginal_kfe(&model, DEFAULT_T0, t1, &x, steps)?;
        let file = format!("marginal_{}.csv", i + 1);
        state.write_csv(BufWriter::new(File::create(dir.join(&file))?))?;
        rows.push(json!({
            "component": i + 1,
            "file": file,
            "analytic": model.analytic_tag(),
            "freeze_approximation": model.uses_freeze_approximation(),
            "steps": if model.analytic_law().is_some() { 0 } else { steps },
            "mass": state.mass(),
            "median": state.pseudo_inverse(0.5).ok(),
        }));
    }
    let summary = dir.join("marginal.json");
    write_json(&summary, &json!({ "time": t1, "components": rows }))?;
    Ok(Outcome::Done(summary))
}

/// Samples the initial copula at t0 and evolves it to t1; returns both.
pub fn evolve_from_config(cfg: &ExperimentConfig, sys: SdeSystem) -> Result<(CopulaGrid, crate::copula_pde::EvolveOutcome)> {
    let start = sample_grid(&cfg.initial_copula()?, cfg.grid.resolution, cfg.grid.t0)?;
    let options = PdeOptions { x_points: cfg.grid.x_points, ..Default::default() };
    let mut w = PdeWorkspace::new(sys, start.clone(), options)?;
    let steps = cfg.grid.steps.unwrap_or_else(|| w.required_steps(cfg.grid.t1));
    let out = evolve(&mut w, cfg.grid.t1, steps, cfg.run.form)?;
    Ok((start, out))
}

pub fn run_evolve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.build_system()?;
    let dir = out_dir(cfg)?;
    let (start, out) = match evolve_from_config(cfg, sys) {
        Ok(v) => v,
        Err(e) => {
            let mut payload = json!({ "error": e.to_string(), "exit_code": exit_code(&e) });
            if let Error::Stability { required_steps, .. } = &e {
                payload["required_steps"] = json!(required_steps);
            }
            if let Error::Divergence { step, .. } = &e {
                payload["step"] = json!(step);
            }
            write_json(&dir.join("evolve_error.json"), &payload)?;
            return Err(e);
        }
    };
    write_grid(&dir.join("copula.csv"), &out.grid)?;
    let drift = out.grid.values().iter().zip(start.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut diag = serde_json::to_value(&out).map_err(|e| Error::Parse(e.to_string()))?;
    diag["drift_from_initial"] = json!(drift);
    diag["grid_file"] = json!("copula.csv");
    let summary = dir.join("evolve.json");
    write_json(&summary, &diag)?;
    Ok(Outcome::Done(summary))
}

fn read_ensemble(path: &Path, seed: u64) -> Result<PathEnsemble> {
    let f = BufReader::new(File::open(path).map_err(|e| {
        Error::Configuration(format!("validate.paths: cannot open {}: {e}", path.display()))
    })?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => PathEnsemble::read_csv(f, seed),
        _ => PathEnsemble::read_binary(f),
    }
}

/// Compares `evolved` with the empirical copula of the configured paths at t1,
/// simulating them when `validate.paths` is unset.
pub fn validate_grid(cfg: &ExperimentConfig, sys: &SdeSystem, evolved: &CopulaGrid) -> Result<ValidationReport> {
    let ens = match cfg.validate.as_ref().and_then(|v| v.paths.as_ref()) {
        Some(p) => read_ensemble(p, cfg.run.seed)?,
        None => simulate_from_config(cfg, sys)?,
    };
    let k = ens.time_index(cfg.grid.t1);
    if (ens.t_grid()[k] - cfg.grid.t1).abs() > 1e-9 {
        return Err(Error::Configuration(format!("validate.paths: no recorded time at t1 = {}", cfg.grid.t1)));
    }
    let emp = empirical_copula(&ens, k, evolved.resolution())?;
    ValidationReport::compare(evolved, &emp, cfg.run.metric, Some(ens.n_paths()), cfg.run.tolerance)
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sys = cfg.build_system()?;
    let dir = out_dir(cfg)?;
    let evolved = match cfg.validate.as_ref().and_then(|v| v.evolved.as_ref()) {
        Some(p) => {
            let f = File::open(p).map_err(|e| {
                Error::Configuration(format!("validate.evolved: cannot open {}: {e}", p.display()))
            })?;
            CopulaGrid::read_csv(BufReader::new(f), cfg.grid.t1)?
        }
        None => evolve_from_config(cfg, sys.clone())?.1.grid,
    };
    let report = validate_grid(cfg, &sys, &evolved)?;
    let summary = dir.join("validation.json");
    let mut value = serde_json::to_value(&report).map_err(|e| Error::Parse(e.to_string()))?;
    value["time"] = json!(cfg.grid.t1);
    write_json(&summary, &value)?;
    Ok(if report.pass {
        Outcome::Done(summary)
    } else {
        Outcome::Failed(CheckFailed {
            summary,
            detail: format!("distance {:.4e} exceeds tolerance {:.1e}", report.value, report.tolerance),
        })
    })
}

pub fn run_product_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg
        .product
        .as_ref()
        .ok_or_else(|| Error::Configuration("product: table missing".into()))?;
    let [su, ut, st] = cfg.product_triple()?;
    let dir = out_dir(cfg)?;
    let residual = chapman_kolmogorov_residual_with(&su, &ut, &st, p.quad_points, p.resolution)?;
    let pass = residual <= p.tolerance;
    let summary = dir.join("product.json");
    write_json(
        &summary,
        &json!({
            "times": p.times,
            "copula": p.copula,
            "quad_points": p.quad_points,
            "resolution": p.resolution,
            "residual": residual,
            "tolerance": p.tolerance,
            "pass": pass,
        }),
    )?;
    Ok(if pass {
        Outcome::Done(summary)
    } else {
        Outcome::Failed(CheckFailed {
            summary,
            detail: format!("residual {residual:.4e} exceeds tolerance {:.1e}", p.tolerance),
        })
    })
}
