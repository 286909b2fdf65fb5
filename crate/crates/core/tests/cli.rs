use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dyncopula::copula_core::{sample_grid, CopulaGrid, ParametricCopula};
use dyncopula::empirical_validate::{Metric, ValidationReport};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyncopula")).args(args).output().expect("binary runs")
}

fn run_cfg(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_path(o: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(o.stdout.clone()).unwrap().trim())
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_reports_the_configured_correlation_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = example("brownian2d.cfg");
    let a = run_cfg("simulate", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let summary = json(&stdout_path(&a));
    let rho = summary["terminal_correlation"][0][1].as_f64().unwrap();
    // standard error of the sample correlation is (1 − ρ²)/√n
    let se = (1.0 - 0.36) / (1e5f64).sqrt();
    assert!((rho - 0.6).abs() <= 3.0 * se, "ρ̂ = {rho}");
    assert!(summary["existence"]["violations"].as_array().unwrap().is_empty());

    let b = run_cfg("simulate", &cfg, &tmp.path().join("b"), &["--threads", "1"]);
    assert_eq!(b.status.code(), Some(0));
    let pa = fs::read(tmp.path().join("a/paths.bin")).unwrap();
    let pb = fs::read(tmp.path().join("b/paths.bin")).unwrap();
    assert!(pa == pb, "path files differ");
    assert_eq!(&pa[..8], b"CPDPATH1");
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example("brownian2d.cfg")).unwrap().replace("n_paths = 100000", "n_paths = 500");
    let cfg = write_cfg(tmp.path(), "small.cfg", &text);
    for (dir, seed) in [("x", "1"), ("y", "1"), ("z", "2")] {
        assert_eq!(run_cfg("simulate", &cfg, &tmp.path().join(dir), &["--seed", seed]).status.code(), Some(0));
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("paths.bin")).unwrap();
    assert!(read("x") == read("y"));
    assert!(read("x") != read("z"));
}

#[test]
fn dimension_mismatch_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example("brownian2d.cfg")).unwrap().replace("x0 = [0.0, 0.0]", "x0 = [0.0]");
    let cfg = write_cfg(tmp.path(), "bad.cfg", &text);
    let o = run_cfg("simulate", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.x0"));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("evolve", &tmp.path().join("nope.cfg"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn independence_example_keeps_the_product_copula() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("evolve", &example("independence.cfg"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let g = CopulaGrid::read_csv(std::io::BufReader::new(fs::File::open(tmp.path().join("copula.csv")).unwrap()), 1.0)
        .unwrap();
    assert_eq!(g.resolution(), 101);
    let pi = sample_grid(&ParametricCopula::product(2).unwrap(), 101, 1.0).unwrap();
    let d = g.values().iter().zip(pi.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn gaussian_stationary_example_reports_small_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("evolve", &example("gaussian_stationary.cfg"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let diag = json(&stdout_path(&o));
    assert!(diag["drift_from_initial"].as_f64().unwrap() <= 5e-3);
    assert!(diag["axioms"]["n_increasing"]["passed"].as_bool().unwrap());
    assert_eq!(diag["diagnostics"].as_array().unwrap().len(), diag["steps"].as_u64().unwrap() as usize);
}

#[test]
fn too_few_steps_exit_3_with_required_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example("gaussian_stationary.cfg")).unwrap().replace("t1 = 1.0", "t1 = 1.0\nsteps = 10");
    let cfg = write_cfg(tmp.path(), "coarse.cfg", &text);
    let o = run_cfg("evolve", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("steps required"), "{err}");
    let payload = json(&tmp.path().join("o/evolve_error.json"));
    assert!(payload["required_steps"].as_u64().unwrap() > 10);
}

#[test]
fn product_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("product", &example("brownian_triple.cfg"), &tmp.path().join("bm"), &[]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&stdout_path(&o));
    assert!(r["residual"].as_f64().unwrap() <= 1e-3 && r["pass"].as_bool().unwrap());

    let base = fs::read_to_string(example("brownian_triple.cfg")).unwrap();
    let pi = write_cfg(tmp.path(), "pi.cfg", &base.replace("family = \"brownian\"", "family = \"product\""));
    let o = run_cfg("product", &pi, &tmp.path().join("pi"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(json(&stdout_path(&o))["residual"].as_f64().unwrap() <= 1e-9);

    let degenerate = write_cfg(tmp.path(), "su.cfg", &base.replace("[0.25, 0.5, 1.0]", "[0.5, 0.5, 1.0]"));
    let o = run_cfg("product", &degenerate, &tmp.path().join("su"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("product.times"));
}

#[test]
fn statedep_example_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("validate", &example("statedep_rho.cfg"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&stdout_path(&o));
    assert!(r["value"].as_f64().unwrap() <= 2e-2 && r["pass"].as_bool().unwrap());
}

#[test]
fn grid_compared_with_itself_is_at_distance_zero() {
    let g = sample_grid(&ParametricCopula::gaussian2(0.4).unwrap(), 31, 1.0).unwrap();
    let r = ValidationReport::compare(&g, &g, Metric::Sup, None, 1e-12).unwrap();
    assert_eq!(r.value, 0.0);
    assert!(r.pass);
}

#[test]
fn mismatched_correlation_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    // PDE with ρ = 0.5·tanh(x1x2), paths with constant ρ = 0.6
    let e = run_cfg("evolve", &example("statedep_rho.cfg"), &tmp.path().join("pde"), &[]);
    assert_eq!(e.status.code(), Some(0));
    let text = fs::read_to_string(example("brownian2d.cfg")).unwrap().replace("n_paths = 100000", "n_paths = 20000");
    let sim_cfg = write_cfg(tmp.path(), "sim.cfg", &text);
    let s = run_cfg("simulate", &sim_cfg, &tmp.path().join("mc"), &[]);
    assert_eq!(s.status.code(), Some(0));

    let validate = format!(
        "{text}\n[validate]\nevolved = {:?}\npaths = {:?}\n",
        tmp.path().join("pde/copula.csv"),
        tmp.path().join("mc/paths.bin")
    )
    .replace("[run]", "[run]\ntolerance = 2e-2");
    let cfg = write_cfg(tmp.path(), "validate.cfg", &validate);
    let o = run_cfg("validate", &cfg, &tmp.path().join("v"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&stdout_path(&o));
    assert!(!r["pass"].as_bool().unwrap());
    assert!(r["value"].as_f64().unwrap() > 5.0 * 2e-2, "{}", r["value"]);

    let missing = write_cfg(tmp.path(), "missing.cfg", &validate.replace("paths.bin", "absent.bin"));
    let o = run_cfg("validate", &missing, &tmp.path().join("w"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("validate.paths"));
}

#[test]
fn marginal_writes_one_csv_per_component() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cfg("marginal", &example("gaussian_stationary.cfg"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    for i in 1..=2 {
        let text = fs::read_to_string(tmp.path().join(format!("marginal_{i}.csv"))).unwrap();
        assert!(text.starts_with("x,F,f\n"));
    }
}
