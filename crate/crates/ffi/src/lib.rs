//! C ABI over `dyncopula`. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `*_free` function. Every fallible
//! call returns a `DcStatus`; on failure the message is kept per thread and
//! read back with `dc_last_error_message`.

use std::cell::{Cell, RefCell};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dyncopula::cli::{evolve_from_config, validate_grid};
use dyncopula::config::ExperimentConfig;
use dyncopula::copula_core::{sample_grid, CopulaGrid, ParametricCopula};
use dyncopula::empirical_validate::{copula_distance, Metric};
use dyncopula::markov_product::chapman_kolmogorov_residual_with;
use dyncopula::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed or inconsistent configuration.
    Config = 3,
    /// Any other bad input: parameters, shapes, domains.
    InvalidInput = 4,
    /// The numerics failed: stability bound, divergence, blow-up.
    Numerical = 5,
    Io = 6,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 7,
    /// An internal panic was caught at the boundary.
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcMetric {
    Sup = 0,
    L2 = 1,
}

/// Scalar summary of an evolution run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DcEvolveSummary {
    pub steps: usize,
    pub dt: f64,
    pub max_boundary_correction: f64,
    pub max_clip: f64,
    pub axioms_passed: bool,
}

/// Parsed and checked experiment configuration.
pub struct DcConfig(ExperimentConfig);

/// Copula values on a uniform lattice of [0,1]^n.
pub struct DcGrid(CopulaGrid);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
    static LAST_REQUIRED_STEPS: Cell<usize> = const { Cell::new(0) };
}

fn set_error(msg: &str, required_steps: usize) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
    LAST_REQUIRED_STEPS.with(|c| c.set(required_steps));
}

fn clear_error() {
    set_error("", 0);
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::Io(_) => DcStatus::Io,
        Error::Configuration(_) | Error::Parse(_) => DcStatus::Config,
        e if e.is_numerical() => DcStatus::Numerical,
        _ => DcStatus::InvalidInput,
    }
}

struct Fail(DcStatus, String, usize);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let steps = match &e {
            Error::Stability { required_steps, .. } => *required_steps,
            _ => 0,
        };
        Fail(status_of(&e), e.to_string(), steps)
    }
}

fn fail(status: DcStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into(), 0)
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> DcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err(Fail(status, msg, steps))) => {
            set_error(&msg, steps);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"), 0);
            DcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(DcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(DcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(DcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(DcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DcStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed_grid(g: CopulaGrid) -> *mut DcGrid {
    Box::into_raw(Box::new(DcGrid(g)))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Steps the stability bound asks for when the last call failed with
/// `DC_STATUS_NUMERICAL` for that reason; 0 otherwise.
#[no_mangle]
pub extern "C" fn dc_last_error_required_steps() -> usize {
    LAST_REQUIRED_STEPS.with(|c| c.get())
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_config_from_toml(toml: *const c_char, out: *mut *mut DcConfig) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_toml(str_arg(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(DcConfig(cfg)));
        Ok(())
    })
}

/// Reads and parses a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_config_load(path: *const c_char, out: *mut *mut DcConfig) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(DcConfig(cfg)));
        Ok(())
    })
}

/// Replaces the root seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_config_set_seed(cfg: *mut DcConfig, seed: u64) -> DcStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.0.run.seed = seed;
        Ok(())
    })
}

/// Replaces the lattice resolution; the configuration is left unchanged when
/// the new value is rejected.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_config_set_resolution(cfg: *mut DcConfig, resolution: usize) -> DcStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.grid.resolution = resolution;
        next.check()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_config_free(cfg: *mut DcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// The configured initial copula sampled on the lattice at t0.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_initial_grid(cfg: *const DcConfig, out: *mut *mut DcGrid) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let g = sample_grid(&cfg.initial_copula()?, cfg.grid.resolution, cfg.grid.t0)?;
        *out = boxed_grid(g);
        Ok(())
    })
}

/// Evolves the configured initial copula from t0 to t1. `summary` and
/// `diagnostics_json` may be null; a returned JSON string is released with
/// `dc_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_evolve(
    cfg: *const DcConfig,
    out: *mut *mut DcGrid,
    summary: *mut DcEvolveSummary,
    diagnostics_json: *mut *mut c_char,
) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if let Some(j) = diagnostics_json.as_mut() {
            *j = ptr::null_mut();
        }
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let (_, outcome) = evolve_from_config(cfg, cfg.build_system()?)?;
        if let Some(s) = summary.as_mut() {
            *s = DcEvolveSummary {
                steps: outcome.steps,
                dt: outcome.dt,
                max_boundary_correction: outcome.max_boundary_correction,
                max_clip: outcome.max_clip,
                axioms_passed: outcome.axioms.all_passed(),
            };
        }
        if let Some(j) = diagnostics_json.as_mut() {
            *j = CString::new(outcome.to_json()).map_err(|e| fail(DcStatus::Panic, e.to_string()))?.into_raw();
        }
        *out = boxed_grid(outcome.grid);
        Ok(())
    })
}

/// Distance between `grid` and the empirical copula of paths simulated (or
/// read) as configured. `pass` may be null.
///
/// # Safety
/// `cfg` and `grid` must be live handles; `distance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_validate(
    cfg: *const DcConfig,
    grid: *const DcGrid,
    distance: *mut f64,
    pass: *mut bool,
) -> DcStatus {
    guard(|| {
        let distance = out_arg(distance, "distance")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let grid = &ref_arg(grid, "grid")?.0;
        let report = validate_grid(cfg, &cfg.build_system()?, grid)?;
        *distance = report.value;
        if let Some(p) = pass.as_mut() {
            *p = report.pass;
        }
        Ok(())
    })
}

/// Chapman–Kolmogorov residual of the configured copula triple.
///
/// # Safety
/// `cfg` must be a live handle; `residual` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_product_residual(cfg: *const DcConfig, residual: *mut f64) -> DcStatus {
    guard(|| {
        let residual = out_arg(residual, "residual")?;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let p = cfg.product.as_ref().ok_or_else(|| fail(DcStatus::Config, "product: table missing"))?;
        let [su, ut, st] = cfg.product_triple()?;
        *residual = chapman_kolmogorov_residual_with(&su, &ut, &st, p.quad_points, p.resolution)?;
        Ok(())
    })
}

/// Bivariate Gaussian copula with correlation `rho` on the lattice.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_gaussian(rho: f64, resolution: usize, time: f64, out: *mut *mut DcGrid) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = boxed_grid(sample_grid(&ParametricCopula::gaussian2(rho)?, resolution, time)?);
        Ok(())
    })
}

/// Independence copula of dimension `dim` on the lattice.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_product(dim: usize, resolution: usize, time: f64, out: *mut *mut DcGrid) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = boxed_grid(sample_grid(&ParametricCopula::product(dim)?, resolution, time)?);
        Ok(())
    })
}

/// Grid from `len = resolution^dim` values in row-major order, last axis fastest.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_from_values(
    dim: usize,
    resolution: usize,
    values: *const f64,
    len: usize,
    time: f64,
    out: *mut *mut DcGrid,
) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = slice_arg(values, len, "values")?.to_vec();
        *out = boxed_grid(CopulaGrid::new(dim, resolution, v, time)?);
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_dim(grid: *const DcGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.dim())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_resolution(grid: *const DcGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.resolution())
}

/// Number of lattice values.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_len(grid: *const DcGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_time(grid: *const DcGrid) -> f64 {
    grid.as_ref().map_or(f64::NAN, |g| g.0.time())
}

/// Borrowed view of the values, valid while the handle lives.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_values(grid: *const DcGrid) -> *const f64 {
    grid.as_ref().map_or(ptr::null(), |g| g.0.values().as_ptr())
}

/// Copies the values into `buf`, which must hold `dc_grid_len` doubles.
///
/// # Safety
/// `grid` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_copy_values(grid: *const DcGrid, buf: *mut f64, len: usize) -> DcStatus {
    guard(|| {
        let g = &ref_arg(grid, "grid")?.0;
        if len < g.len() {
            return Err(fail(DcStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", g.len())));
        }
        if buf.is_null() {
            return Err(fail(DcStatus::NullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, g.len()).copy_from_slice(g.values());
        Ok(())
    })
}

/// Multilinear interpolation at `u` (length `dim`).
///
/// # Safety
/// `grid` must be a live handle; `u` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_interpolate(grid: *const DcGrid, u: *const f64, n: usize, out: *mut f64) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let g = &ref_arg(grid, "grid")?.0;
        *out = g.interpolate(slice_arg(u, n, "u")?)?;
        Ok(())
    })
}

/// Distance between two grids of equal shape.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_distance(a: *const DcGrid, b: *const DcGrid, metric: DcMetric, out: *mut f64) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = match metric {
            DcMetric::Sup => Metric::Sup,
            DcMetric::L2 => Metric::L2,
        };
        *out = copula_distance(&ref_arg(a, "a")?.0, &ref_arg(b, "b")?.0, m)?;
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_grid_free(grid: *mut DcGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
