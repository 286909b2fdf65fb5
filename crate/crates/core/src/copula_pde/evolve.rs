use serde::Serialize;

use super::frame::Frame;
use super::lattice::{LatticeDerivatives, Shape};
use super::rhs::{self, RhsForm};
use super::{stable_dt, PdeWorkspace};
use crate::copula_core::{
    check_copula_axioms, lattice_coord, AxiomReport, AxiomTolerances,
    CopulaGrid,
};
use crate::error::{Error, Result};

/// Clip magnitudes below this are rounding, not active clipping.
const CLIP_NOISE: f64 = 1e-14;
/// Share of lattice points that may be clipped in one step.
const CLIP_LIMIT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub rhs_sup: f64,
    pub max_boundary_correction: f64,
    pub max_clip: f64,
    pub clipped_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolveOutcome {
    pub form: RhsForm,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    pub dt: f64,
    pub max_boundary_correction: f64,
    pub max_clip: f64,
    /// Largest fraction of lattice points clipped in any one step.
    pub max_clipped_fraction: f64,
    pub warnings: Vec<String>,
    /// Axiom report of the final grid.
    pub axioms: AxiomReport,
    pub diagnostics: Vec<StepDiagnostics>,
    #[serde(skip)]
    pub grid: CopulaGrid,
}

impl EvolveOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

fn stage_rhs(w: &PdeWorkspace, form: RhsForm, frame: &Frame, values: &[f64]) -> Result<rhs::RhsField> {
    match form {
        RhsForm::Simplified => rhs::simplified(&w.system, frame, values),
        RhsForm::General => {
            rhs::general(frame, &LatticeDerivatives::compute(values, frame.shape), w.options.first_term)
        }
        RhsForm::Galichon2d => rhs::galichon2d(&w.system, frame, values),
    }
}

fn check_stability(frame: &Frame, dt: f64, span: f64) -> Result<()> {
    let bound = stable_dt(frame);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Stability {
            detail: format!("step {dt:.4e} exceeds the bound {bound:.4e} at t = {:.4}", frame.time),
            required_steps: (span / bound).ceil() as usize,
        });
    }
    Ok(())
}

/// Largest negative C-volume over the lattice cells and the cell's lower corner.
fn worst_negative_volume(values: &[f64], s: Shape) -> (f64, Vec<usize>) {
    let corners: Vec<(usize, f64)> = (0..1usize << s.n)
        .map(|c| {
            let mut off = 0;
            let mut upper = 0;
            for a in 0..s.n {
                if c >> a & 1 == 1 {
                    off += s.stride(a);
                    upper += 1;
                }
            }
            (off, if (s.n - upper).is_multiple_of(2) { 1.0 } else { -1.0 })
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut at = 0;
    if s.n == 2 {
        let r = s.r;
        for i in 0..r - 1 {
            let (lo, hi) = (&values[i * r..(i + 1) * r], &values[(i + 1) * r..(i + 2) * r]);
            for j in 0..r - 1 {
                let vol = hi[j + 1] - hi[j] - lo[j + 1] + lo[j];
                if -vol > worst {
                    worst = -vol;
                    at = i * r + j;
                }
            }
        }
        return (worst, vec![at / r, at % r]);
    }
    let mut multi = [0usize; 3];
    let m = &mut multi[..s.n];
    for f in 0..values.len() {
        if !m.iter().any(|&k| k + 1 == s.r) {
            let vol: f64 = corners.iter().map(|&(o, sg)| sg * values[f + o]).sum();
            if -vol > worst {
                worst = -vol;
                at = f;
            }
        }
        odometer(m, s.r);
    }
    let mut loc = vec![0; s.n];
    s.multi(at, &mut loc);
    (worst, loc)
}

/// Advances a multi-index in row-major order.
#[inline]
fn odometer(m: &mut [usize], r: usize) {
    for a in (0..m.len()).rev() {
        m[a] += 1;
        if m[a] < r {
            return;
        }
        m[a] = 0;
    }
}

#[derive(Default)]
struct Repair {
    max_clip: f64,
    clipped: usize,
    max_pin: f64,
}

/// Clips every value into [W, M], then re-imposes the boundary values implied
/// by the axioms: 0 when some u_k = 0, the free coordinate when all others are 1.
fn clip_and_pin(values: &mut [f64], s: Shape) -> Repair {
    let coords: Vec<f64> = (0..s.r).map(|k| lattice_coord(k, s.r)).collect();
    let n = s.n as f64;
    let mut out = Repair::default();
    let mut multi = [0usize; 3];
    let m = &mut multi[..s.n];
    for v in values.iter_mut() {
        let mut sum = 0.0;
        let mut hi: f64 = 1.0;
        let mut zero = false;
        let mut below_one = 0;
        for &k in m.iter() {
            sum += coords[k];
            hi = hi.min(coords[k]);
            zero |= k == 0;
            below_one += usize::from(k + 1 < s.r);
        }
        let lo = (sum - n + 1.0).max(0.0).min(hi);
        let c = v.clamp(lo, hi);
        let d = (c - *v).abs();
        if d > 0.0 {
            out.max_clip = out.max_clip.max(d);
            if d > CLIP_NOISE {
                out.clipped += 1;
            }
        }
        let target = if zero {
            Some(0.0)
        } else if below_one <= 1 {
            Some(hi)
        } else {
            None
        };
        *v = match target {
            Some(t) => {
                out.max_pin = out.max_pin.max((*v - t).abs());
                t
            }
            None => c,
        };
        odometer(m, s.r);
    }
    out
}

/// Advances the workspace to `t1` in `steps` RK4 steps of the chosen
/// right-hand side. Margins move with the copula; boundary values are re-pinned
/// and the grid clipped into the Fréchet bounds after each step. The workspace
/// is only updated when the whole run succeeds.
pub fn evolve(w: &mut PdeWorkspace, t1: f64, steps: usize, form: RhsForm) -> Result<EvolveOutcome> {
    let t0 = w.time();
    if !(t1 > t0) || steps == 0 {
        return Err(Error::Parameter(format!("need t1 > {t0} and steps >= 1 (got {t1}, {steps})")));
    }
    w.check_sync()?;
    let s = w.shape();
    match form {
        RhsForm::Simplified if !w.system.is_individually_markov() => {
            return Err(Error::WrongForm(
                "coefficients are not individually Markov; evolve with the general form".into(),
            ));
        }
        RhsForm::Galichon2d if s.n != 2 => return Err(Error::UnsupportedDimension(s.n)),
        _ => {}
    }
    let span = t1 - t0;
    let dt = span / steps as f64;
    check_stability(&w.frame, dt, span)?;

    let with_b = form != RhsForm::Simplified;
    let tol = AxiomTolerances::evolution();
    let mut values = w.copula.values().to_vec();
    let mut margins = w.margins.clone();
    let mut frame = w.frame.clone();
    let mut diagnostics = Vec::with_capacity(steps);
    let mut warnings = Vec::new();
    let mut stage = vec![0.0; values.len()];
    let mut acc = vec![0.0; values.len()];
    let (mut max_corr, mut max_clip, mut max_frac): (f64, f64, f64) = (0.0, 0.0, 0.0);

    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let t_end = if step + 1 == steps { t1 } else { t0 + (step + 1) as f64 * dt };
        let h = t_end - t;
        let m_half = w.margins_at(&margins, t + 0.5 * h)?;
        let m_end = w.margins_at(&m_half, t_end)?;
        let f_half = w.frame_for(&m_half, t + 0.5 * h, with_b);
        let f_end = w.frame_for(&m_end, t_end, with_b);
        check_stability(&f_half, h, span)?;
        check_stability(&f_end, h, span)?;

        let k1 = stage_rhs(w, form, &frame, &values)?;
        let mut any_change = false;
        for ((st, acc), (v, k)) in stage.iter_mut().zip(acc.iter_mut()).zip(values.iter().zip(&k1.values)) {
            *st = v + 0.5 * h * k;
            *acc = *k;
            any_change |= *k != 0.0;
        }
        let k2 = stage_rhs(w, form, &f_half, &stage)?;
        for ((st, acc), (v, k)) in stage.iter_mut().zip(acc.iter_mut()).zip(values.iter().zip(&k2.values)) {
            *st = v + 0.5 * h * k;
            *acc += 2.0 * k;
            any_change |= *k != 0.0;
        }
        let k3 = stage_rhs(w, form, &f_half, &stage)?;
        for ((st, acc), (v, k)) in stage.iter_mut().zip(acc.iter_mut()).zip(values.iter().zip(&k3.values)) {
            *st = v + h * k;
            *acc += 2.0 * k;
            any_change |= *k != 0.0;
        }
        let k4 = stage_rhs(w, form, &f_end, &stage)?;
        for wmsg in k1.warnings.iter().chain(&k4.warnings) {
            if !warnings.contains(wmsg) {
                warnings.push(wmsg.clone());
            }
        }

        let mut diag = StepDiagnostics {
            step,
            time: t_end,
            dt: h,
            rhs_sup: k1.sup(),
            max_boundary_correction: 0.0,
            max_clip: 0.0,
            clipped_points: 0,
        };
        any_change |= k4.values.iter().any(|&v| v != 0.0);
        if any_change {
            for ((v, a), k) in values.iter_mut().zip(&acc).zip(&k4.values) {
                *v += h / 6.0 * (a + k);
            }
            let fix = clip_and_pin(&mut values, s);
            let (clip, count) = (fix.max_clip, fix.clipped);
            diag.max_boundary_correction = fix.max_pin;
            diag.max_clip = clip;
            diag.clipped_points = count;
            let frac = count as f64 / values.len() as f64;
            max_frac = max_frac.max(frac);
            if frac > CLIP_LIMIT {
                return Err(Error::Divergence {
                    step,
                    detail: format!(
                        "Fréchet clipping active on {:.2}% of the lattice (largest {clip:.3e})",
                        100.0 * frac
                    ),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step, detail: "non-finite copula value".into() });
            }
            // pinning and clipping enforce groundedness, margins and the
            // Fréchet bounds exactly; only the cell volumes can still fail
            let (neg, at) = worst_negative_volume(&values, s);
            if neg > tol.volume {
                return Err(Error::Divergence {
                    step,
                    detail: format!("cell volume {:.3e} below zero at lattice cell {at:?}", -neg),
                });
            }
        }
        max_corr = max_corr.max(diag.max_boundary_correction);
        max_clip = max_clip.max(diag.max_clip);
        diagnostics.push(diag);
        margins = m_end;
        frame = f_end;
    }

    let grid = CopulaGrid::new(s.n, s.r, values, t1)?;
    let axioms = check_copula_axioms(&grid, &tol);
    w.margins = w.settle_margins(margins, t1)?;
    w.copula = grid.clone();
    drop(frame);
    w.refresh();
    Ok(EvolveOutcome {
        form,
        t0,
        t1,
        steps,
        dt,
        max_boundary_correction: max_corr,
        max_clip,
        max_clipped_fraction: max_frac,
        warnings,
        axioms,
        diagnostics,
        grid,
    })
}
