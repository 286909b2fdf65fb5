use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::{Field, Frame};
use super::lattice::{stieltjes, LatticeDerivatives, Shape};
use crate::error::{Error, Result};
use crate::sde_engine::SdeSystem;

/// Right-hand side selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhsForm {
    #[default]
    Simplified,
    General,
    Galichon2d,
}

/// Where f_i² sits in the first term of the general form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirstTermVariant {
    /// f_i²(x_i) outside the integral.
    #[default]
    Outside,
    /// f_i²(z_i) inside the integral.
    Inside,
}

/// ∂_tC on the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct RhsField {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RhsField {
    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Points where the copula value is fixed by the axioms: some u_k = 0, or at
/// most one coordinate below 1.
pub(crate) fn is_pinned(multi: &[usize], r: usize) -> bool {
    multi.contains(&0) || multi.iter().filter(|&&k| k + 1 < r).count() <= 1
}

/// Evaluates `f(flat, multi)` at every unpinned point, 0 elsewhere. Slabs of the
/// first axis run in parallel; inside a slab the multi-index advances as an
/// odometer.
fn pointwise(s: Shape, f: impl Fn(usize, &[usize]) -> f64 + Sync) -> Vec<f64> {
    let slab = s.stride(0);
    let mut out = vec![0.0; s.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(k0, chunk)| {
        if k0 == 0 || k0 == s.r - 1 && s.n == 2 {
            return;
        }
        let mut multi = [0usize; 3];
        multi[0] = k0;
        let multi = &mut multi[..s.n];
        for (off, o) in chunk.iter_mut().enumerate() {
            if !is_pinned(multi, s.r) {
                *o = f(k0 * slab + off, multi);
            }
            for a in (1..s.n).rev() {
                multi[a] += 1;
                if multi[a] < s.r {
                    break;
                }
                multi[a] = 0;
            }
        }
    });
    out
}

/// ½Σσ̃_i²f_i²∇²_{u_i}C + ½Tr{[H − diag(∇²C)]·DÃρÃᵀDᵀ}, with the stencils
/// evaluated in place from the copula values.
pub(crate) fn simplified(sys: &SdeSystem, frame: &Frame, c: &[f64]) -> Result<RhsField> {
    if !sys.is_individually_markov() {
        return Err(Error::WrongForm(
            "coefficients are not individually Markov; use the general form".into(),
        ));
    }
    let s = frame.shape;
    let n = s.n;
    if n == 2 {
        return Ok(RhsField { values: simplified_2d(frame, c), warnings: Vec::new() });
    }
    let h = s.h;
    let last = s.r - 1;
    // first difference along an axis at flat index f with axis coordinate k
    let d1 = |f: usize, k: usize, st: usize| -> f64 {
        if k == 0 {
            (-3.0 * c[f] + 4.0 * c[f + st] - c[f + 2 * st]) / (2.0 * h)
        } else if k == last {
            (3.0 * c[f] - 4.0 * c[f - st] + c[f - 2 * st]) / (2.0 * h)
        } else {
            (c[f + st] - c[f - st]) / (2.0 * h)
        }
    };
    let values = pointwise(s, |flat, multi| {
        // a_i = f_i σ̃_i, M = DÃρÃᵀDᵀ with M_ij = a_i ρ_ij a_j
        let mut a = [0.0; 3];
        for i in 0..n {
            a[i] = frame.amp[i][flat];
        }
        let mut v = 0.0;
        for i in 0..n {
            let st = s.stride(i);
            let k = multi[i];
            let d2 = if k == last {
                2.0 * c[flat] - 5.0 * c[flat - st] + 4.0 * c[flat - 2 * st] - c[flat - 3 * st]
            } else {
                c[flat + st] - 2.0 * c[flat] + c[flat - st]
            } / (h * h);
            v += 0.5 * a[i] * a[i] * d2;
        }
        // H_ij M_ji summed over i ≠ j: twice the sum over i < j
        let mut tr = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let (si, sj) = (s.stride(i), s.stride(j));
                let (ki, kj) = (multi[i], multi[j]);
                let mixed = if ki == last {
                    (3.0 * d1(flat, kj, sj) - 4.0 * d1(flat - si, kj, sj) + d1(flat - 2 * si, kj, sj))
                        / (2.0 * h)
                } else {
                    (d1(flat + si, kj, sj) - d1(flat - si, kj, sj)) / (2.0 * h)
                };
                tr += 2.0 * mixed * a[j] * frame.rho(i, j).at(flat, multi) * a[i];
            }
        }
        v + 0.5 * tr
    });
    Ok(RhsField { values, warnings: Vec::new() })
}

/// The n = 2 case row by row: every unpinned point is interior, so only
/// central stencils occur.
fn simplified_2d(frame: &Frame, c: &[f64]) -> Vec<f64> {
    let r = frame.shape.r;
    let h = frame.shape.h;
    let (half_h2, inv_4h2) = (0.5 / (h * h), 1.0 / (4.0 * h * h));
    let (a1, a2) = (&frame.amp[0], &frame.amp[1]);
    let rho = frame.rho(0, 1);
    let mut out = vec![0.0; r * r];
    // rows are cheap; hand rayon blocks of a few thousand points
    let rows_per_task = (4096 / r).max(1);
    out.par_chunks_mut(r).enumerate().with_min_len(rows_per_task).for_each(|(i, row)| {
        if i == 0 || i == r - 1 {
            return;
        }
        let base = i * r;
        let up = &c[base - r..base];
        let mid = &c[base..base + r];
        let down = &c[base + r..base + 2 * r];
        let x1 = &a1[base..base + r];
        let x2 = &a2[base..base + r];
        let line = |rho_at: &dyn Fn(usize) -> f64, row: &mut [f64]| {
            for j in 1..r - 1 {
                let c11 = down[j] - 2.0 * mid[j] + up[j];
                let c22 = mid[j + 1] - 2.0 * mid[j] + mid[j - 1];
                let c12 = (down[j + 1] - down[j - 1]) - (up[j + 1] - up[j - 1]);
                let (x, y) = (x1[j], x2[j]);
                row[j] = half_h2 * (x * x * c11 + y * y * c22) + rho_at(j) * x * y * c12 * inv_4h2;
            }
        };
        match rho {
            Field::Const(v) if *v == 0.0 => {
                for j in 1..r - 1 {
                    let c11 = down[j] - 2.0 * mid[j] + up[j];
                    let c22 = mid[j + 1] - 2.0 * mid[j] + mid[j - 1];
                    let (x, y) = (x1[j], x2[j]);
                    row[j] = half_h2 * (x * x * c11 + y * y * c22);
                }
            }
            Field::Const(v) => {
                let v = *v;
                for j in 1..r - 1 {
                    let c11 = down[j] - 2.0 * mid[j] + up[j];
                    let c22 = mid[j + 1] - 2.0 * mid[j] + mid[j - 1];
                    let c12 = (down[j + 1] - down[j - 1]) - (up[j + 1] - up[j - 1]);
                    let (x, y) = (x1[j], x2[j]);
                    row[j] = half_h2 * (x * x * c11 + y * y * c22) + v * x * y * c12 * inv_4h2;
                }
            }
            Field::Full(v) => {
                let v = &v[base..base + r];
                line(&|j| v[j], row)
            }
            g => line(&|j| g.at(base + j, &[i, j]), row),
        }
    });
    out
}

/// All three groups of terms, with the half-line integrals mapped to u-space
/// and evaluated as Stieltjes sums against the lattice derivatives.
pub(crate) fn general(
    frame: &Frame,
    d: &LatticeDerivatives,
    variant: FirstTermVariant,
) -> Result<RhsField> {
    let s = frame.shape;
    let n = s.n;
    if n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    let len = s.len();
    let mut multi = vec![0; n];
    let axis_f = |i: usize, flat: usize, multi: &mut [usize]| {
        s.multi(flat, multi);
        frame.axes[i].f[multi[i]]
    };
    let mut total = vec![0.0; len];
    let sigma: Vec<Vec<f64>> = frame.sigma.iter().map(|g| g.to_full(s)).collect();
    for i in 0..n {
        let b = frame.b[i].to_full(s);
        let others: Vec<usize> = (0..n).filter(|&a| a != i).collect();
        // ½ ∫ σ̃_i²(z) f_i² ∇_{z∖i} ∇²_{u_i}C
        let weight: Vec<f64> = match variant {
            FirstTermVariant::Outside => sigma[i].iter().map(|v| v * v).collect(),
            FirstTermVariant::Inside => (0..len)
                .map(|f| sigma[i][f].powi(2) * axis_f(i, f, &mut multi).powi(2))
                .collect(),
        };
        let first = stieltjes(&d.d2[i], &weight, s, &others);
        // −∇_{u_i}C·B^iF_i(x) + ∫ ∇_{z∖i}∇_{u_i}C·B^iF_i(z)
        let drift = stieltjes(&d.d1[i], &b, s, &others);
        for f in 0..len {
            let fi = axis_f(i, f, &mut multi);
            let t1 = match variant {
                FirstTermVariant::Outside => 0.5 * fi * fi * first[f],
                FirstTermVariant::Inside => 0.5 * first[f],
            };
            total[f] += t1 - d.d1[i][f] * b[f] + drift[f];
        }
        // ½ Σ_{j≠i} ρ_ij f_i f_j ∫ σ̃_iσ̃_j(z) ∇_{z∖ij}∇_{u_i,u_j}C
        for j in 0..n {
            if j == i {
                continue;
            }
            let rest: Vec<usize> = (0..n).filter(|&a| a != i && a != j).collect();
            let w: Vec<f64> = sigma[i].iter().zip(&sigma[j]).map(|(a, b)| a * b).collect();
            let cross = stieltjes(d.mixed(i, j, n), &w, s, &rest);
            let rho = frame.rho(i, j).to_full(s);
            for f in 0..len {
                s.multi(f, &mut multi);
                let ff = frame.axes[i].f[multi[i]] * frame.axes[j].f[multi[j]];
                total[f] += 0.5 * rho[f] * ff * cross[f];
            }
        }
    }
    for (f, v) in total.iter_mut().enumerate() {
        s.multi(f, &mut multi);
        if is_pinned(&multi, s.r) {
            *v = 0.0;
        }
    }
    let mut warnings = Vec::new();
    if frame.floor_fraction() > 0.05 {
        warnings.push(format!(
            "density floor hit on {:.1}% of axis samples",
            100.0 * frame.floor_fraction()
        ));
    }
    Ok(RhsField { values: total, warnings })
}

/// The two-dimensional equation written out term by term on its own loops.
pub(crate) fn galichon2d(
    sys: &SdeSystem,
    frame: &Frame,
    values: &[f64],
) -> Result<RhsField> {
    let s = frame.shape;
    if s.n != 2 {
        return Err(Error::UnsupportedDimension(s.n));
    }
    let r = s.r;
    let h = s.h;
    let at = |i: usize, j: usize| values[i * r + j];
    // ∂_1C and ∂_2C with the same stencils as everywhere else
    let d1 = |i: usize, j: usize| -> f64 {
        if i == 0 {
            (-3.0 * at(0, j) + 4.0 * at(1, j) - at(2, j)) / (2.0 * h)
        } else if i == r - 1 {
            (3.0 * at(r - 1, j) - 4.0 * at(r - 2, j) + at(r - 3, j)) / (2.0 * h)
        } else {
            (at(i + 1, j) - at(i - 1, j)) / (2.0 * h)
        }
    };
    let d2 = |i: usize, j: usize| -> f64 {
        if j == 0 {
            (-3.0 * at(i, 0) + 4.0 * at(i, 1) - at(i, 2)) / (2.0 * h)
        } else if j == r - 1 {
            (3.0 * at(i, r - 1) - 4.0 * at(i, r - 2) + at(i, r - 3)) / (2.0 * h)
        } else {
            (at(i, j + 1) - at(i, j - 1)) / (2.0 * h)
        }
    };
    let (a1, a2) = (&frame.axes[0], &frame.axes[1]);
    let xy = |i: usize, j: usize| [a1.x[i], a2.x[j]];
    // B_1F_1 and B_2F_2 at (z_1, z_2) = (x_1(i), x_2(j))
    let mut bf1 = vec![0.0; r * r];
    let mut bf2 = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            let z = xy(i, j);
            bf1[i * r + j] = crate::marginal_solver::b_pointwise(sys, 0, &z, a1.f[i], a1.f_prime[i]);
            bf2[i * r + j] = crate::marginal_solver::b_pointwise(sys, 1, &z, a2.f[j], a2.f_prime[j]);
        }
    }
    // ∫_{(−∞,x_1]} ∇_{u1,u2}C f_1 B_2F_2 dz_1 = ∫_0^{u_1} ∂_{v}(∂_2C) B_2F_2 dv, as a running
    // sum down each column of differences of ∂_2C times the trapezoid average of B_2F_2
    let mut int2 = vec![0.0; r * r];
    for j in 0..r {
        for i in 1..r {
            let seg = d2(i, j) - d2(i - 1, j);
            int2[i * r + j] = int2[(i - 1) * r + j] + seg * 0.5 * (bf2[(i - 1) * r + j] + bf2[i * r + j]);
        }
    }
    let rows: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; r];
            if i == 0 || i == r - 1 {
                return row;
            }
            // ∫_{(−∞,x_2]} ∇_{u1,u2}C f_2 B_1F_1 dz_2, same construction along the row
            let mut int1 = 0.0;
            for j in 1..r - 1 {
                let seg = d1(i, j) - d1(i, j - 1);
                int1 += seg * 0.5 * (bf1[i * r + j - 1] + bf1[i * r + j]);
                let x = xy(i, j);
                let (f1, f2) = (a1.f[i], a2.f[j]);
                let (s1, s2) = (sys.sigma(0, &x), sys.sigma(1, &x));
                let rho = sys.rho(0, 1, x[0], x[1]);
                let c11 = (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / (h * h);
                let c22 = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (h * h);
                let c12 = (d2(i + 1, j) - d2(i - 1, j)) / (2.0 * h);
                row[j] = 0.5 * s1 * s1 * f1 * f1 * c11 + 0.5 * s2 * s2 * f2 * f2 * c22
                    - d1(i, j) * bf1[i * r + j]
                    + int1
                    - d2(i, j) * bf2[i * r + j]
                    + int2[i * r + j]
                    + s1 * s2 * rho * f1 * f2 * c12;
            }
            row
        })
        .collect();
    Ok(RhsField { values: rows.concat(), warnings: Vec::new() })
}
