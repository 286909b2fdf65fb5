//! Finite differences and Stieltjes prefix sums on the uniform u-lattice.

/// Flat-index geometry of an n-dimensional lattice with r points per axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Shape {
    pub n: usize,
    pub r: usize,
    pub h: f64,
    strides: [usize; 4],
}

impl Shape {
    pub fn new(n: usize, r: usize) -> Self {
        assert!(n <= 3, "lattices have at most three axes");
        let mut strides = [0; 4];
        for (a, st) in strides.iter_mut().enumerate().take(n) {
            *st = r.pow((n - 1 - a) as u32);
        }
        Self { n, r, h: 1.0 / (r - 1) as f64, strides }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.r.pow(self.n as u32)
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn coord(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.r
    }

    #[inline]
    pub fn multi(&self, flat: usize, out: &mut [usize]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.coord(flat, a);
        }
    }
}

/// Applies `f(v, base, k)` along every line parallel to `axis`, where `base` is
/// the flat index of the line's first point and k the position on it.
#[inline]
fn along_axis(len: usize, s: Shape, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let st = s.stride(axis);
    let block = st * s.r;
    for outer in (0..len).step_by(block) {
        for inner in 0..st {
            let base = outer + inner;
            for k in 0..s.r {
                f(base + k * st, base, k);
            }
        }
    }
}

/// ∂/∂u_axis: central inside, second-order one-sided at the two ends.
pub(crate) fn diff1(v: &[f64], s: Shape, axis: usize) -> Vec<f64> {
    let st = s.stride(axis);
    let inv = 1.0 / (2.0 * s.h);
    let last = s.r - 1;
    let mut out = vec![0.0; v.len()];
    along_axis(v.len(), s, axis, |f, _, k| {
        out[f] = if k == 0 {
            (-3.0 * v[f] + 4.0 * v[f + st] - v[f + 2 * st]) * inv
        } else if k == last {
            (3.0 * v[f] - 4.0 * v[f - st] + v[f - 2 * st]) * inv
        } else {
            (v[f + st] - v[f - st]) * inv
        };
    });
    out
}

/// ∂²/∂u_axis²: central inside, second-order one-sided at the ends.
pub(crate) fn diff2(v: &[f64], s: Shape, axis: usize) -> Vec<f64> {
    let st = s.stride(axis);
    let inv = 1.0 / (s.h * s.h);
    let last = s.r - 1;
    let mut out = vec![0.0; v.len()];
    along_axis(v.len(), s, axis, |f, _, k| {
        out[f] = if k == 0 {
            (2.0 * v[f] - 5.0 * v[f + st] + 4.0 * v[f + 2 * st] - v[f + 3 * st]) * inv
        } else if k == last {
            (2.0 * v[f] - 5.0 * v[f - st] + 4.0 * v[f - 2 * st] - v[f - 3 * st]) * inv
        } else {
            (v[f + st] - 2.0 * v[f] + v[f - st]) * inv
        };
    });
    out
}

/// Lattice derivatives of C used by the right-hand sides.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeDerivatives {
    /// ∇_{u_i}C per axis.
    pub d1: Vec<Vec<f64>>,
    /// ∇²_{u_i}C per axis.
    pub d2: Vec<Vec<f64>>,
    /// ∇_{u_i,u_j}C at index i·n + j for i < j; empty otherwise.
    pub mixed: Vec<Vec<f64>>,
}

impl LatticeDerivatives {
    pub(crate) fn compute(v: &[f64], s: Shape) -> Self {
        let n = s.n;
        let d1: Vec<Vec<f64>> = (0..n).map(|a| diff1(v, s, a)).collect();
        let d2 = (0..n).map(|a| diff2(v, s, a)).collect();
        let mut mixed = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                mixed[i * n + j] = diff1(&d1[j], s, i);
            }
        }
        Self { d1, d2, mixed }
    }

    pub fn mixed(&self, i: usize, j: usize, n: usize) -> &[f64] {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        &self.mixed[a * n + b]
    }
}

/// S(m) = Σ over lattice cells of the excluded axes below m of ΔK(cell) times
/// the corner average of g, with the remaining axes held at m: a trapezoid
/// Stieltjes sum for ∫ g dK over [0, u_E].
pub(crate) fn stieltjes(k: &[f64], g: &[f64], s: Shape, excluded: &[usize]) -> Vec<f64> {
    if excluded.is_empty() {
        return k.iter().zip(g).map(|(a, b)| a * b).collect();
    }
    let e = excluded.len();
    let corners = 1usize << e;
    let strides: Vec<usize> = excluded.iter().map(|&a| s.stride(a)).collect();
    let weight = 1.0 / corners as f64;
    let mut p: Vec<f64> = (0..k.len())
        .map(|f| {
            if excluded.iter().any(|&a| s.coord(f, a) == 0) {
                return 0.0;
            }
            let mut dk = 0.0;
            let mut gs = 0.0;
            for c in 0..corners {
                let mut idx = f;
                let mut lowered = 0;
                for (bit, st) in strides.iter().enumerate() {
                    if c >> bit & 1 == 1 {
                        idx -= st;
                        lowered += 1;
                    }
                }
                let sign = if lowered % 2 == 0 { 1.0 } else { -1.0 };
                dk += sign * k[idx];
                gs += g[idx];
            }
            dk * gs * weight
        })
        .collect();
    for (&a, &st) in excluded.iter().zip(&strides) {
        for f in 0..p.len() {
            if s.coord(f, a) > 0 {
                p[f] += p[f - st];
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencils_exact_on_quadratics() {
        let s = Shape::new(2, 11);
        let v: Vec<f64> = (0..s.len())
            .map(|f| {
                let (a, b) = (s.coord(f, 0) as f64 * s.h, s.coord(f, 1) as f64 * s.h);
                a * a * b + 3.0 * b * b - a
            })
            .collect();
        let d = LatticeDerivatives::compute(&v, s);
        for f in 0..s.len() {
            let (a, b) = (s.coord(f, 0) as f64 * s.h, s.coord(f, 1) as f64 * s.h);
            assert!((d.d1[0][f] - (2.0 * a * b - 1.0)).abs() < 1e-12);
            assert!((d.d1[1][f] - (a * a + 6.0 * b)).abs() < 1e-12);
            assert!((d.d2[0][f] - 2.0 * b).abs() < 1e-9);
            assert!((d.d2[1][f] - 6.0).abs() < 1e-9);
            assert!((d.mixed(0, 1, 2)[f] - 2.0 * a).abs() < 1e-11);
        }
    }

    #[test]
    fn stieltjes_telescopes_for_constant_weight() {
        let s = Shape::new(3, 7);
        let k: Vec<f64> = (0..s.len())
            .map(|f| (0..3).map(|a| s.coord(f, a) as f64 * s.h).product::<f64>().sqrt())
            .collect();
        let g = vec![2.5; s.len()];
        let p = stieltjes(&k, &g, s, &[0, 2]);
        for f in 0..s.len() {
            // K vanishes whenever an excluded coordinate is 0
            assert!((p[f] - 2.5 * k[f]).abs() < 1e-14);
        }
    }

    #[test]
    fn stieltjes_integrates_weight_against_increment() {
        // ∫_0^u v d(v²) = 2u³/3; trapezoid Stieltjes error is O(h²)
        let s = Shape::new(2, 201);
        let k: Vec<f64> = (0..s.len()).map(|f| (s.coord(f, 1) as f64 * s.h).powi(2)).collect();
        let g: Vec<f64> = (0..s.len()).map(|f| s.coord(f, 1) as f64 * s.h).collect();
        let p = stieltjes(&k, &g, s, &[1]);
        let last = s.len() - 1;
        assert!((p[last] - 2.0 / 3.0).abs() < 1e-4);
    }
}
