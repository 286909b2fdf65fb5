//! Scalar special functions and quadrature shared by the copula and solver modules.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Lower cut used in place of −∞ for standard normal integrals; Φ(−9) ≈ 1e−19.
pub const NORMAL_LOWER_CUT: f64 = -9.0;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile; maps 0 and 1 to the infinities.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

// Gauss-Kronrod 7-15 nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS_K[7];
    let mut gauss = fc * GK_WEIGHTS_G[3];
    for j in 0..7 {
        let dx = h * GK_NODES[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS_K[j] * s;
        if j % 2 == 1 {
            gauss += GK_WEIGHTS_G[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature with an absolute error target.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let mut stack = vec![(lo, hi, abs_tol, 0u32)];
    let mut total = 0.0;
    while let Some((l, r, tol, depth)) = stack.pop() {
        let (val, err) = gk15(&f, l, r);
        if err <= tol || depth >= 40 || (r - l) < 1e-14 * (1.0 + l.abs()) {
            total += val;
        } else {
            let m = 0.5 * (l + r);
            stack.push((l, m, 0.5 * tol, depth + 1));
            stack.push((m, r, 0.5 * tol, depth + 1));
        }
    }
    sign * total
}

/// Φ₂(a, b; ρ) by quadrature of φ(z)·Φ((b − ρz)/√(1 − ρ²)) over z ≤ a.
pub fn bivariate_normal_cdf(a: f64, b: f64, rho: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return 0.0;
    }
    if a == f64::INFINITY {
        return norm_cdf(b);
    }
    if b == f64::INFINITY {
        return norm_cdf(a);
    }
    if rho >= 1.0 {
        return norm_cdf(a.min(b));
    }
    if rho <= -1.0 {
        return (norm_cdf(a) - norm_cdf(-b)).max(0.0);
    }
    if rho == 0.0 {
        return norm_cdf(a) * norm_cdf(b);
    }
    let s = (1.0 - rho * rho).sqrt();
    let lo = NORMAL_LOWER_CUT.min(a - 1.0);
    integrate(|z| norm_pdf(z) * norm_cdf((b - rho * z) / s), lo, a, 1e-14)
}

/// Φ₃(a; R) by nested quadrature: outer over z₁ ≤ a₁, inner bivariate conditional.
pub fn trivariate_normal_cdf(a: [f64; 3], r12: f64, r13: f64, r23: f64) -> f64 {
    if a.contains(&f64::NEG_INFINITY) {
        return 0.0;
    }
    if a[0] == f64::INFINITY {
        return bivariate_normal_cdf(a[1], a[2], r23);
    }
    if a[1] == f64::INFINITY {
        return bivariate_normal_cdf(a[0], a[2], r13);
    }
    if a[2] == f64::INFINITY {
        return bivariate_normal_cdf(a[0], a[1], r12);
    }
    let s2 = (1.0 - r12 * r12).max(0.0).sqrt();
    let s3 = (1.0 - r13 * r13).max(0.0).sqrt();
    let cond = |z: f64| -> f64 {
        let m2 = r12 * z;
        let m3 = r13 * z;
        if s2 < 1e-12 || s3 < 1e-12 {
            let p2 = if s2 < 1e-12 {
                if m2 <= a[1] { 1.0 } else { 0.0 }
            } else {
                norm_cdf((a[1] - m2) / s2)
            };
            let p3 = if s3 < 1e-12 {
                if m3 <= a[2] { 1.0 } else { 0.0 }
            } else {
                norm_cdf((a[2] - m3) / s3)
            };
            return p2 * p3;
        }
        let r = ((r23 - r12 * r13) / (s2 * s3)).clamp(-1.0, 1.0);
        bivariate_normal_cdf((a[1] - m2) / s2, (a[2] - m3) / s3, r)
    };
    let lo = NORMAL_LOWER_CUT.min(a[0] - 1.0);
    integrate(|z| norm_pdf(z) * cond(z), lo, a[0], 1e-12)
}

/// Closed form Φ₂(0, 0; ρ) = 1/4 + arcsin(ρ)/(2π).
pub fn orthant_probability(rho: f64) -> f64 {
    0.25 + rho.asin() / (2.0 * PI)
}

/// Linear interpolation on a strictly increasing abscissa; clamps outside the span.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + w * (ys[k + 1] - ys[k])
}

/// Cumulative trapezoid integral starting at zero.
pub fn cumulative_trapezoid(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..xs.len() {
        acc += 0.5 * (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]);
        out.push(acc);
    }
    out
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// First derivative samples on a (possibly nonuniform) grid: central inside,
/// second-order one-sided at the ends.
pub fn gradient(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let d = (ys[1] - ys[0]) / (xs[1] - xs[0]);
            out[0] = d;
            out[1] = d;
        }
        return out;
    }
    for k in 1..n - 1 {
        let h0 = xs[k] - xs[k - 1];
        let h1 = xs[k + 1] - xs[k];
        out[k] = (ys[k + 1] * h0 * h0 - ys[k - 1] * h1 * h1 + ys[k] * (h1 * h1 - h0 * h0))
            / (h0 * h1 * (h0 + h1));
    }
    let h = xs[1] - xs[0];
    out[0] = (-3.0 * ys[0] + 4.0 * ys[1] - ys[2]) / (2.0 * h);
    let h = xs[n - 1] - xs[n - 2];
    out[n - 1] = (3.0 * ys[n - 1] - 4.0 * ys[n - 2] + ys[n - 3]) / (2.0 * h);
    out
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { b } else { a + k as f64 * h })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_and_quantile_agree() {
        for &p in &[1e-8, 0.01, 0.3, 0.5, 0.9, 0.975, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-14 * (1.0 + 1.0 / p), "p={p}");
        }
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
    }

    #[test]
    fn quadrature_matches_polynomial_and_gaussian_mass() {
        let v = integrate(|x| x * x * x - x, 0.0, 2.0, 1e-13);
        assert!((v - 2.0).abs() < 1e-12);
        let m = integrate(norm_pdf, -12.0, 12.0, 1e-14);
        assert!((m - 1.0).abs() < 1e-13);
    }

    #[test]
    fn bivariate_center_matches_arcsin() {
        for &r in &[-0.9, -0.5, 0.0, 0.3, 0.5, 0.8, 0.99] {
            let v = bivariate_normal_cdf(0.0, 0.0, r);
            assert!((v - orthant_probability(r)).abs() < 1e-12, "rho={r} v={v}");
        }
    }

    #[test]
    fn trivariate_reduces_to_product_and_orthant() {
        let a = [0.3, -0.4, 1.1];
        let v = trivariate_normal_cdf(a, 0.0, 0.0, 0.0);
        let p = norm_cdf(a[0]) * norm_cdf(a[1]) * norm_cdf(a[2]);
        assert!((v - p).abs() < 1e-11);
        // P(Z1<=0,Z2<=0,Z3<=0) = 1/8 + (asin r12 + asin r13 + asin r23)/(4π)
        let (r12, r13, r23): (f64, f64, f64) = (0.5, 0.3, 0.2);
        let exact: f64 = 0.125 + (r12.asin() + r13.asin() + r23.asin()) / (4.0 * PI);
        let v = trivariate_normal_cdf([0.0; 3], r12, r13, r23);
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let xs = [0.0, 0.1, 0.3, 0.35, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x * x - x + 1.0).collect();
        let g = gradient(&xs, &ys);
        for (x, d) in xs[1..4].iter().zip(&g[1..4]) {
            assert!((d - (4.0 * x - 1.0)).abs() < 1e-12);
        }
    }
}
