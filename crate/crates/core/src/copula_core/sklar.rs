use super::{Copula, MarginalState};
use crate::error::{Error, Result};

/// H(t, x | x0) = C(F_1(x_1), …, F_n(x_n)).
pub fn sklar_compose<C: Copula + ?Sized>(
    copula: &C,
    margins: &[MarginalState],
    x: &[f64],
) -> Result<f64> {
    let n = copula.dim();
    if margins.len() != n || x.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "copula dimension {n}, {} margins, {} coordinates",
            margins.len(),
            x.len()
        )));
    }
    let t = margins[0].time();
    if let Some(m) = margins.iter().find(|m| (m.time() - t).abs() > 1e-12) {
        return Err(Error::Consistency(format!(
            "margin time stamps differ: {t} vs {}",
            m.time()
        )));
    }
    let mut u = Vec::with_capacity(n);
    for (i, (m, &xi)) in margins.iter().zip(x).enumerate() {
        let (lo, hi) = m.span();
        if xi < lo || xi > hi {
            return Err(Error::Domain(format!(
                "x{} = {xi} outside marginal grid [{lo}, {hi}]",
                i + 1
            )));
        }
        u.push(m.cdf_at(xi));
    }
    copula.cdf(&u)
}
