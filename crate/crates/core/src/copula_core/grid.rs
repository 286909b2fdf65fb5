use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Coordinate of lattice index `k` on a uniform axis of `resolution` points over [0, 1].
#[inline]
pub fn lattice_coord(k: usize, resolution: usize) -> f64 {
    if k + 1 == resolution {
        1.0
    } else {
        k as f64 / (resolution - 1) as f64
    }
}

/// Copula values sampled on the uniform lattice over `[0,1]^dim`, endpoints included.
///
/// Storage is row-major: the first axis varies slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct CopulaGrid {
    dim: usize,
    resolution: usize,
    values: Vec<f64>,
    time: f64,
}

impl CopulaGrid {
    pub fn new(dim: usize, resolution: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Parameter(format!("copula dimension must be >= 2, got {dim}")));
        }
        if resolution < 2 {
            return Err(Error::Parameter(format!("resolution must be >= 2, got {resolution}")));
        }
        let len = resolution
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Parameter("lattice too large".into()))?;
        if values.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "expected {len} lattice values for dim {dim} resolution {resolution}, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite lattice value {v}")));
        }
        if !(time >= 0.0) {
            return Err(Error::Parameter(format!("time stamp must be >= 0, got {time}")));
        }
        Ok(Self { dim, resolution, values, time })
    }

    /// Samples `f` at every lattice point (parallel over points).
    pub fn from_fn<F>(dim: usize, resolution: usize, time: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let len = resolution.pow(dim as u32);
        let values = (0..len)
            .into_par_iter()
            .map(|flat| {
                let mut u = vec![0.0; dim];
                let mut rem = flat;
                for axis in (0..dim).rev() {
                    u[axis] = lattice_coord(rem % resolution, resolution);
                    rem /= resolution;
                }
                f(&u)
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(dim, resolution, values, time)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }


    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.resolution - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        lattice_coord(k, self.resolution)
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim];
        for axis in (0..self.dim - 1).rev() {
            s[axis] = s[axis + 1] * self.resolution;
        }
        s
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &k| acc * self.resolution + k)
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim).rev() {
            out[axis] = flat % self.resolution;
            flat /= self.resolution;
        }
    }

    pub fn point(&self, multi: &[usize]) -> Vec<f64> {
        multi.iter().map(|&k| self.coord(k)).collect()
    }

    pub fn get(&self, multi: &[usize]) -> f64 {
        self.values[self.index(multi)]
    }

    /// Multilinear interpolation at an arbitrary point of the unit cube.
    pub fn interpolate(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coordinates, grid has dimension {}",
                u.len(),
                self.dim
            )));
        }
        let last = (self.resolution - 1) as f64;
        let mut base = vec![0usize; self.dim];
        let mut frac = vec![0.0; self.dim];
        for (axis, &ui) in u.iter().enumerate() {
            if !(0.0..=1.0).contains(&ui) {
                return Err(Error::Domain(format!("coordinate u{} = {ui} outside [0,1]", axis + 1)));
            }
            let s = ui * last;
            let k = (s.floor() as usize).min(self.resolution - 2);
            base[axis] = k;
            frac[axis] = s - k as f64;
        }
        let strides = self.strides();
        let origin: usize = base.iter().zip(&strides).map(|(k, s)| k * s).sum();
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = origin;
            for axis in 0..self.dim {
                if corner >> axis & 1 == 1 {
                    w *= frac[axis];
                    idx += strides[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        Ok(acc)
    }

    /// Writes `u1,…,un,C` rows, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("u{i}")).collect();
        writeln!(w, "{},C", header.join(","))?;
        let mut multi = vec![0; self.dim];
        for (flat, v) in self.values.iter().enumerate() {
            self.multi_index(flat, &mut multi);
            for &k in &multi {
                write!(w, "{:.16e},", self.coord(k))?;
            }
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`CopulaGrid::write_csv`].
    pub fn read_csv<R: BufRead>(r: R, time: f64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty copula CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let dim = cols.len().saturating_sub(1);
        if dim < 2 || cols[dim] != "C" || (0..dim).any(|i| cols[i] != format!("u{}", i + 1)) {
            return Err(Error::Parse(format!("unexpected copula CSV header '{header}'")));
        }
        let mut values = Vec::new();
        let mut first_axis = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", lineno + 2, fields.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))
            };
            first_axis.push(parse(fields[dim - 1])?);
            values.push(parse(fields[dim])?);
        }
        let total = values.len();
        let resolution = (total as f64).powf(1.0 / dim as f64).round() as usize;
        if resolution < 2 || resolution.pow(dim as u32) != total {
            return Err(Error::Parse(format!("{total} rows do not form a {dim}-dimensional lattice")));
        }
        for (k, &u) in first_axis.iter().take(resolution).enumerate() {
            if (u - lattice_coord(k, resolution)).abs() > 1e-12 {
                return Err(Error::Parse(format!("lattice coordinate {u} out of order")));
            }
        }
        Self::new(dim, resolution, values, time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = CopulaGrid::from_fn(3, 5, 0.0, |u| Ok(u[0] * u[1] * u[2])).unwrap();
        let mut m = vec![0; 3];
        for flat in 0..g.len() {
            g.multi_index(flat, &mut m);
            assert_eq!(g.index(&m), flat);
        }
        assert_eq!(g.get(&[4, 2, 2]), 0.25);
    }

    #[test]
    fn interpolation_exact_on_multilinear() {
        let g = CopulaGrid::from_fn(2, 11, 0.0, |u| Ok(u[0] * u[1])).unwrap();
        let v = g.interpolate(&[0.33, 0.77]).unwrap();
        assert!((v - 0.33 * 0.77).abs() < 1e-15);
        assert!(g.interpolate(&[1.2, 0.1]).is_err());
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let g = CopulaGrid::from_fn(2, 7, 0.5, |u| Ok(u[0].min(u[1]) * 0.999_999_1)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("u1,u2,C\n"));
        let back = CopulaGrid::read_csv(&buf[..], 0.5).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(matches!(
            CopulaGrid::new(2, 3, vec![0.0; 8], 0.0),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
