use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"CPDPATH1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
}

/// Simulated sample paths, stored as [path][time][component].
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    n_paths: usize,
    dim: usize,
    t_grid: Vec<f64>,
    states: Vec<f64>,
    seed: u64,
    scheme: Scheme,
    /// Number of (path, step) evaluations where ρ(x) needed PSD repair.
    pub projected_steps: u64,
}

impl PathEnsemble {
    pub fn new(
        n_paths: usize,
        dim: usize,
        t_grid: Vec<f64>,
        states: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if states.len() != n_paths * t_grid.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} state values for {n_paths} paths x {} times x {dim} components",
                states.len(),
                t_grid.len()
            )));
        }
        check_time_grid(&t_grid)?;
        Ok(Self { n_paths, dim, t_grid, states, seed, scheme: Scheme::EulerMaruyama, projected_steps: 0 })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_times(&self) -> usize {
        self.t_grid.len()
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let off = (path * self.t_grid.len() + time_index) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// Values of one component across all paths at a time index.
    pub fn cross_section(&self, time_index: usize, component: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, time_index)[component]).collect()
    }

    /// Index of the grid time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.t_grid.iter().enumerate() {
            if (s - t).abs() < (self.t_grid[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,time,component,value")?;
        for p in 0..self.n_paths {
            for (k, t) in self.t_grid.iter().enumerate() {
                for (c, v) in self.state(p, k).iter().enumerate() {
                    writeln!(w, "{p},{t},{},{v}", c + 1)?;
                }
            }
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`PathEnsemble::write_csv`]; rows must be
    /// in the same order.
    pub fn read_csv<R: BufRead>(r: R, seed: u64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "path,time,component,value" {
            return Err(Error::Parse(format!("unexpected path CSV header '{header}'")));
        }
        let mut rows: Vec<(usize, f64, usize, f64)> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("path CSV line {}: '{line}'", ln + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            rows.push((
                f[0].trim().parse().map_err(|_| bad())?,
                f[1].trim().parse().map_err(|_| bad())?,
                f[2].trim().parse().map_err(|_| bad())?,
                f[3].trim().parse().map_err(|_| bad())?,
            ));
        }
        let n_paths = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        let dim = rows.iter().map(|r| r.2).max().unwrap_or(0);
        let mut t_grid: Vec<f64> = Vec::new();
        for r in rows.iter().take_while(|r| r.0 == 0) {
            if t_grid.last() != Some(&r.1) {
                t_grid.push(r.1);
            }
        }
        let states = rows.iter().map(|r| r.3).collect();
        Self::new(n_paths, dim, t_grid, states, seed)
    }

    /// Compact dump: magic, then u64 n_paths, n_times, dim, seed, then the time
    /// grid and all states as little-endian f64 in [path][time][component] order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for v in [self.n_paths as u64, self.t_grid.len() as u64, self.dim as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.t_grid.iter().chain(&self.states) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("missing CPDPATH1 header".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [n_paths, n_times, dim, seed] = header;
        let (n_paths, n_times, dim) = (n_paths as usize, n_times as usize, dim as usize);
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut word)?;
                out.push(f64::from_le_bytes(word));
            }
            Ok(out)
        };
        let t_grid = read_f64s(n_times)?;
        let states = read_f64s(n_paths * n_times * dim)?;
        Self::new(n_paths, dim, t_grid, states, seed)
    }
}

pub(crate) fn check_time_grid(t: &[f64]) -> Result<()> {
    if t.is_empty() || t[0] != 0.0 {
        return Err(Error::Parameter("time grid must start at 0".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("time grid must be strictly increasing".into()));
    }
    Ok(())
}
