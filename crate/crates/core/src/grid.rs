//! Samples of a process on a uniform time grid.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{as_count, grid, Error, Result};

/// Values of a process at `t0 + k * dt` for `k = 0..values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(grid(format!("invalid grid t0={t0}, dt={dt}")));
        }
        if values.is_empty() {
            return Err(grid("a path needs at least one sample"));
        }
        Ok(Self { t0, dt, values })
    }

    /// Samples `f` at `t0 + k dt`, `k = 0..=steps`.
    pub fn from_fn(t0: f64, dt: f64, steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..=steps).map(|k| f(t0 + k as f64 * dt)).collect();
        Self::new(t0, dt, values)
    }

    pub fn zeros(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        Self::new(t0, dt, vec![0.0; steps + 1])
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of steps, one less than the number of samples.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Index of the grid point equal to `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        as_count((t - self.t0) / self.dt).filter(|&k| k < self.values.len())
    }

    /// Value at grid time `t`, failing when `t` is not a grid point.
    pub fn at(&self, t: f64) -> Result<f64> {
        self.index_of(t)
            .map(|k| self.values[k])
            .ok_or_else(|| grid(format!("time {t} is not a grid point of the path")))
    }

    /// Value at the last grid point not after `t`, clamped to the path range.
    pub fn floor_value(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        let k = (x + 1e-9).floor().clamp(0.0, self.steps() as f64) as usize;
        self.values[k]
    }

    /// Linear interpolation between neighbouring grid values, clamped at the ends.
    pub fn interp(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return self.values[0];
        }
        let last = self.steps();
        if x >= last as f64 {
            return self.values[last];
        }
        let k = x.floor() as usize;
        let w = x - k as f64;
        if w < 1e-12 {
            return self.values[k];
        }
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }

    /// Keeps every `factor`-th sample.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(grid(format!(
                "factor {factor} does not divide the {} steps of the path",
                self.steps()
            )));
        }
        let values = self.values.iter().step_by(factor).copied().collect();
        Self::new(self.t0, self.dt * factor as f64, values)
    }

    /// Restricts the path to the grid points in `[from, to]`, both of which must be grid times.
    pub fn window(&self, from: f64, to: f64) -> Result<Self> {
        let a = self.index_of(from).ok_or_else(|| grid(format!("{from} not on the grid")))?;
        let b = self.index_of(to).ok_or_else(|| grid(format!("{to} not on the grid")))?;
        if b < a {
            return Err(grid("empty window"));
        }
        Self::new(self.time(a), self.dt, self.values[a..=b].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise `self - other` on identical grids.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self::new(self.t0, self.dt, values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if close(self.t0, other.t0) && close(self.dt, other.dt) && self.len() == other.len() {
            Ok(())
        } else {
            Err(grid(format!(
                "grids differ: (t0={}, dt={}, len={}) vs (t0={}, dt={}, len={})",
                self.t0,
                self.dt,
                self.len(),
                other.t0,
                other.dt,
                other.len()
            )))
        }
    }

    /// Writes `t,value` rows, preceded by `# `-prefixed comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "t,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.time(k), v)?;
        }
        Ok(())
    }

    /// Reads the format produced by [`GridPath::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::Data(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "t,value" {
                continue;
            }
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("malformed row '{line}'")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("'{s}': {e}")))
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        if values.is_empty() {
            return Err(Error::Data("no samples".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        for (k, t) in times.iter().enumerate() {
            if (t - (times[0] + k as f64 * dt)).abs() > 1e-9 * dt.max(1.0) * (k as f64 + 1.0) {
                return Err(grid("csv times are not uniformly spaced"));
            }
        }
        Self::new(times[0], dt, values)
    }
}
