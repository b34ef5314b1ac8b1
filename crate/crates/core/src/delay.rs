//! Finite signed delay measures on `[0, τ]`.
//!
//! A measure is a finite list of atoms plus a piecewise-constant density.
//! Keeping the density piecewise constant means every integral the solvers
//! need is exact up to the chosen sub-step, and the projection onto a grid
//! (the push-forward under `r ↦ ⌊r/Δ⌋Δ`) has closed form.

use serde::{Deserialize, Serialize};

use crate::error::{as_count, grid, param, Result};

/// `η = Σ w_i δ_{r_i} + Σ level_k 1_{[lo_k, hi_k)} dr` on `[0, tau]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DelayMeasure {
    tau: f64,
    atoms: Vec<(f64, f64)>,
    density: Vec<(f64, f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    tau: f64,
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    density: Vec<(f64, f64, f64)>,
}

impl TryFrom<RawMeasure> for DelayMeasure {
    type Error = crate::Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        DelayMeasure::new(raw.tau, raw.atoms, raw.density)
    }
}

impl DelayMeasure {
    /// Builds a measure from atoms `(location, weight)` and density pieces `(lo, hi, level)`.
    pub fn new(tau: f64, atoms: Vec<(f64, f64)>, density: Vec<(f64, f64, f64)>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(param(format!("tau must be positive, got {tau}")));
        }
        for &(r, w) in &atoms {
            if !(0.0..=tau).contains(&r) || !w.is_finite() {
                return Err(param(format!("atom ({r}, {w}) outside [0, {tau}]")));
            }
        }
        let mut locs: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        locs.sort_by(f64::total_cmp);
        if locs.windows(2).any(|w| w[0] == w[1]) {
            return Err(param("atom locations must be distinct"));
        }
        for &(lo, hi, level) in &density {
            if !(0.0 <= lo && lo < hi && hi <= tau) || !level.is_finite() {
                return Err(param(format!(
                    "density piece [{lo}, {hi}] with level {level} is invalid on [0, {tau}]"
                )));
            }
        }
        Ok(Self {
            tau,
            atoms,
            density,
        })
    }

    /// Unit atom at `r`.
    pub fn dirac(tau: f64, r: f64) -> Result<Self> {
        Self::new(tau, vec![(r, 1.0)], Vec::new())
    }

    /// Constant density `level` on the whole of `[0, tau]`.
    pub fn uniform(tau: f64, level: f64) -> Result<Self> {
        Self::new(tau, Vec::new(), vec![(0.0, tau, level)])
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> &[(f64, f64, f64)] {
        &self.density
    }

    pub fn is_atomic(&self) -> bool {
        self.density.is_empty()
    }

    /// `η([0, τ])`.
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>()
            + self.density.iter().map(|(lo, hi, l)| l * (hi - lo)).sum::<f64>()
    }

    /// `|η|([0, τ])`. Overlapping density pieces are summed before taking
    /// the absolute value.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.1.abs()).sum();
        let mut cuts: Vec<f64> = self.density.iter().flat_map(|p| [p.0, p.1]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let dens: f64 = cuts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let level: f64 = self
                    .density
                    .iter()
                    .filter(|p| p.0 <= mid && mid < p.1)
                    .map(|p| p.2)
                    .sum();
                level.abs() * (w[1] - w[0])
            })
            .sum();
        atoms + dens
    }

    /// `∫ f dη`. Density pieces use the composite midpoint rule on sub-cells
    /// cut at every multiple of `max_step`, so the result is exact for affine
    /// `f` and for any `f` that is constant on the cells `[k h, (k+1) h)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, max_step: f64) -> f64 {
        let mut total: f64 = self.atoms.iter().map(|&(r, w)| w * f(r)).sum();
        for &(lo, hi, level) in &self.density {
            total += level * midpoint_aligned(&f, lo, hi, max_step);
        }
        total
    }

    /// Projection of `η` under `r ↦ ⌊r/dt⌋ dt`, keeping an atom at `τ` in place.
    ///
    /// Requires `dt = τ/n`. The result is purely atomic with atoms on
    /// `{0, dt, ..., τ}`; zero weights are dropped.
    pub fn floor_pushforward(&self, dt: f64) -> Result<Self> {
        let weights = self.cell_weights(dt)?;
        let n = weights.len() - 1;
        let atoms = weights
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w != 0.0)
            .map(|(j, w)| (if j == n { self.tau } else { j as f64 * dt }, w))
            .collect();
        Self::new(self.tau, atoms, Vec::new())
    }

    /// The push-forward as `(lag index j, weight)` pairs: lag `j` stands for `j * dt`.
    pub fn lag_weights(&self, dt: f64) -> Result<Vec<(usize, f64)>> {
        Ok(self
            .cell_weights(dt)?
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w != 0.0)
            .collect())
    }

    /// Dense vector of `η([t_j, t_{j+1}))` for `j < n`, with `η({τ})` at index `n`.
    fn cell_weights(&self, dt: f64) -> Result<Vec<f64>> {
        let n = as_count(self.tau / dt)
            .filter(|&n| n >= 1)
            .ok_or_else(|| grid(format!("step {dt} does not divide tau = {}", self.tau)))?;
        let mut w = vec![0.0; n + 1];
        for &(r, weight) in &self.atoms {
            let j = grid_floor(r / dt).min(n);
            w[j] += weight;
        }
        for &(lo, hi, level) in &self.density {
            let first = grid_floor(lo / dt).min(n - 1);
            let last = grid_ceil(hi / dt).min(n);
            for (j, wj) in w.iter_mut().enumerate().take(last).skip(first) {
                let a = (j as f64 * dt).max(lo);
                let b = ((j + 1) as f64 * dt).min(hi);
                if b > a {
                    *wj += level * (b - a);
                }
            }
        }
        Ok(w)
    }
}

/// Floor of `x`, snapping values within round-off of an integer onto it.
pub(crate) fn grid_floor(x: f64) -> usize {
    match as_count(x) {
        Some(k) => k,
        None => x.max(0.0).floor() as usize,
    }
}

fn grid_ceil(x: f64) -> usize {
    match as_count(x) {
        Some(k) => k,
        None => x.max(0.0).ceil() as usize,
    }
}

fn midpoint_aligned(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    if !(h > 0.0 && h.is_finite()) {
        return (hi - lo) * f(0.5 * (lo + hi));
    }
    let mut total = 0.0;
    let mut a = lo;
    let mut k = grid_floor(lo / h) + 1;
    while a < hi {
        let b = (k as f64 * h).min(hi);
        if b > a {
            total += (b - a) * f(0.5 * (a + b));
        }
        a = b;
        k += 1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrate_examples() {
        let d0 = DelayMeasure::dirac(1.0, 0.0).unwrap();
        assert_eq!(d0.integrate(|r| r.cos() + 3.0, 0.1), 4.0);
        let leb = DelayMeasure::uniform(1.0, 1.0).unwrap();
        assert!((leb.integrate(|r| r, 0.01) - 0.5).abs() < 1e-14);
        let c = 0.7;
        let tau = 2.0;
        let mixed = DelayMeasure::new(tau, vec![(tau, 1.0)], vec![(0.0, tau, -c)]).unwrap();
        assert!((mixed.integrate(|_| 1.0, 0.1) - (1.0 - c * tau)).abs() < 1e-14);
        assert!((mixed.mass() - (1.0 - c * tau)).abs() < 1e-14);
    }

    #[test]
    fn midpoint_is_exact_for_grid_step_functions() {
        let leb = DelayMeasure::new(1.0, vec![], vec![(0.1, 0.9, 2.0)]).unwrap();
        let h = 0.25;
        let step = |r: f64| (grid_floor(r / h) as f64).powi(2);
        // cells: [0.1,0.25)->0, [0.25,0.5)->1, [0.5,0.75)->4, [0.75,0.9)->9
        let exact = 2.0 * (0.25 * 1.0 + 0.25 * 4.0 + 0.15 * 9.0);
        assert!((leb.integrate(step, h) - exact).abs() < 1e-14);
    }

    #[test]
    fn pushforward_examples() {
        let d0 = DelayMeasure::dirac(1.0, 0.0).unwrap();
        assert_eq!(d0.floor_pushforward(0.5).unwrap(), d0);
        let tau = 3.0;
        let leb = DelayMeasure::uniform(tau, 1.0).unwrap();
        let p = leb.floor_pushforward(tau / 2.0).unwrap();
        assert_eq!(p.atoms(), &[(0.0, 1.5), (1.5, 1.5)]);
        let off = DelayMeasure::dirac(tau, 0.3 * tau).unwrap();
        assert_eq!(off.floor_pushforward(tau / 2.0).unwrap().atoms(), &[(0.0, 1.0)]);
        let end = DelayMeasure::dirac(tau, tau).unwrap();
        assert_eq!(end.lag_weights(tau / 4.0).unwrap(), vec![(4, 1.0)]);
        assert!(leb.floor_pushforward(0.7).is_err());
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(DelayMeasure::dirac(1.0, 1.0).unwrap().total_variation(), 1.0);
        let two = DelayMeasure::new(1.0, vec![(0.0, 1.0), (1.0, -1.0)], vec![]).unwrap();
        assert_eq!(two.total_variation(), 2.0);
        let dens = DelayMeasure::new(1.0, vec![], vec![(0.0, 0.5, -2.0)]).unwrap();
        assert_eq!(dens.total_variation(), 1.0);
        let cancel =
            DelayMeasure::new(1.0, vec![], vec![(0.0, 1.0, 1.0), (0.0, 0.5, -1.0)]).unwrap();
        assert!((cancel.total_variation() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(DelayMeasure::new(0.0, vec![], vec![]).is_err());
        assert!(DelayMeasure::new(1.0, vec![(1.5, 1.0)], vec![]).is_err());
        assert!(DelayMeasure::new(1.0, vec![(0.5, 1.0), (0.5, 2.0)], vec![]).is_err());
        assert!(DelayMeasure::new(1.0, vec![], vec![(0.5, 0.4, 1.0)]).is_err());
    }
}
