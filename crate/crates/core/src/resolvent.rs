//! Differential resolvents of the linearised delay equation.
//!
//! For a path-dependent coefficient `ψ_t = b'(X_t)` the resolvent solves
//!
//! ```text
//! R(t, s) = 1 + ∫_s^t ∫_[0,u] ψ_{u-r} R(u-r, s) η(dr) du,   R(t, s) = 0 for t < s,
//! ```
//!
//! and its `s`-derivative has the closed form
//! `∂_s R(t, s) = -ψ_s ∫_[0,t-s] R(t, s+r) η(dr)`. When `b` is affine with
//! slope `c`, `R(t, s) = φ(t - s)` for the fundamental solution
//! `φ' = c ∫ φ(· - r) η(dr)`, `φ(0) = 1`.
//!
//! Everything here steps forward with the left-endpoint rule on a uniform
//! grid of step `δ`, integrating over `η` through its projection onto that
//! grid, which matches the order of the Euler scheme under study.

use std::io::Write;

use crate::delay::DelayMeasure;
use crate::error::{as_count, grid, Error, Result};
use crate::grid::GridPath;
use crate::sdde::{SchemeResult, SddeSpec};

/// Samples of the fundamental solution `φ` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGrid {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl PhiGrid {
    /// `φ(k dt)`, zero for negative `k`.
    pub fn at_index(&self, k: isize) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    pub fn to_path(&self) -> GridPath {
        GridPath::new(0.0, self.dt, self.values.clone()).expect("non-empty")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,phi")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", k as f64 * self.dt, v)?;
        }
        Ok(())
    }
}

fn grid_steps(t_end: f64, dt: f64) -> Result<usize> {
    as_count(t_end / dt)
        .filter(|&n| n >= 1)
        .ok_or_else(|| grid(format!("step {dt} does not divide the horizon {t_end}")))
}

/// Fundamental solution for `b(x) = c x`: `φ_{k+1} = φ_k + dt c Σ_l w_l φ_{k-l}`.
pub fn phi_solve(eta: &DelayMeasure, c: f64, t_end: f64, dt: f64) -> Result<PhiGrid> {
    let steps = grid_steps(t_end, dt)?;
    let lags = eta.lag_weights(dt)?;
    let mut phi = Vec::with_capacity(steps + 1);
    phi.push(1.0);
    for k in 0..steps {
        let s: f64 = lags
            .iter()
            .filter(|&&(l, _)| l <= k)
            .map(|&(l, w)| w * phi[k - l])
            .sum();
        phi.push(phi[k] + dt * c * s);
    }
    Ok(PhiGrid { dt, values: phi })
}

/// The closed-form fundamental solution for a single delayed atom,
/// `φ(t) = Σ_{k ≤ t/τ} c^k (t - kτ)^k / k!`.
pub fn delayed_exponential(c: f64, tau: f64, t: f64) -> f64 {
    let mut total = 0.0;
    let mut k = 0usize;
    let mut fact = 1.0;
    while k as f64 * tau <= t {
        if k > 0 {
            fact *= k as f64;
        }
        total += c.powi(k as i32) * (t - k as f64 * tau).powi(k as i32) / fact;
        k += 1;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Depends on `i - j` only.
    Stationary(Vec<f64>),
    /// Row-major lower triangle; row `i` holds `j = 0..=i`.
    Dense(Vec<f64>),
}

/// A lower-triangular array `A[i][j]`, `0 ≤ j ≤ i < size`, on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangular {
    dt: f64,
    size: usize,
    storage: Storage,
}

impl Triangular {
    fn row_start(i: usize) -> usize {
        i * (i + 1) / 2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self.storage, Storage::Stationary(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i < self.size);
        match &self.storage {
            Storage::Stationary(v) => v[i - j],
            Storage::Dense(v) => v[Self::row_start(i) + j],
        }
    }

    /// Row `i` as a vector over `j = 0..=i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        match &self.storage {
            Storage::Stationary(v) => (0..=i).map(|j| v[i - j]).collect(),
            Storage::Dense(v) => v[Self::row_start(i)..Self::row_start(i + 1)].to_vec(),
        }
    }

    /// Binary layout: `dt` (f64 LE), `size` (u64 LE), then the row-major lower triangle as f64 LE.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&self.dt.to_le_bytes())?;
        out.write_all(&(self.size as u64).to_le_bytes())?;
        for i in 0..self.size {
            for j in 0..=i {
                out.write_all(&self.get(i, j).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let word = |k: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * k..8 * k + 8)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| Error::Data("truncated resolvent dump".into()))
        };
        let dt = f64::from_le_bytes(word(0)?);
        let size = u64::from_le_bytes(word(1)?) as usize;
        let count = Self::row_start(size);
        if bytes.len() != 8 * (2 + count) {
            return Err(Error::Data("resolvent dump has the wrong length".into()));
        }
        let values = (0..count)
            .map(|k| word(2 + k).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dt,
            size,
            storage: Storage::Dense(values),
        })
    }
}

/// `R(t_i, s_j)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventGrid {
    pub values: Triangular,
    /// Set when `b` is affine, in which case `R(t_i, s_j) = φ(t_i - s_j)`.
    pub deterministic: bool,
}

impl ResolventGrid {
    pub fn from_phi(phi: &PhiGrid) -> Self {
        Self {
            values: Triangular {
                dt: phi.dt,
                size: phi.values.len(),
                storage: Storage::Stationary(phi.values.clone()),
            },
            deterministic: true,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn size(&self) -> usize {
        self.values.size
    }

    pub fn dt(&self) -> f64 {
        self.values.dt
    }
}

/// `∂_s R(t_i, s_j)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SDerivative {
    pub values: Triangular,
}

impl SDerivative {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

fn check_psi(psi: &GridPath, t_end: f64, dt: f64) -> Result<usize> {
    let steps = grid_steps(t_end, dt)?;
    if psi.t0().abs() > 1e-12 || (psi.dt() - dt).abs() > 1e-12 * dt || psi.steps() < steps {
        return Err(grid("coefficient path must live on the resolvent grid over [0, T]"));
    }
    Ok(steps)
}

/// Resolvent for the coefficient `ψ` given on the grid of step `dt` over `[0, T]`.
///
/// Each column `s_j` is integrated forward from `R(s_j, s_j) = 1` with
/// `R(t_{i+1}, s_j) = R(t_i, s_j) + dt Σ_l w_l ψ(t_i - l dt) R(t_i - l dt, s_j)`.
pub fn resolvent_general(
    psi: &GridPath,
    eta: &DelayMeasure,
    t_end: f64,
    dt: f64,
) -> Result<ResolventGrid> {
    let steps = check_psi(psi, t_end, dt)?;
    let size = steps + 1;
    let lags = eta.lag_weights(dt)?;
    let ps = psi.values();
    let mut dense = vec![0.0; Triangular::row_start(size)];
    let mut column = vec![0.0; size];
    for j in 0..size {
        column[j] = 1.0;
        for i in j..steps {
            let s: f64 = lags
                .iter()
                .filter(|&&(l, _)| i >= j + l)
                .map(|&(l, w)| w * ps[i - l] * column[i - l])
                .sum();
            column[i + 1] = column[i] + dt * s;
        }
        for i in j..size {
            dense[Triangular::row_start(i) + j] = column[i];
        }
    }
    Ok(ResolventGrid {
        values: Triangular {
            dt,
            size,
            storage: Storage::Dense(dense),
        },
        deterministic: false,
    })
}

/// `∂_s R(t_i, s_j) = -ψ(s_j) Σ_{l: s_j + l dt ≤ t_i} w_l R(t_i, s_j + l dt)`.
pub fn s_derivative(r: &ResolventGrid, psi: &GridPath, eta: &DelayMeasure) -> Result<SDerivative> {
    let dt = r.dt();
    let size = r.size();
    let lags = eta.lag_weights(dt)?;
    let ps = psi.values();
    if ps.len() < size {
        return Err(grid("coefficient path shorter than the resolvent grid"));
    }
    let constant = ps[..size].iter().all(|&p| p == ps[0]);
    if r.values.is_stationary() && constant {
        // depends on i - j only: -c Σ_l w_l φ(q - l)
        let values = (0..size)
            .map(|q| {
                -ps[0]
                    * lags
                        .iter()
                        .filter(|&&(l, _)| l <= q)
                        .map(|&(l, w)| w * r.get(q - l, 0))
                        .sum::<f64>()
            })
            .collect();
        return Ok(SDerivative {
            values: Triangular {
                dt,
                size,
                storage: Storage::Stationary(values),
            },
        });
    }
    let mut dense = vec![0.0; Triangular::row_start(size)];
    for i in 0..size {
        for j in 0..=i {
            let s: f64 = lags
                .iter()
                .filter(|&&(l, _)| j + l <= i)
                .map(|&(l, w)| w * r.get(i, j + l))
                .sum();
            dense[Triangular::row_start(i) + j] = -ps[j] * s;
        }
    }
    Ok(SDerivative {
        values: Triangular {
            dt,
            size,
            storage: Storage::Dense(dense),
        },
    })
}

/// `U(N)_{t_i} = N_{t_i} - Σ_{j<i} dt N_{s_j} ∂_s R(t_i, s_j)`.
pub fn limit_solution(n_path: &GridPath, dsr: &SDerivative) -> Result<GridPath> {
    let size = dsr.values.size;
    if n_path.len() < size || (n_path.dt() - dsr.values.dt).abs() > 1e-12 * n_path.dt() {
        return Err(grid("input path does not match the resolvent grid"));
    }
    let dt = dsr.values.dt;
    let nv = n_path.values();
    let values = (0..size)
        .map(|i| nv[i] - dt * (0..i).map(|j| nv[j] * dsr.get(i, j)).sum::<f64>())
        .collect();
    GridPath::new(n_path.t0(), dt, values)
}

/// `U(N)_{t_i}` at a single index.
pub fn limit_solution_at(n_path: &GridPath, dsr: &SDerivative, i: usize) -> f64 {
    let dt = dsr.values.dt;
    let nv = n_path.values();
    nv[i] - dt * (0..i).map(|j| nv[j] * dsr.get(i, j)).sum::<f64>()
}

/// `U(N)` by direct Euler stepping of
/// `U_t = N_t + ∫_0^t ∫ ψ_{s-r} U_{s-r} η(dr) ds`.
pub fn limit_solution_euler(
    n_path: &GridPath,
    psi: &GridPath,
    eta: &DelayMeasure,
) -> Result<GridPath> {
    let dt = n_path.dt();
    let steps = n_path.steps();
    if psi.len() < n_path.len() || (psi.dt() - dt).abs() > 1e-12 * dt {
        return Err(grid("coefficient path does not match the input grid"));
    }
    let lags = eta.lag_weights(dt)?;
    let (nv, ps) = (n_path.values(), psi.values());
    let mut u = Vec::with_capacity(steps + 1);
    u.push(nv[0]);
    for k in 0..steps {
        let s: f64 = lags
            .iter()
            .filter(|&&(l, _)| l <= k)
            .map(|&(l, w)| w * ps[k - l] * u[k - l])
            .sum();
        u.push(u[k] + dt * s + nv[k + 1] - nv[k]);
    }
    GridPath::new(n_path.t0(), dt, u)
}

/// `ϕ(q δ) = c Σ_l w_l φ((q - l) δ)`, the kernel of the linear error representation.
pub fn varphi(phi: &PhiGrid, eta: &DelayMeasure, c: f64) -> Result<Vec<f64>> {
    let lags = eta.lag_weights(phi.dt)?;
    Ok((0..phi.values.len())
        .map(|q| {
            c * lags
                .iter()
                .map(|&(l, w)| w * phi.at_index(q as isize - l as isize))
                .sum::<f64>()
        })
        .collect())
}

/// Rebuilds `U^n` from `Y^n` for affine drift:
/// `U_{t_k} = Y_{t_k} + Σ_{m<k} δ Y_{s_m} ϕ(t_k - s_m)`.
///
/// For a general drift the same reconstruction is `limit_solution(Y, ∂_s R)`
/// with the per-path resolvent.
pub fn error_representation(spec: &SddeSpec, y: &GridPath, phi: &PhiGrid) -> Result<GridPath> {
    let c = spec.drift.linear_slope().ok_or_else(|| {
        Error::Unsupported("the convolution representation needs an affine drift".into())
    })?;
    if (y.dt() - phi.dt).abs() > 1e-12 * phi.dt || y.len() > phi.values.len() {
        return Err(grid("Y and phi must share the fine grid"));
    }
    let kernel = varphi(phi, &spec.eta, c)?;
    let dt = y.dt();
    let yv = y.values();
    let values = (0..yv.len())
        .map(|k| yv[k] + dt * (0..k).map(|m| yv[m] * kernel[k - m]).sum::<f64>())
        .collect();
    GridPath::new(y.t0(), dt, values)
}

/// `G(s_j) = ∫ [b(X_{s_j - r}) - b(X_{s_j - T(r)})] η(dr)` with `T(r) = ⌊r/Δ⌋Δ`
/// and `X` the reference path, read by linear interpolation off its grid.
pub fn bias_integrand(spec: &SddeSpec, reference: &SchemeResult, n: usize) -> Result<Vec<f64>> {
    let coarse = spec.tau() / n as f64;
    let delta = reference.dt;
    let steps = reference.drift.len();
    let path = &reference.path;
    let read = |u: f64| {
        if u < 0.0 {
            spec.x0.value(u)
        } else {
            path.interp(u)
        }
    };
    let floor = |r: f64| crate::delay::grid_floor(r / coarse) as f64 * coarse;
    let on_grid = spec
        .eta
        .atoms()
        .iter()
        .all(|&(r, _)| as_count(r / coarse).is_some());
    if on_grid && spec.eta.is_atomic() || spec.drift.is_constant() {
        return Ok(vec![0.0; steps + 1]);
    }
    Ok((0..=steps)
        .map(|j| {
            let s = j as f64 * delta;
            spec.eta.integrate(
                |r| spec.drift.b(read(s - r)) - spec.drift.b(read(s - floor(r))),
                delta,
            )
        })
        .collect())
}

/// `V^n_{t_i} = Σ_{j<i} δ R(t_i, s_j) G(s_j)` for a single fine index `i`.
pub fn bias_at(r: &ResolventGrid, g: &[f64], i: usize) -> f64 {
    let dt = r.dt();
    (0..i).map(|j| dt * r.get(i, j) * g[j]).sum()
}

/// The bias process `V^n` on the fine grid of the reference.
pub fn bias_process(
    r: &ResolventGrid,
    spec: &SddeSpec,
    reference: &SchemeResult,
    n: usize,
) -> Result<GridPath> {
    let g = bias_integrand(spec, reference, n)?;
    if r.size() < g.len() {
        return Err(grid("resolvent grid shorter than the reference path"));
    }
    let values = if g.iter().all(|&x| x == 0.0) {
        vec![0.0; g.len()]
    } else {
        (0..g.len()).map(|i| bias_at(r, &g, i)).collect()
    };
    GridPath::new(0.0, reference.dt, values)
}

/// `ψ_t = b'(X_t)` along the non-negative part of a path.
pub fn coefficient_path(spec: &SddeSpec, path: &SchemeResult) -> GridPath {
    path.positive_part().map(|x| spec.drift.db(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        let d0 = DelayMeasure::dirac(1.0, 0.0).unwrap();
        let phi = phi_solve(&d0, 0.0, 5.0, 0.01).unwrap();
        assert!(phi.values.iter().all(|&v| v == 1.0));
        let c = -0.5;
        let dt = 1.0 / 128.0;
        let phi = phi_solve(&d0, c, 5.0, dt).unwrap();
        for (k, v) in phi.values.iter().enumerate() {
            assert!((v - (1.0 + c * dt).powi(k as i32)).abs() < 1e-13);
        }
    }

    #[test]
    fn delayed_exponential_oracle() {
        assert_eq!(delayed_exponential(1.0, 1.0, 0.5), 1.0);
        assert!((delayed_exponential(1.0, 1.0, 1.5) - 1.5).abs() < 1e-15);
        assert!((delayed_exponential(1.0, 1.0, 2.5) - (1.0 + 1.5 + 0.5 * 0.5 * 0.5)).abs() < 1e-14);
        let tau = 1.0;
        let eta = DelayMeasure::dirac(tau, tau).unwrap();
        for dt in [1.0 / 64.0, 1.0 / 128.0] {
            let phi = phi_solve(&eta, 1.0, 3.0, dt).unwrap();
            let err = phi
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| (v - delayed_exponential(1.0, tau, k as f64 * dt)).abs())
                .fold(0.0, f64::max);
            assert!(err < 2.0 * dt, "{err}");
        }
    }

    #[test]
    fn general_resolvent_reduces_to_phi() {
        let eta = DelayMeasure::new(1.0, vec![(1.0, 1.0)], vec![(0.0, 1.0, -0.5)]).unwrap();
        let dt = 1.0 / 16.0;
        let c = -0.8;
        let phi = phi_solve(&eta, c, 2.0, dt).unwrap();
        let psi = GridPath::new(0.0, dt, vec![c; 33]).unwrap();
        let r = resolvent_general(&psi, &eta, 2.0, dt).unwrap();
        for i in 0..33 {
            assert_eq!(r.get(i, i), 1.0);
            for j in 0..=i {
                assert!((r.get(i, j) - phi.values[i - j]).abs() < 1e-13);
            }
        }
        let zero = GridPath::new(0.0, dt, vec![0.0; 33]).unwrap();
        let r0 = resolvent_general(&zero, &eta, 2.0, dt).unwrap();
        assert!((0..33).all(|i| (0..=i).all(|j| r0.get(i, j) == 1.0)));
    }

    #[test]
    fn s_derivative_instant_feedback() {
        let eta = DelayMeasure::dirac(1.0, 0.0).unwrap();
        let dt = 1.0 / 32.0;
        let c = 0.6;
        let phi = phi_solve(&eta, c, 1.0, dt).unwrap();
        let r = ResolventGrid::from_phi(&phi);
        let psi = GridPath::new(0.0, dt, vec![c; 33]).unwrap();
        let d = s_derivative(&r, &psi, &eta).unwrap();
        assert!(d.values.is_stationary());
        for i in 0..33 {
            for j in 0..=i {
                assert!((d.get(i, j) + c * phi.values[i - j]).abs() < 1e-14);
            }
        }
        let rg = resolvent_general(&psi, &eta, 1.0, dt).unwrap();
        let dg = s_derivative(&rg, &psi, &eta).unwrap();
        for i in 0..33 {
            for j in 0..=i {
                assert!((dg.get(i, j) - d.get(i, j)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn limit_solution_routes_for_linear_ode() {
        let c = -0.7;
        let eta = DelayMeasure::dirac(1.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for dt in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0] {
            let steps = (2.0 / dt) as usize;
            let n = GridPath::from_fn(0.0, dt, steps, |t| t).unwrap();
            let phi = phi_solve(&eta, c, 2.0, dt).unwrap();
            let psi = GridPath::new(0.0, dt, vec![c; steps + 1]).unwrap();
            let dsr = s_derivative(&ResolventGrid::from_phi(&phi), &psi, &eta).unwrap();
            let rep = limit_solution(&n, &dsr).unwrap();
            let eul = limit_solution_euler(&n, &psi, &eta).unwrap();
            let mut err = 0.0f64;
            for k in 0..=steps {
                let t = k as f64 * dt;
                let exact = ((c * t).exp() - 1.0) / c;
                err = err.max((rep.values()[k] - exact).abs());
                err = err.max((eul.values()[k] - exact).abs());
            }
            assert!(err < 2.0 * dt, "dt={dt}: {err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn limit_solution_trivial_inputs() {
        let eta = DelayMeasure::dirac(1.0, 1.0).unwrap();
        let dt = 1.0 / 8.0;
        let psi0 = GridPath::new(0.0, dt, vec![0.0; 17]).unwrap();
        let r = resolvent_general(&psi0, &eta, 2.0, dt).unwrap();
        let d = s_derivative(&r, &psi0, &eta).unwrap();
        let n = GridPath::from_fn(0.0, dt, 16, |t| t.sin()).unwrap();
        assert_eq!(limit_solution(&n, &d).unwrap(), n);
        let zero = GridPath::zeros(0.0, dt, 16).unwrap();
        let psi = GridPath::new(0.0, dt, vec![-1.0; 17]).unwrap();
        let r1 = resolvent_general(&psi, &eta, 2.0, dt).unwrap();
        let d1 = s_derivative(&r1, &psi, &eta).unwrap();
        assert!(limit_solution(&zero, &d1).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_dump_round_trip() {
        let eta = DelayMeasure::dirac(1.0, 0.5).unwrap();
        let phi = phi_solve(&eta, -1.0, 1.0, 0.25).unwrap();
        let r = ResolventGrid::from_phi(&phi);
        let mut buf = Vec::new();
        r.values.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (2 + 15));
        let back = Triangular::read_binary(&buf).unwrap();
        for i in 0..5 {
            for j in 0..=i {
                assert_eq!(back.get(i, j), r.get(i, j));
            }
        }
        assert!(Triangular::read_binary(&buf[..20]).is_err());
    }
}
