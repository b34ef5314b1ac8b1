//! Limit theory toolkit: the statistic `S_n`, the kernel `g`, the limit
//! noise `(M, N)`, rate constants, characteristic-function comparisons and
//! the small statistics used to fit and test rates.
//!
//! In the rough regime `ϖ_n^{-1} S_n` converges to a stable Lévy process `M`
//! whose unit-time scale is `σ_M = σ (∫_0^1 |g(s)|^α ds)^{1/α}` with
//!
//! ```text
//! g(s) = s^{β+1}/(β+1) + Σ_{m≥0} [ ((m+1+s)^{β+1} - (m+s)^{β+1})/(β+1) - (m+s)^β ].
//! ```
//!
//! The series equals `-ζ(-β, s)` (Hurwitz zeta), which is how its tail is
//! summed here: after `M` explicit terms the remainder is the Euler–Maclaurin
//! expansion of `Σ_{m≥M} [∫_m^{m+1} F - F(m)]` for `F(x) = (x+s)^β`.

use std::io::Write;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::delay::DelayMeasure;
use crate::error::{as_count, grid, param, Error, Result};
use crate::grid::GridPath;
use crate::quad::GaussLegendre;
use crate::stable_noise::{fill_scaled, SeededStream, StableParams};

/// Which side of `H = 1/α` the noise is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    NonRough,
    Rough,
}

/// Normalisation `ϖ_n`: `Δ_n` when `H > 1/α`, `Δ_n^{β+1}` when `H < 1/α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub hurst: f64,
    pub alpha: f64,
    pub regime: Regime,
}

impl RateSpec {
    pub fn new(hurst: f64, alpha: f64) -> Result<Self> {
        let beta = hurst - 1.0 / alpha;
        if beta.abs() < 1e-12 {
            return Err(Error::UnsupportedRegime(format!(
                "H = 1/alpha = {hurst} is excluded"
            )));
        }
        let regime = if beta < 0.0 {
            Regime::Rough
        } else {
            Regime::NonRough
        };
        Ok(Self {
            hurst,
            alpha,
            regime,
        })
    }

    pub fn beta(&self) -> f64 {
        self.hurst - 1.0 / self.alpha
    }

    /// Exponent of `ϖ_n` in `Δ_n`.
    pub fn rate(&self) -> f64 {
        match self.regime {
            Regime::NonRough => 1.0,
            Regime::Rough => self.beta() + 1.0,
        }
    }

    pub fn varpi(&self, dt: f64) -> f64 {
        match self.regime {
            Regime::NonRough => dt,
            Regime::Rough => dt.powf(self.beta() + 1.0),
        }
    }
}

/// The kernel `g` for a given `β < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GKernel {
    pub beta: f64,
    /// Fixed number of explicit terms; chosen from `tail_tol` when `None`.
    pub truncation: Option<usize>,
    pub tail_tol: f64,
}

impl GKernel {
    pub fn new(beta: f64, tail_tol: f64) -> Result<Self> {
        if !(beta < 0.0 && beta > -1.0) {
            return Err(param(format!("kernel exponent must lie in (-1, 0), got {beta}")));
        }
        if !(tail_tol > 0.0) {
            return Err(param("tail tolerance must be positive"));
        }
        Ok(Self {
            beta,
            truncation: None,
            tail_tol,
        })
    }

    pub fn for_params(rate: &RateSpec) -> Result<Self> {
        if rate.regime != Regime::Rough {
            return Err(Error::UnsupportedRegime(
                "the kernel g is only defined for H < 1/alpha".into(),
            ));
        }
        Self::new(rate.beta(), 1e-12)
    }

    pub fn with_truncation(mut self, m: usize) -> Self {
        self.truncation = Some(m);
        self
    }

    /// Number of explicit terms used at `s`: the smallest `M ≥ 8` for which the
    /// first omitted Euler–Maclaurin term is below `tail_tol`.
    pub fn terms(&self, s: f64) -> usize {
        if let Some(m) = self.truncation {
            return m;
        }
        let b = self.beta;
        let c = (b * (b - 1.0) * (b - 2.0) * (b - 3.0) * (b - 4.0)).abs() / 30240.0;
        let mut m = 8usize;
        while c * (m as f64 + s).powf(b - 5.0) > self.tail_tol && m < 1 << 20 {
            m *= 2;
        }
        m
    }
}

/// `((x+1)^{β+1} - x^{β+1})/(β+1) - x^β`, stable for large `x`.
fn g_term(beta: f64, x: f64) -> f64 {
    if x < 10.0 {
        return ((x + 1.0).powf(beta + 1.0) - x.powf(beta + 1.0)) / (beta + 1.0) - x.powf(beta);
    }
    // x^β Σ_{k≥1} β(β-1)…(β-k+1)/(k+1)! y^k, y = 1/x
    let y = 1.0 / x;
    let mut coef = 1.0;
    let mut yk = 1.0;
    let mut sum = 0.0;
    for k in 1..40 {
        coef *= (beta - (k as f64 - 1.0)) / (k as f64 + 1.0);
        yk *= y;
        let term = coef * yk;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    x.powf(beta) * sum
}

/// Euler–Maclaurin estimate of `Σ_{m≥M} term_m`.
fn g_tail(beta: f64, x: f64) -> f64 {
    let b = beta;
    -0.5 * x.powf(b) + b * x.powf(b - 1.0) / 12.0
        - b * (b - 1.0) * (b - 2.0) * x.powf(b - 3.0) / 720.0
}

/// `g(s)` for `0 < s ≤ 1`.
pub fn g_eval(kernel: &GKernel, s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!("g is evaluated on (0, 1], got {s}")));
    }
    let b = kernel.beta;
    let m = kernel.terms(s);
    let mut total = s.powf(b + 1.0) / (b + 1.0);
    for k in 0..m {
        total += g_term(b, k as f64 + s);
    }
    Ok(total + g_tail(b, m as f64 + s))
}

/// `σ (∫_0^1 |g(s)|^α ds)^{1/α}`, by Gauss–Legendre on a mesh graded toward
/// the singularity at zero and split at the sign change of `g`.
pub fn m_scale(kernel: &GKernel, stable: &StableParams) -> Result<f64> {
    m_scale_with_mesh(kernel, stable, 0.5, graded_levels(kernel.beta * stable.alpha()), 20)
}

/// Levels of halving after which the untreated innermost panel, of relative
/// weight `(2^-L)^{1+αβ}`, falls below 1e-15.
fn graded_levels(alpha_beta: f64) -> usize {
    let gap = (1.0 + alpha_beta).max(1e-3);
    ((15.0 * std::f64::consts::LOG2_10 / gap).ceil() as usize + 8).min(4000)
}

/// [`m_scale`] with explicit mesh ratio, number of graded levels and rule order.
pub fn m_scale_with_mesh(
    kernel: &GKernel,
    stable: &StableParams,
    ratio: f64,
    levels: usize,
    order: usize,
) -> Result<f64> {
    let alpha = stable.alpha();
    if kernel.beta * alpha <= -1.0 {
        return Err(param("|g|^alpha is not integrable when alpha * beta <= -1"));
    }
    let g = |s: f64| g_eval(kernel, s).unwrap_or(0.0);
    let f = |s: f64| g(s).abs().powf(alpha);
    let rule = GaussLegendre::new(order);
    let integral = match sign_change(&g) {
        Some(root) => {
            // graded toward 0 on [0, root], uniform panels on [root, 1]
            let left = rule.integrate_graded(&f, 0.0, root, ratio, levels);
            let panels = 8;
            let h = (1.0 - root) / panels as f64;
            let right: f64 = (0..panels)
                .map(|k| rule.integrate(&f, root + k as f64 * h, root + (k + 1) as f64 * h))
                .sum();
            left + right
        }
        None => rule.integrate_graded(&f, 0.0, 1.0, ratio, levels),
    };
    Ok(stable.sigma() * integral.powf(1.0 / alpha))
}

fn sign_change(g: &impl Fn(f64) -> f64) -> Option<f64> {
    let grid: Vec<f64> = (1..=64).map(|k| k as f64 / 64.0).collect();
    let mut lo = 1e-9;
    let mut glo = g(lo);
    for &hi in &grid {
        let ghi = g(hi);
        if glo.signum() != ghi.signum() {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if g(mid).signum() == glo.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-15 {
                    break;
                }
            }
            return Some(0.5 * (a + b));
        }
        lo = hi;
        glo = ghi;
    }
    None
}

/// Limit noise: `M` a stable Lévy process of unit scale `sigma_m`, and
/// `N_t = ∫_[0,t] M_{t-r} η(dr)` with `M` read at grid points.
pub fn limit_noise_from_scale(
    sigma_m: f64,
    alpha: f64,
    eta: &DelayMeasure,
    t_end: f64,
    dt: f64,
    stream: SeededStream,
) -> Result<(GridPath, GridPath)> {
    let steps = as_count(t_end / dt)
        .filter(|&n| n >= 1)
        .ok_or_else(|| grid(format!("step {dt} does not divide horizon {t_end}")))?;
    let mut inc = vec![0.0; steps];
    fill_scaled(alpha, sigma_m * dt.powf(1.0 / alpha), &mut stream.rng(), &mut inc);
    let mut m = Vec::with_capacity(steps + 1);
    m.push(0.0);
    let mut acc = 0.0;
    for d in inc {
        acc += d;
        m.push(acc);
    }
    let m = GridPath::new(0.0, dt, m)?;
    let n = delay_average(&m, eta)?;
    Ok((m, n))
}

/// `N_{t_i} = Σ_{l ≤ i} w_l M_{t_i - l dt}` for the grid projection `w` of `η`.
pub fn delay_average(m: &GridPath, eta: &DelayMeasure) -> Result<GridPath> {
    let lags = eta.lag_weights(m.dt())?;
    let mv = m.values();
    let values = (0..mv.len())
        .map(|i| {
            lags.iter()
                .filter(|&&(l, _)| l <= i)
                .map(|&(l, w)| w * mv[i - l])
                .sum()
        })
        .collect();
    GridPath::new(m.t0(), m.dt(), values)
}

/// [`limit_noise_from_scale`] with `σ_M` from [`m_scale`].
pub fn simulate_limit_noise(
    kernel: &GKernel,
    stable: &StableParams,
    eta: &DelayMeasure,
    t_end: f64,
    dt: f64,
    stream: SeededStream,
) -> Result<(GridPath, GridPath)> {
    let sigma_m = m_scale(kernel, stable)?;
    limit_noise_from_scale(sigma_m, stable.alpha(), eta, t_end, dt, stream)
}

/// Draws `(M_1, L_1) = ∫_(0,1] (g(s), 1) dL_s` jointly, `count` times, by
/// discretising `L` into `cells` sub-cells and averaging `g` over each cell.
pub fn simulate_joint_unit(
    kernel: &GKernel,
    stable: &StableParams,
    cells: usize,
    count: usize,
    stream: SeededStream,
) -> Result<Vec<(f64, f64)>> {
    if cells == 0 {
        return Err(param("need at least one cell"));
    }
    let h = 1.0 / cells as f64;
    let rule = GaussLegendre::new(8);
    let g = |s: f64| g_eval(kernel, s).unwrap_or(0.0);
    let weights: Vec<f64> = (0..cells)
        .map(|k| {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            let integral = if k == 0 {
                rule.integrate_graded(&g, a, b, 0.5, 40)
            } else {
                rule.integrate(&g, a, b)
            };
            integral / h
        })
        .collect();
    let mut rng = stream.rng();
    let mut dl = vec![0.0; cells];
    let scale = stable.sigma() * h.powf(1.0 / stable.alpha());
    Ok((0..count)
        .map(|_| {
            fill_scaled(stable.alpha(), scale, &mut rng, &mut dl);
            let m: f64 = weights.iter().zip(&dl).map(|(w, d)| w * d).sum();
            (m, dl.iter().sum())
        })
        .collect())
}

/// Empirical characteristic function against a target.
#[derive(Debug, Clone, PartialEq)]
pub struct CfReport {
    pub thetas: Vec<f64>,
    pub empirical: Vec<Complex<f64>>,
    pub target: Vec<Complex<f64>>,
    pub mc_halfwidth: f64,
}

impl CfReport {
    /// Sets the target to `f(θ)` at every `θ`.
    pub fn with_target(mut self, f: impl Fn(f64) -> Complex<f64>) -> Self {
        self.target = self.thetas.iter().map(|&t| f(t)).collect();
        self
    }

    /// Largest modulus of `empirical - target`.
    pub fn max_deviation(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.target)
            .map(|(e, t)| (e - t).norm())
            .fold(0.0, f64::max)
    }

    pub fn deviations(&self) -> Vec<f64> {
        self.empirical
            .iter()
            .zip(&self.target)
            .map(|(e, t)| (e - t).norm())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "theta,re_emp,im_emp,re_target,im_target,halfwidth")?;
        for (k, th) in self.thetas.iter().enumerate() {
            let e = self.empirical[k];
            let t = self.target.get(k).copied().unwrap_or_default();
            writeln!(
                out,
                "{th},{},{},{},{},{}",
                e.re, e.im, t.re, t.im, self.mc_halfwidth
            )?;
        }
        Ok(())
    }
}

/// `(1/N) Σ exp(iθ x_k)` at each `θ`, with half-width `3/√N`. The target is
/// initialised to zero; see [`CfReport::with_target`].
pub fn empirical_cf(samples: &[f64], thetas: &[f64]) -> Result<CfReport> {
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    let n = samples.len() as f64;
    let empirical = thetas
        .iter()
        .map(|&th| {
            let (re, im) = samples
                .iter()
                .fold((0.0, 0.0), |(re, im), &x| (re + (th * x).cos(), im + (th * x).sin()));
            Complex::new(re / n, im / n)
        })
        .collect();
    Ok(CfReport {
        thetas: thetas.to_vec(),
        empirical,
        target: vec![Complex::new(0.0, 0.0); thetas.len()],
        mc_halfwidth: 3.0 / n.sqrt(),
    })
}

/// Quadrature used for the cell integrals `ζ_{n,i} = ∫_{t_i}^{t_{i+1}} (Z_s - Z_{t_i}) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ZetaRule {
    LeftEndpoint,
    #[default]
    Trapezoid,
}

/// `S_n` on the coarse grid, `S_n(t_k) = Σ_{i ≤ k} ζ_{n,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnResult {
    pub value: f64,
    pub path: GridPath,
}

/// `S_n(t) = Σ_{i ≤ ⌊t/Δ⌋} ζ_{n,i}` from `Z` on a grid of step `δ` with `Δ/δ ≥ 8`.
///
/// `Z` must extend to `(⌊t/Δ⌋ + 1) Δ`. The returned path holds `S_n(t_k)`
/// for every coarse index whose cell is covered by `Z`.
pub fn s_n_statistic(z_fine: &GridPath, dt_coarse: f64, t: f64, rule: ZetaRule) -> Result<SnResult> {
    let delta = z_fine.dt();
    let ratio = as_count(dt_coarse / delta)
        .ok_or_else(|| grid(format!("fine step {delta} does not divide {dt_coarse}")))?;
    if ratio < 8 {
        return Err(Error::Resolution(format!(
            "cell integrals need at least 8 fine steps per coarse step, got {ratio}"
        )));
    }
    if z_fine.t0().abs() > 1e-12 {
        return Err(grid("noise path must start at time 0"));
    }
    let zv = z_fine.values();
    let cells = z_fine.steps() / ratio;
    let last = crate::delay::grid_floor(t / dt_coarse);
    if last >= cells {
        return Err(grid(format!(
            "S_n({t}) needs the noise up to {}, path ends at {}",
            (last + 1) as f64 * dt_coarse,
            z_fine.t_end()
        )));
    }
    let mut acc = 0.0;
    let mut path = Vec::with_capacity(cells);
    for i in 0..cells {
        let base = zv[i * ratio];
        let cell = &zv[i * ratio..=(i + 1) * ratio];
        let zeta = match rule {
            ZetaRule::LeftEndpoint => {
                delta * cell[..ratio].iter().map(|z| z - base).sum::<f64>()
            }
            ZetaRule::Trapezoid => {
                let inner: f64 = cell[1..ratio].iter().map(|z| z - base).sum();
                delta * (inner + 0.5 * (cell[ratio] - base))
            }
        };
        acc += zeta;
        path.push(acc);
    }
    let value = path[last];
    Ok(SnResult {
        value,
        path: GridPath::new(0.0, dt_coarse, path)?,
    })
}

/// Least-squares fit of `log error = intercept + slope * log Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// Monte Carlo standard errors of the fitted means, when known.
    pub point_stderr: Option<Vec<f64>>,
}

impl RateFit {
    pub fn predict(&self, dt: f64) -> f64 {
        (self.intercept + self.slope * dt.ln()).exp()
    }
}

/// Ordinary least squares on `(log Δ, log error)`; at least three points, all errors positive.
pub fn rate_fit(dts: &[f64], errors: &[f64]) -> Result<RateFit> {
    if dts.len() != errors.len() || dts.len() < 3 {
        return Err(Error::Data("need at least three (step, error) pairs".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Data(format!("errors must be positive, got {e}")));
    }
    if dts.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Data("steps must be positive".into()));
    }
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, intercept, residuals, slope_stderr, r_squared) = ols(&x, &y);
    Ok(RateFit {
        dts: dts.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept,
        residuals,
        slope_stderr,
        r_squared,
        point_stderr: None,
    })
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64, Vec<f64>, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let stderr = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, intercept, residuals, stderr, r2)
}

/// Scaled increment moments of `S_n` against the gap between grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub p: f64,
    /// `(gap, ϖ_n^{-p} E|S_n(jΔ) - S_n(iΔ)|^p)` with `gap = j - i`.
    pub rows: Vec<(usize, f64)>,
    /// Fitted exponent of the moment in `(j - i) Δ`.
    pub fitted_exponent: f64,
    /// `p (H ∨ 1/α)`.
    pub expected_exponent: f64,
    fit_intercept: f64,
    dt: f64,
}

impl MomentTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "gap,moment,fit")?;
        for &(gap, m) in &self.rows {
            let fit = if gap == 0 {
                0.0
            } else {
                (self.fit_intercept + self.fitted_exponent * (gap as f64 * self.dt).ln()).exp()
            };
            writeln!(out, "{gap},{m},{fit}")?;
        }
        Ok(())
    }
}

/// Monte Carlo moments `ϖ_n^{-p} E|S_n(jΔ) - S_n(iΔ)|^p` over the given `(i, j)` pairs,
/// averaged over the supplied noise paths, with the exponent fitted on positive gaps.
pub fn increment_moment_check(
    paths: &[GridPath],
    dt_coarse: f64,
    p: f64,
    pairs: &[(usize, usize)],
    rate: &RateSpec,
    rule: ZetaRule,
) -> Result<MomentTable> {
    if !(p > 0.0) || (rate.alpha < 2.0 && p >= rate.alpha) {
        return Err(Error::Moment(format!(
            "moment order {p} must lie in (0, alpha = {})",
            rate.alpha
        )));
    }
    if paths.is_empty() {
        return Err(Error::Data("no noise paths".into()));
    }
    let varpi = rate.varpi(dt_coarse);
    let mut gaps: Vec<usize> = pairs.iter().map(|&(i, j)| j.abs_diff(i)).collect();
    gaps.sort_unstable();
    gaps.dedup();
    let mut sums = vec![(0.0, 0usize); gaps.len()];
    for z in paths {
        let sn = s_n_statistic(z, dt_coarse, 0.0, rule)?.path;
        let sv = sn.values();
        for &(i, j) in pairs {
            if i.max(j) >= sv.len() {
                return Err(grid(format!("pair ({i}, {j}) beyond the noise horizon")));
            }
            let k = gaps.binary_search(&j.abs_diff(i)).expect("gap listed");
            sums[k].0 += ((sv[j] - sv[i]) / varpi).abs().powf(p);
            sums[k].1 += 1;
        }
    }
    let rows: Vec<(usize, f64)> = gaps
        .iter()
        .zip(&sums)
        .map(|(&g, &(s, c))| (g, s / c as f64))
        .collect();
    let fit_rows: Vec<&(usize, f64)> = rows.iter().filter(|r| r.0 > 0 && r.1 > 0.0).collect();
    let (fitted, intercept) = if fit_rows.len() >= 2 {
        let x: Vec<f64> = fit_rows.iter().map(|r| (r.0 as f64 * dt_coarse).ln()).collect();
        let y: Vec<f64> = fit_rows.iter().map(|r| r.1.ln()).collect();
        let (s, i, ..) = ols(&x, &y);
        (s, i)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MomentTable {
        p,
        rows,
        fitted_exponent: fitted,
        expected_exponent: p * rate.hurst.max(1.0 / rate.alpha),
        fit_intercept: intercept,
        dt: dt_coarse,
    })
}

/// Kolmogorov–Smirnov statistic with its asymptotic 1% critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_1pct: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Two-sample KS test; the critical value is `1.628 √((n+m)/(nm))`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("both samples must be non-empty".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(KsResult {
        statistic: d,
        critical_1pct: 1.628 * ((nf + mf) / (nf * mf)).sqrt(),
    })
}

/// One-sample KS distance to a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    Ok(x.iter().enumerate().fold(0.0f64, |d, (k, &v)| {
        let f = cdf(v);
        d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varpi_matches_regime() {
        let r = RateSpec::new(0.3, 2.0).unwrap();
        assert_eq!(r.regime, Regime::Rough);
        assert!((r.varpi(0.25) - 0.25f64.powf(0.8)).abs() < 1e-15);
        let s = RateSpec::new(0.7, 2.0).unwrap();
        assert_eq!(s.varpi(0.25), 0.25);
        assert!(RateSpec::new(0.5, 2.0).is_err());
        assert!((RateSpec::new(0.4, 1.5).unwrap().rate() - (1.4 - 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn g_matches_hurwitz_zeta_values() {
        // -ζ(1/4, s), from an independent arbitrary-precision evaluation
        let k = GKernel::new(-0.25, 1e-12).unwrap();
        let cases = [
            (1.0, 0.8132784052618917),
            (0.25, -0.32620783666822095),
            (0.5, 0.15387806075361632),
        ];
        for (s, want) in cases {
            let got = g_eval(&k, s).unwrap();
            assert!((got - want).abs() < 1e-11, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn g_brute_force_series() {
        let beta: f64 = -0.25;
        let s: f64 = 1.0;
        let big = 10_000_000usize;
        let mut sum = s.powf(beta + 1.0) / (beta + 1.0);
        for m in 0..big {
            let x = m as f64 + s;
            sum += ((x + 1.0).powf(beta + 1.0) - x.powf(beta + 1.0)) / (beta + 1.0) - x.powf(beta);
        }
        // leading remainder of the series beyond the last explicit term
        sum += -0.5 * (big as f64 + s).powf(beta);
        let k = GKernel::new(beta, 1e-6).unwrap().with_truncation(1000);
        assert!((g_eval(&k, s).unwrap() - sum).abs() < 1e-6);
    }

    #[test]
    fn g_near_zero_exponent_tends_to_s_minus_half() {
        let k = GKernel::new(-1e-6, 1e-12).unwrap();
        for s in [0.25, 0.5, 1.0] {
            let g = g_eval(&k, s).unwrap();
            assert!((g - (s - 0.5)).abs() < 1e-4, "s={s}: {g}");
        }
    }

    #[test]
    fn g_terms_obey_monotone_bound() {
        let beta = -0.3;
        for s in [0.1, 0.5, 1.0] {
            for m in 1..200 {
                let x = m as f64 + s;
                let t = g_term(beta, x);
                assert!(t.abs() <= x.powf(beta) - (x + 1.0).powf(beta) + 1e-15);
            }
        }
    }

    #[test]
    fn g_series_branch_is_continuous() {
        for beta in [-0.1f64, -0.4, -0.6] {
            for x in [10.0f64, 13.5, 40.0] {
                let direct = ((x + 1.0).powf(beta + 1.0) - x.powf(beta + 1.0)) / (beta + 1.0)
                    - x.powf(beta);
                let series = g_term(beta, x);
                assert!((direct - series).abs() < 1e-11 * series.abs(), "{beta} {x}");
            }
        }
    }

    #[test]
    fn g_diverges_like_minus_s_beta_near_zero() {
        let k = GKernel::new(-0.3, 1e-12).unwrap();
        for e in 4..14 {
            let s = 10f64.powi(-e);
            let g = g_eval(&k, s).unwrap();
            assert!(g < 0.0);
            let ratio = g * s.powf(0.3);
            assert!(ratio > -1.2 && ratio < -0.8, "s={s}: {ratio}");
        }
        assert!(g_eval(&k, 0.0).is_err());
        assert!(g_eval(&k, 1.5).is_err());
    }

    #[test]
    fn m_scale_reference_values() {
        let unit2 = StableParams::new(2.0, 1.0).unwrap();
        let k = GKernel::new(-0.2, 1e-12).unwrap();
        let v = m_scale(&k, &unit2).unwrap();
        assert!((v - 0.5721707268550682).abs() < 1e-8, "{v}");
        let unit15 = StableParams::new(1.5, 1.0).unwrap();
        let k15 = GKernel::new(0.4 - 1.0 / 1.5, 1e-12).unwrap();
        let w = m_scale(&k15, &unit15).unwrap();
        assert!((w - 0.6381791065713232).abs() < 1e-8, "{w}");
    }

    #[test]
    fn m_scale_agrees_with_tanh_sinh_and_refinement() {
        use crate::quad::tanh_sinh;
        for (alpha, beta) in [(2.0, -0.2), (1.5, -0.2667), (1.8, -0.45)] {
            let st = StableParams::new(alpha, 1.0).unwrap();
            let k = GKernel::new(beta, 1e-13).unwrap();
            let graded = m_scale(&k, &st).unwrap();
            let levels = graded_levels(alpha * beta);
            let fine = m_scale_with_mesh(&k, &st, 0.5, 2 * levels, 40).unwrap();
            assert!((graded - fine).abs() < 1e-5 * fine, "{alpha} {beta}: {graded} vs {fine}");
            let ts = tanh_sinh(|s| g_eval(&k, s).unwrap().abs().powf(alpha), 0.0, 1.0, 1e-12)
                .powf(1.0 / alpha);
            assert!((graded - ts).abs() < 1e-6 * ts, "{graded} vs {ts}");
        }
    }

    #[test]
    fn m_scale_limits_and_homogeneity() {
        for alpha in [1.5, 2.0] {
            let k = GKernel::new(-1e-7, 1e-13).unwrap();
            let v = m_scale(&k, &StableParams::new(alpha, 1.0).unwrap()).unwrap();
            let limit = (1.0 / (2f64.powf(alpha) * (alpha + 1.0))).powf(1.0 / alpha);
            assert!((v - limit).abs() < 1e-4, "alpha={alpha}: {v} vs {limit}");
        }
        let k = GKernel::new(-0.3, 1e-12).unwrap();
        let a = m_scale(&k, &StableParams::new(1.7, 1.0).unwrap()).unwrap();
        let b = m_scale(&k, &StableParams::new(1.7, 2.0).unwrap()).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
    }

    #[test]
    fn limit_noise_trivial_cases() {
        let d0 = DelayMeasure::dirac(1.0, 0.0).unwrap();
        let (m, n) = limit_noise_from_scale(0.6, 1.5, &d0, 2.0, 0.125, SeededStream::new(1, 1))
            .unwrap();
        assert_eq!(m, n);
        let zero = GridPath::zeros(0.0, 0.125, 16).unwrap();
        let d1 = DelayMeasure::new(1.0, vec![(1.0, 1.0)], vec![(0.0, 1.0, -0.3)]).unwrap();
        assert!(delay_average(&zero, &d1).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empirical_cf_examples() {
        let zeros = vec![0.0; 10];
        let r = empirical_cf(&zeros, &[0.5, 1.0]).unwrap();
        assert!(r.empirical.iter().all(|c| (c.re - 1.0).abs() < 1e-15 && c.im == 0.0));
        let pm = vec![1.0, -1.0, 1.0, -1.0];
        let r = empirical_cf(&pm, &[0.3, 2.0]).unwrap();
        for (c, th) in r.empirical.iter().zip([0.3f64, 2.0]) {
            assert!((c.re - th.cos()).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
        assert_eq!(r.mc_halfwidth, 1.5);
        assert!(empirical_cf(&[], &[1.0]).is_err());
    }

    #[test]
    fn s_n_of_linear_and_constant_paths() {
        let delta = 1.0 / 256.0;
        let z = GridPath::from_fn(0.0, delta, 256, |t| t).unwrap();
        let big = 1.0 / 16.0;
        let left = s_n_statistic(&z, big, 0.0, ZetaRule::LeftEndpoint).unwrap();
        assert!((left.value - (big * big / 2.0 - big * delta / 2.0)).abs() < 1e-15);
        let trap = s_n_statistic(&z, big, 0.0, ZetaRule::Trapezoid).unwrap();
        assert!((trap.value - big * big / 2.0).abs() < 1e-15);
        let c = GridPath::new(0.0, delta, vec![3.0; 257]).unwrap();
        let s = s_n_statistic(&c, big, 0.5, ZetaRule::Trapezoid).unwrap();
        assert!(s.path.values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            s_n_statistic(&z, 4.0 * delta, 0.0, ZetaRule::Trapezoid),
            Err(Error::Resolution(_))
        ));
        assert!(s_n_statistic(&z, big, 1.0, ZetaRule::Trapezoid).is_err());
    }

    #[test]
    fn nonrough_scaling_of_deterministic_path() {
        // Δ^{-1} S_n(t) → t/2 for Z_t = t
        let delta = 1.0 / 8192.0;
        let z = GridPath::from_fn(0.0, delta, 8192 * 2, |t| t).unwrap();
        let mut prev = f64::INFINITY;
        for n in [64usize, 128, 256, 512, 1024] {
            let big = 1.0 / n as f64;
            let s = s_n_statistic(&z, big, 1.0, ZetaRule::Trapezoid).unwrap().value / big;
            let t_g = (1.0 / big + 1.0) * big;
            assert!((s - t_g / 2.0).abs() < 1e-10);
            let err = (s - 0.5).abs();
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn rate_fit_examples() {
        let dts: Vec<f64> = [16.0, 32.0, 64.0, 128.0].iter().map(|n| 1.0 / n).collect();
        let exact: Vec<f64> = dts.iter().map(|d| 3.0 * d).collect();
        let f = rate_fit(&dts, &exact).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        let e8: Vec<f64> = dts.iter().map(|d| 0.5 * d.powf(0.8)).collect();
        assert!((rate_fit(&dts, &e8).unwrap().slope - 0.8).abs() < 1e-12);
        assert!(rate_fit(&dts[..2], &exact[..2]).is_err());
        assert!(rate_fit(&dts, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn ks_detects_shift_and_accepts_equal_samples() {
        let a: Vec<f64> = (0..1000).map(|k| k as f64 / 1000.0).collect();
        let same = ks_two_sample(&a, &a).unwrap();
        assert_eq!(same.statistic, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let shifted = ks_two_sample(&a, &b).unwrap();
        assert!((shifted.statistic - 0.3).abs() < 2e-3);
        assert!(!shifted.passes());
        let d = ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d <= 1e-3 + 1e-12);
    }

    #[test]
    fn moment_check_validates_order() {
        let r = RateSpec::new(0.4, 1.5).unwrap();
        let z = GridPath::zeros(0.0, 1.0 / 64.0, 64).unwrap();
        assert!(matches!(
            increment_moment_check(&[z.clone()], 1.0 / 8.0, 1.5, &[(0, 1)], &r, ZetaRule::Trapezoid),
            Err(Error::Moment(_))
        ));
        let g = RateSpec::new(0.7, 2.0).unwrap();
        let t = increment_moment_check(&[z], 1.0 / 8.0, 3.0, &[(0, 0), (0, 1)], &g, ZetaRule::Trapezoid)
            .unwrap();
        assert_eq!(t.rows[0], (0, 0.0));
    }
}
