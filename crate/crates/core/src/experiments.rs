//! Coupled Monte Carlo studies.
//!
//! Every replication draws one noise realisation on the reference grid and
//! drives the reference and all coarse schemes with it, so errors are formed
//! pathwise. Replications run on the rayon pool and are gathered in index
//! order before any aggregation, which makes reports independent of the
//! number of workers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{as_count, Error, Result};
use crate::grid::GridPath;
use crate::lfsm::{default_past_window, LfsmParams, LfsmSimulator, NoiseRealization};
use crate::limits::{
    empirical_cf, ks_two_sample, limit_noise_from_scale, m_scale, rate_fit,
    s_n_statistic, CfReport, GKernel, KsResult, RateFit, RateSpec, Regime, ZetaRule,
};
use crate::resolvent::{
    bias_at, bias_integrand, coefficient_path, limit_solution_at, limit_solution_euler, phi_solve,
    s_derivative, ResolventGrid,
};
use crate::sdde::{error_process, euler_scheme, reference_solution, SddeSpec};
use crate::stable_noise::SeededStream;

/// Largest Monte Carlo standard error, relative to the mean, accepted for a fitted point.
pub const MAX_RELATIVE_STDERR: f64 = 0.2;
/// Slope tolerance for Gaussian noise.
pub const GAUSSIAN_BAND: f64 = 0.15;
/// Slope tolerance for stable noise with `α < 2`.
pub const STABLE_BAND: f64 = 0.20;

const LIMIT_TAG: u64 = 0x4c49_4d49_54;

/// Parameters shared by all coupled studies.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub spec: SddeSpec,
    pub ns: Vec<usize>,
    pub n_ref: usize,
    pub mc_count: usize,
    /// Evaluation times; the first one is used for rate fits.
    pub t_eval: Vec<f64>,
    pub master_seed: u64,
    /// Length of the past window of the noise; defaults to ten horizons.
    pub past_window: Option<f64>,
    /// Worker threads; the global rayon pool when `None`.
    pub jobs: Option<usize>,
    pub outputs: Option<PathBuf>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.ns.is_empty() {
            return cfg("ns must not be empty".into());
        }
        if self.mc_count < 100 {
            return cfg(format!("mc_count must be at least 100, got {}", self.mc_count));
        }
        for &n in &self.ns {
            if n == 0 || self.n_ref % n != 0 {
                return cfg(format!("ns: {n} does not divide n_ref = {}", self.n_ref));
            }
            self.spec.steps(n).map_err(|e| Error::Config(format!("ns: {e}")))?;
        }
        let max_n = *self.ns.iter().max().expect("non-empty");
        if self.n_ref / max_n < 8 {
            return cfg(format!(
                "n_ref = {} must be at least 8 times the largest n = {max_n}",
                self.n_ref
            ));
        }
        if self.t_eval.is_empty() {
            return cfg("t_eval must not be empty".into());
        }
        let tau = self.spec.tau();
        for &t in &self.t_eval {
            if !(t > 0.0 && t <= self.spec.t_end + 1e-12) {
                return cfg(format!("t_eval: {t} outside (0, {}]", self.spec.t_end));
            }
            let min_n = *self.ns.iter().min().expect("non-empty");
            if as_count(t * min_n as f64 / tau).is_none() {
                return cfg(format!("t_eval: {t} is not on the grid of n = {min_n}"));
            }
        }
        Ok(())
    }

    fn past_window(&self) -> f64 {
        self.past_window
            .unwrap_or_else(|| default_past_window(self.spec.t_end))
    }

    fn simulator(&self) -> Result<LfsmSimulator> {
        let dt = self.spec.tau() / self.n_ref as f64;
        LfsmSimulator::new(self.spec.noise, self.spec.t_end, dt, self.past_window())
    }

    fn rate(&self) -> Result<RateSpec> {
        RateSpec::new(self.spec.noise.hurst(), self.spec.noise.alpha())
    }

    fn band(&self) -> f64 {
        if self.spec.noise.stable().is_gaussian() {
            GAUSSIAN_BAND
        } else {
            STABLE_BAND
        }
    }
}

/// Runs `f` on a dedicated pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("cannot start {j} workers: {e}"))),
        None => Ok(f()),
    }
}

/// Draws replications `0..count` in pairs, one transform per pair, and maps
/// each `(index, increments, Z)` through `f`. Results come back in index order.
fn replicate<T: Send>(
    sim: &LfsmSimulator,
    seed: u64,
    count: usize,
    f: impl Fn(usize, &NoiseRealization, &GridPath) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let pairs: Vec<Vec<T>> = (0..count.div_ceil(2))
        .into_par_iter()
        .map(|p| {
            let i = 2 * p;
            let a = sim.draw(SeededStream::new(seed, i as u64));
            if i + 1 < count {
                let b = sim.draw(SeededStream::new(seed, i as u64 + 1));
                let (za, zb) = sim.path_pair(&a, &b)?;
                Ok(vec![f(i, &a, &za)?, f(i + 1, &b, &zb)?])
            } else {
                let za = sim.path(&a)?;
                Ok(vec![f(i, &a, &za)?])
            }
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

fn mean_and_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Outcome of the slope comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Pass,
    Fail,
    /// Some point had a standard error above [`MAX_RELATIVE_STDERR`] of its mean.
    InsufficientMc,
}

/// Per-step error table with its rate fit.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    pub dts: Vec<f64>,
    pub t_eval: Vec<f64>,
    /// `mean_abs[k][e]` estimates `E|U^{n_k}_{t_e}|`.
    pub mean_abs: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// `E sup_k |U^n_{t_k}|` over the coarse grid.
    pub mean_sup: Vec<f64>,
    pub fit: Option<RateFit>,
    pub target_rate: f64,
    pub tolerance: f64,
    pub status: FitStatus,
    pub mc_count: usize,
    pub master_seed: u64,
}

impl ConvergenceReport {
    fn finish(mut self) -> Self {
        let col: Vec<f64> = self.mean_abs.iter().map(|r| r[0]).collect();
        let se: Vec<f64> = self.stderr.iter().map(|r| r[0]).collect();
        if col.iter().zip(&se).any(|(m, s)| *s > MAX_RELATIVE_STDERR * m) {
            self.status = FitStatus::InsufficientMc;
            return self;
        }
        match rate_fit(&self.dts, &col) {
            Ok(mut fit) => {
                fit.point_stderr = Some(se);
                self.status = if (fit.slope - self.target_rate).abs() <= self.tolerance {
                    FitStatus::Pass
                } else {
                    FitStatus::Fail
                };
                self.fit = Some(fit);
            }
            Err(_) => self.status = FitStatus::InsufficientMc,
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == FitStatus::Pass
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }

    /// `PASS rate=<slope> target=<rate> band=±<tol>` or the matching failure line.
    pub fn summary_line(&self) -> String {
        match (&self.status, &self.fit) {
            (FitStatus::InsufficientMc, _) | (_, None) => format!(
                "FAIL insufficient mc_count={} (standard error above {:.0}% of a mean) target={:.4}",
                self.mc_count,
                100.0 * MAX_RELATIVE_STDERR,
                self.target_rate
            ),
            (status, Some(fit)) => format!(
                "{} rate={:.4} target={:.4} band=±{:.2}",
                if *status == FitStatus::Pass { "PASS" } else { "FAIL" },
                fit.slope,
                self.target_rate,
                self.tolerance
            ),
        }
    }

    pub fn write_report_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,dt,t,mean_abs_error,stderr,mean_sup_error")?;
        for (k, n) in self.ns.iter().enumerate() {
            for (e, t) in self.t_eval.iter().enumerate() {
                writeln!(
                    out,
                    "{n},{},{t},{},{},{}",
                    self.dts[k], self.mean_abs[k][e], self.stderr[k][e], self.mean_sup[k]
                )?;
            }
        }
        Ok(())
    }

    pub fn write_fit_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,dt,log_dt,log_error,fitted,residual")?;
        if let Some(fit) = &self.fit {
            for (k, n) in self.ns.iter().enumerate() {
                let x = fit.dts[k].ln();
                let y = fit.errors[k].ln();
                let yhat = fit.intercept + fit.slope * x;
                writeln!(out, "{n},{},{x},{y},{yhat},{}", fit.dts[k], y - yhat)?;
            }
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.summary_line())?;
        writeln!(out, "mc_count={} seed={}", self.mc_count, self.master_seed)?;
        if let Some(fit) = &self.fit {
            writeln!(
                out,
                "intercept={:.6} slope_stderr={:.4} r_squared={:.6}",
                fit.intercept, fit.slope_stderr, fit.r_squared
            )?;
        }
        Ok(())
    }

    /// Writes `report.csv`, `fit.csv` and `summary.txt` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        self.write_report_csv(BufWriter::new(fs::File::create(dir.join("report.csv"))?))?;
        self.write_fit_csv(BufWriter::new(fs::File::create(dir.join("fit.csv"))?))?;
        self.write_summary(BufWriter::new(fs::File::create(dir.join("summary.txt"))?))
    }
}

/// Checks that the fitting pipeline recovers a planted rate before real data is fitted.
pub fn harness_self_test() -> Result<RateFit> {
    let ns = [16, 32, 64, 128, 256];
    let report = synthetic_study(&ns, 1.0, 0.8, 2000, 0x5e1f_7e57)?;
    let fit = report
        .fit
        .ok_or_else(|| Error::Data("self-test produced no fit".into()))?;
    if (fit.slope - 0.8).abs() > 0.05 {
        return Err(Error::Data(format!(
            "fitting harness recovered slope {} for planted rate 0.8",
            fit.slope
        )));
    }
    Ok(fit)
}

/// A report built from planted errors `Δ_n^rate |ξ|` with standard normal `ξ`.
pub fn synthetic_study(
    ns: &[usize],
    tau: f64,
    rate: f64,
    mc_count: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if ns.len() < 3 || mc_count < 2 {
        return Err(Error::Config("synthetic study needs three levels and two draws".into()));
    }
    let dts: Vec<f64> = ns.iter().map(|&n| tau / n as f64).collect();
    let mut mean_abs = Vec::new();
    let mut stderr = Vec::new();
    for (k, dt) in dts.iter().enumerate() {
        let mut rng = SeededStream::new(seed, k as u64).rng();
        let draws: Vec<f64> = (0..mc_count)
            .map(|_| dt.powf(rate) * rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let (m, s) = mean_and_stderr(draws.iter().copied());
        mean_abs.push(vec![m]);
        stderr.push(vec![s]);
    }
    Ok(ConvergenceReport {
        ns: ns.to_vec(),
        mean_sup: mean_abs.iter().map(|r| r[0]).collect(),
        dts,
        t_eval: vec![tau],
        mean_abs,
        stderr,
        fit: None,
        target_rate: rate,
        tolerance: 0.05,
        status: FitStatus::Fail,
        mc_count,
        master_seed: seed,
    }
    .finish())
}

/// `E|U^n_t|` for every `n` against the fine reference, with a slope fit against
/// the rate of the noise regime.
pub fn convergence_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    harness_self_test()?;
    if config.spec.drift.is_constant() {
        return Err(Error::Data(
            "scheme exact: a constant drift leaves no discretisation error to fit".into(),
        ));
    }
    let rate = config.rate()?;
    let sim = config.simulator()?;
    let spec = &config.spec;
    let tau = spec.tau();
    let outcomes = with_jobs(config.jobs, || {
        replicate(&sim, config.master_seed, config.mc_count, |i, _, z| {
            let noise_ref = SeededStream::new(config.master_seed, i as u64).into();
            let reference = reference_solution(spec, config.n_ref, z, noise_ref)?;
            config
                .ns
                .iter()
                .map(|&n| {
                    let scheme = euler_scheme(spec, n, z, noise_ref)?;
                    let u = error_process(&reference, &scheme)?;
                    let at: Vec<f64> = config
                        .t_eval
                        .iter()
                        .map(|&t| u.at(t).map(f64::abs))
                        .collect::<Result<_>>()?;
                    Ok((at, u.max_abs()))
                })
                .collect::<Result<Vec<_>>>()
        })
    })??;
    let mut mean_abs = Vec::new();
    let mut stderr = Vec::new();
    let mut mean_sup = Vec::new();
    for k in 0..config.ns.len() {
        let mut row_m = Vec::new();
        let mut row_s = Vec::new();
        for e in 0..config.t_eval.len() {
            let (m, s) = mean_and_stderr(outcomes.iter().map(|o| o[k].0[e]));
            row_m.push(m);
            row_s.push(s);
        }
        mean_abs.push(row_m);
        stderr.push(row_s);
        mean_sup.push(outcomes.iter().map(|o| o[k].1).sum::<f64>() / outcomes.len() as f64);
    }
    if mean_abs.iter().flatten().all(|&m| m == 0.0) {
        return Err(Error::Data("scheme exact: every error mean is zero".into()));
    }
    let report = ConvergenceReport {
        ns: config.ns.clone(),
        dts: config.ns.iter().map(|&n| tau / n as f64).collect(),
        t_eval: config.t_eval.clone(),
        mean_abs,
        stderr,
        mean_sup,
        fit: None,
        target_rate: rate.rate(),
        tolerance: config.band(),
        status: FitStatus::Fail,
        mc_count: config.mc_count,
        master_seed: config.master_seed,
    }
    .finish();
    if let Some(dir) = &config.outputs {
        report
            .write_outputs(dir)
            .map_err(|e| Error::Config(format!("cannot write outputs: {e}")))?;
    }
    Ok(report)
}

/// Pathwise check of the first-order expansion `Δ_n^{-1}(U^n - V^n) → U(N)`.
#[derive(Debug, Clone)]
pub struct PathwiseLimitReport {
    pub ns: Vec<usize>,
    pub t: f64,
    /// `E|Δ_n^{-1}(U^n_t - V^n_t) - U(N)_t|` per `n`.
    pub mean_abs_diff: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Value at the largest `n` over the value at the `n` eight times smaller (or the smallest `n`).
    pub ratio: f64,
    pub monotone: bool,
    pub passed: bool,
}

impl PathwiseLimitReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{} ratio={:.4} threshold=0.5 monotone={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.ratio,
            self.monotone
        )
    }

    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("report.csv"))?);
        writeln!(out, "n,t,mean_abs_diff,stderr")?;
        for (k, n) in self.ns.iter().enumerate() {
            writeln!(out, "{n},{},{},{}", self.t, self.mean_abs_diff[k], self.stderr[k])?;
        }
        fs::write(dir.join("summary.txt"), self.summary_line() + "\n")
    }
}

/// Linear-part quantities that only depend on the grid, shared by all replications.
struct LinearResolvent {
    r: ResolventGrid,
    dsr: crate::resolvent::SDerivative,
}

fn linear_resolvent(spec: &SddeSpec, dt: f64) -> Result<Option<LinearResolvent>> {
    let Some(c) = spec.drift.linear_slope() else {
        return Ok(None);
    };
    let phi = phi_solve(&spec.eta, c, spec.t_end, dt)?;
    let r = ResolventGrid::from_phi(&phi);
    let psi = GridPath::new(0.0, dt, vec![c; phi.values.len()])?;
    let dsr = s_derivative(&r, &psi, &spec.eta)?;
    Ok(Some(LinearResolvent { r, dsr }))
}

/// `N_{t_j} = ½ Σ_l w_l [b(X_{t_j - l δ}) - b(X_{-l δ})]` on the reference grid.
fn nonrough_limit_noise(spec: &SddeSpec, reference: &crate::sdde::SchemeResult) -> Result<GridPath> {
    let dt = reference.dt;
    let lags = spec.eta.lag_weights(dt)?;
    let xs = reference.path.values();
    let o = reference.origin();
    let steps = reference.drift.len();
    let b = &spec.drift;
    let values = (0..=steps)
        .map(|j| {
            0.5 * lags
                .iter()
                .map(|&(l, w)| w * (b.b(xs[o + j - l]) - b.b(xs[o - l])))
                .sum::<f64>()
        })
        .collect();
    GridPath::new(0.0, dt, values)
}

/// Non-rough regime: compares `Δ_n^{-1}(U^n_t - V^n_t)` with `U(N)_t`, both
/// built from the same reference path. Evaluated at the first entry of `t_eval`.
pub fn nonrough_limit_study(config: &StudyConfig) -> Result<PathwiseLimitReport> {
    config.validate()?;
    let rate = config.rate()?;
    if rate.regime != Regime::NonRough {
        return Err(Error::UnsupportedRegime(
            "the pathwise expansion needs H > 1/alpha".into(),
        ));
    }
    let spec = &config.spec;
    let sim = config.simulator()?;
    let dt_ref = sim.dt();
    let linear = linear_resolvent(spec, dt_ref)?;
    let t = config.t_eval[0];
    let it = as_count(t / dt_ref).expect("validated");
    let tau = spec.tau();
    let diffs = with_jobs(config.jobs, || {
        replicate(&sim, config.master_seed, config.mc_count, |i, _, z| {
            let noise_ref = SeededStream::new(config.master_seed, i as u64).into();
            let reference = reference_solution(spec, config.n_ref, z, noise_ref)?;
            let n_path = nonrough_limit_noise(spec, &reference)?;
            let (limit, psi) = match &linear {
                Some(lr) => (limit_solution_at(&n_path, &lr.dsr, it), None),
                None => {
                    let psi = coefficient_path(spec, &reference);
                    let u = limit_solution_euler(&n_path, &psi, &spec.eta)?;
                    (u.values()[it], Some(psi))
                }
            };
            config
                .ns
                .iter()
                .map(|&n| {
                    let scheme = euler_scheme(spec, n, z, noise_ref)?;
                    let u = error_process(&reference, &scheme)?.at(t)?;
                    let g = bias_integrand(spec, &reference, n)?;
                    let v = match (&linear, &psi) {
                        (Some(lr), _) => bias_at(&lr.r, &g, it),
                        (None, Some(psi)) => {
                            let mut acc = 0.0;
                            let forcing: Vec<f64> = std::iter::once(0.0)
                                .chain(g[..g.len() - 1].iter().map(|x| {
                                    acc += dt_ref * x;
                                    acc
                                }))
                                .collect();
                            let fp = GridPath::new(0.0, dt_ref, forcing)?;
                            limit_solution_euler(&fp, psi, &spec.eta)?.values()[it]
                        }
                        (None, None) => unreachable!("coefficient path computed above"),
                    };
                    let dt = tau / n as f64;
                    Ok(((u - v) / dt - limit * (1.0 - n as f64 / config.n_ref as f64)).abs())
                })
                .collect::<Result<Vec<f64>>>()
        })
    })??;
    let mut mean_abs_diff = Vec::new();
    let mut stderr = Vec::new();
    for k in 0..config.ns.len() {
        let (m, s) = mean_and_stderr(diffs.iter().map(|d| d[k]));
        mean_abs_diff.push(m);
        stderr.push(s);
    }
    let last = config.ns.len() - 1;
    let n_max = config.ns[last];
    let base = config
        .ns
        .iter()
        .position(|&n| n * 8 == n_max)
        .unwrap_or(0);
    let ratio = mean_abs_diff[last] / mean_abs_diff[base];
    let monotone = mean_abs_diff.windows(2).all(|w| w[1] < w[0]);
    let report = PathwiseLimitReport {
        ns: config.ns.clone(),
        t,
        passed: ratio < 0.5 || mean_abs_diff.iter().all(|&m| m == 0.0),
        mean_abs_diff,
        stderr,
        ratio,
        monotone,
    };
    if let Some(dir) = &config.outputs {
        report
            .write_outputs(dir)
            .map_err(|e| Error::Config(format!("cannot write outputs: {e}")))?;
    }
    Ok(report)
}

/// Law comparison of the rescaled error with an independent sample of the limit.
#[derive(Debug, Clone)]
pub struct DistributionReport {
    pub n: usize,
    pub t: f64,
    pub scheme_samples: Vec<f64>,
    pub limit_samples: Vec<f64>,
    pub cf: CfReport,
    /// `3 √(1/N_1 + 1/N_2)`, plus any quadrature allowance.
    pub cf_tolerance: f64,
    pub ks: KsResult,
    pub sigma_m: f64,
    pub passed: bool,
}

impl DistributionReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{} cf_distance={:.5} tolerance={:.5} ks={:.5} ks_critical={:.5} sigma_m={:.6}",
            if self.passed { "PASS" } else { "FAIL" },
            self.cf.max_deviation(),
            self.cf_tolerance,
            self.ks.statistic,
            self.ks.critical_1pct,
            self.sigma_m
        )
    }

    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        self.cf
            .write_csv(BufWriter::new(fs::File::create(dir.join("report.csv"))?))?;
        write_samples(&dir.join("samples_scheme.csv"), &self.scheme_samples)?;
        if !self.limit_samples.is_empty() {
            write_samples(&dir.join("samples_limit.csv"), &self.limit_samples)?;
        }
        fs::write(dir.join("summary.txt"), self.summary_line() + "\n")
    }
}

fn write_samples(path: &Path, xs: &[f64]) -> std::io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "value")?;
    for x in xs {
        writeln!(out, "{x}")?;
    }
    out.flush()
}

/// Draws of `U(N)_t` for the rough linear limit on the grid of step `dt`.
pub fn rough_limit_samples(
    spec: &SddeSpec,
    sigma_m: f64,
    dt: f64,
    t: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let lr = linear_resolvent(spec, dt)?.ok_or_else(|| {
        Error::Unsupported("the rough limit is only available for linear drift".into())
    })?;
    let it = as_count(t / dt).ok_or_else(|| Error::Config(format!("t = {t} is off the grid")))?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let stream = SeededStream::new(seed, i as u64).substream(LIMIT_TAG);
            let (_, n) = limit_noise_from_scale(
                sigma_m,
                spec.noise.alpha(),
                &spec.eta,
                spec.t_end,
                dt,
                stream,
            )?;
            Ok(limit_solution_at(&n, &lr.dsr, it))
        })
        .collect()
}

/// Rough regime: `ϖ_n^{-1} U^n_t` at the largest `n` against independent
/// draws of `U(N)_t`, by characteristic function and two-sample KS.
pub fn rough_limit_study(config: &StudyConfig) -> Result<DistributionReport> {
    config.validate()?;
    let rate = config.rate()?;
    if rate.regime != Regime::Rough {
        return Err(Error::UnsupportedRegime("the stable limit needs H < 1/alpha".into()));
    }
    let spec = &config.spec;
    if spec.drift.linear_slope().is_none() {
        return Err(Error::Unsupported(
            "the rough limit is only established for linear drift".into(),
        ));
    }
    let n = *config.ns.iter().max().expect("validated");
    let t = config.t_eval[0];
    let dt = spec.tau() / n as f64;
    let varpi = rate.varpi(dt);
    let sim = config.simulator()?;
    let kernel = GKernel::for_params(&rate)?;
    let sigma_m = m_scale(&kernel, spec.noise.stable())?;
    let (scheme_samples, limit_samples) = with_jobs(config.jobs, || -> Result<_> {
        let s = replicate(&sim, config.master_seed, config.mc_count, |i, _, z| {
            let noise_ref = SeededStream::new(config.master_seed, i as u64).into();
            let reference = reference_solution(spec, config.n_ref, z, noise_ref)?;
            let scheme = euler_scheme(spec, n, z, noise_ref)?;
            Ok(error_process(&reference, &scheme)?.at(t)? / varpi)
        })?;
        let l = rough_limit_samples(spec, sigma_m, sim.dt(), t, config.mc_count, config.master_seed)?;
        Ok((s, l))
    })??;
    let report = compare_samples(n, t, scheme_samples, limit_samples, sigma_m)?;
    if let Some(dir) = &config.outputs {
        report
            .write_outputs(dir)
            .map_err(|e| Error::Config(format!("cannot write outputs: {e}")))?;
    }
    Ok(report)
}

fn compare_samples(
    n: usize,
    t: f64,
    scheme_samples: Vec<f64>,
    limit_samples: Vec<f64>,
    sigma_m: f64,
) -> Result<DistributionReport> {
    let thetas = [0.5, 1.0, 2.0];
    let target = empirical_cf(&limit_samples, &thetas)?;
    let cf = empirical_cf(&scheme_samples, &thetas)?;
    let cf = CfReport {
        target: target.empirical,
        ..cf
    };
    let (n1, n2) = (scheme_samples.len() as f64, limit_samples.len() as f64);
    let cf_tolerance = 3.0 * (1.0 / n1 + 1.0 / n2).sqrt();
    let ks = ks_two_sample(&scheme_samples, &limit_samples)?;
    Ok(DistributionReport {
        n,
        t,
        passed: cf.max_deviation() <= cf_tolerance,
        scheme_samples,
        limit_samples,
        cf,
        cf_tolerance,
        ks,
        sigma_m,
    })
}

/// Settings for the `S_n` study.
#[derive(Debug, Clone)]
pub struct SnConfig {
    pub noise: LfsmParams,
    /// Coarse steps are `Δ_n = tau / n`.
    pub tau: f64,
    pub ns: Vec<usize>,
    /// Fine noise steps per coarse step at the largest `n`.
    pub fine_ratio: usize,
    pub t: f64,
    pub mc_count: usize,
    pub thetas: Vec<f64>,
    pub rule: ZetaRule,
    pub master_seed: u64,
    pub past_window: Option<f64>,
    pub jobs: Option<usize>,
    pub outputs: Option<PathBuf>,
}

impl SnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(Error::Config("ns must be non-empty and positive".into()));
        }
        if self.fine_ratio < 8 {
            return Err(Error::Config(format!(
                "fine_ratio must be at least 8, got {}",
                self.fine_ratio
            )));
        }
        if self.mc_count < 2 {
            return Err(Error::Config("mc_count must be at least 2".into()));
        }
        if !(self.t > 0.0 && self.tau > 0.0) {
            return Err(Error::Config("t and tau must be positive".into()));
        }
        let fine = self.fine_n();
        if self.ns.iter().any(|n| fine % n != 0) {
            return Err(Error::Config("every n must divide the largest n".into()));
        }
        Ok(())
    }

    fn fine_n(&self) -> usize {
        self.ns.iter().max().copied().unwrap_or(1) * self.fine_ratio
    }
}

/// Results of the `S_n` study; one of the two parts is filled depending on the regime.
#[derive(Debug, Clone)]
pub struct SnReport {
    pub regime: Regime,
    pub ns: Vec<usize>,
    /// Non-rough: `E|Δ_n^{-1} S_n(t) - Z_t/2|` per `n`, with standard errors.
    pub l1_errors: Vec<(f64, f64)>,
    pub decreasing: bool,
    /// Non-rough: value at the largest `n` over the value at the smallest.
    pub ratio: f64,
    /// Rough: empirical CF of `ϖ_n^{-1} S_n(t)` at the largest `n` against the stable target.
    pub cf: Option<CfReport>,
    pub cf_tolerance: f64,
    pub sigma_m: Option<f64>,
    pub samples: Vec<f64>,
    pub passed: bool,
}

impl SnReport {
    pub fn summary_line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match &self.cf {
            Some(cf) => format!(
                "{verdict} cf_distance={:.5} tolerance={:.5} sigma_m={:.6}",
                cf.max_deviation(),
                self.cf_tolerance,
                self.sigma_m.unwrap_or(f64::NAN)
            ),
            None => format!(
                "{verdict} decreasing={} ratio={:.4} threshold=0.4",
                self.decreasing, self.ratio
            ),
        }
    }

    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let file = BufWriter::new(fs::File::create(dir.join("report.csv"))?);
        match &self.cf {
            Some(cf) => cf.write_csv(file)?,
            None => {
                let mut out = file;
                writeln!(out, "n,mean_abs_error,stderr")?;
                for (n, (m, s)) in self.ns.iter().zip(&self.l1_errors) {
                    writeln!(out, "{n},{m},{s}")?;
                }
            }
        }
        write_samples(&dir.join("samples_sn.csv"), &self.samples)?;
        fs::write(dir.join("summary.txt"), self.summary_line() + "\n")
    }
}

/// Allowance added to the CF tolerance for the quadrature behind `σ_M`.
pub const CF_QUADRATURE_ALLOWANCE: f64 = 1e-3;

/// The statistic `S_n` on simulated noise: `L¹` convergence to `Z/2` in the
/// non-rough regime, convergence in law to `M` in the rough one.
pub fn sn_study(config: &SnConfig) -> Result<SnReport> {
    config.validate()?;
    let noise = config.noise;
    let rate = RateSpec::new(noise.hurst(), noise.alpha())?;
    let n_max = *config.ns.iter().max().expect("validated");
    let n_min = *config.ns.iter().min().expect("validated");
    let fine_n = config.fine_n();
    let delta = config.tau / fine_n as f64;
    // S_n(t) reads the noise over the whole cell that contains t
    let coarse_max = config.tau / n_min as f64;
    let cells = crate::delay::grid_floor(config.t / coarse_max) + 1;
    let horizon = cells as f64 * coarse_max;
    let past = config
        .past_window
        .unwrap_or_else(|| default_past_window(horizon));
    let past = (past / delta).round() * delta;
    let sim = LfsmSimulator::new(noise, horizon, delta, past)?;
    let t = config.t;
    let rule = config.rule;
    let rows = with_jobs(config.jobs, || {
        replicate(&sim, config.master_seed, config.mc_count, |_, _, z| {
            let zt = z.interp(t);
            config
                .ns
                .iter()
                .map(|&n| {
                    let dt = config.tau / n as f64;
                    let s = s_n_statistic(z, dt, t, rule)?.value;
                    Ok((s / rate.varpi(dt), zt))
                })
                .collect::<Result<Vec<_>>>()
        })
    })??;
    let k_max = config.ns.iter().position(|&n| n == n_max).expect("present");
    let samples: Vec<f64> = rows.iter().map(|r| r[k_max].0).collect();
    let report = match rate.regime {
        Regime::NonRough => {
            let l1_errors: Vec<(f64, f64)> = (0..config.ns.len())
                .map(|k| mean_and_stderr(rows.iter().map(|r| (r[k].0 - 0.5 * r[k].1).abs())))
                .collect();
            let mut order: Vec<usize> = (0..config.ns.len()).collect();
            order.sort_by_key(|&k| config.ns[k]);
            let decreasing = order
                .windows(2)
                .all(|w| l1_errors[w[1]].0 < l1_errors[w[0]].0);
            let ratio = l1_errors[k_max].0 / l1_errors[order[0]].0;
            SnReport {
                regime: rate.regime,
                ns: config.ns.clone(),
                l1_errors,
                decreasing,
                ratio,
                cf: None,
                cf_tolerance: 0.0,
                sigma_m: None,
                samples,
                passed: decreasing && ratio < 0.4,
            }
        }
        Regime::Rough => {
            let kernel = GKernel::for_params(&rate)?;
            let sigma_m = m_scale(&kernel, noise.stable())?;
            let dt = config.tau / n_max as f64;
            let t_g = (crate::delay::grid_floor(t / dt) + 1) as f64 * dt;
            let alpha = noise.alpha();
            let cf = empirical_cf(&samples, &config.thetas)?.with_target(|th| {
                rustfft::num_complex::Complex::new(
                    (-(sigma_m * th.abs()).powf(alpha) * t_g).exp(),
                    0.0,
                )
            });
            let cf_tolerance = cf.mc_halfwidth + CF_QUADRATURE_ALLOWANCE;
            SnReport {
                regime: rate.regime,
                ns: config.ns.clone(),
                l1_errors: Vec::new(),
                decreasing: false,
                ratio: f64::NAN,
                passed: cf.max_deviation() <= cf_tolerance,
                cf: Some(cf),
                cf_tolerance,
                sigma_m: Some(sigma_m),
                samples,
            }
        }
    };
    if let Some(dir) = &config.outputs {
        report
            .write_outputs(dir)
            .map_err(|e| Error::Config(format!("cannot write outputs: {e}")))?;
    }
    Ok(report)
}

/// Gap between `U^n` from the scheme and `U^n` rebuilt from `Y^n`, for one
/// fine step and for half of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepresentationRow {
    pub n: usize,
    pub dt_fine: f64,
    pub gap: f64,
    pub gap_half: f64,
    /// `gap / dt_fine`.
    pub constant: f64,
    /// `gap / gap_half`.
    pub ratio: f64,
}

/// Rebuilds `U^n` through the convolution representation and compares it
/// with the direct difference, at `dt_fine = Δ_n / fine_ratio` and at half
/// that step. The noise is drawn once at the finer step and coarsened, so the
/// two runs see the same path.
pub fn representation_study(
    spec: &SddeSpec,
    ns: &[usize],
    fine_ratio: usize,
    seed: u64,
) -> Result<Vec<RepresentationRow>> {
    let c = spec.drift.linear_slope().ok_or_else(|| {
        Error::Unsupported("the convolution representation needs an affine drift".into())
    })?;
    let tau = spec.tau();
    let n_max = *ns.iter().max().ok_or_else(|| Error::Config("empty ns".into()))?;
    let finest = n_max * fine_ratio * 2;
    let sim = LfsmSimulator::new(
        spec.noise,
        spec.t_end,
        tau / finest as f64,
        default_past_window(spec.t_end),
    )?;
    let stream = SeededStream::new(seed, 0);
    let (_, z_finest) = sim.simulate(stream)?;
    let noise_ref = stream.into();
    let gap = |n: usize, z: &GridPath| -> Result<f64> {
        let scheme = euler_scheme(spec, n, z, noise_ref)?;
        let y = crate::sdde::y_process(spec, &scheme, z)?;
        let phi = phi_solve(&spec.eta, c, spec.t_end, z.dt())?;
        let rebuilt = crate::resolvent::error_representation(spec, &y, &phi)?;
        // the exact solution of the fine Euler recursion: U = X^fine - X^n on the fine grid
        let fine = crate::sdde::fine_reconstruction(spec, &scheme, z)?;
        let exact = euler_scheme(spec, as_count(tau / z.dt()).expect("nested"), z, noise_ref)?;
        let o = as_count(tau / z.dt()).expect("nested");
        let direct: Vec<f64> = (0..rebuilt.len())
            .map(|k| exact.path.values()[o + k] - fine.values()[o + k])
            .collect();
        Ok(direct
            .iter()
            .zip(rebuilt.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    };
    ns.iter()
        .map(|&n| {
            let factor = (finest / n) / fine_ratio;
            let z = z_finest.coarsen(factor)?;
            let dt_fine = z.dt();
            let g = gap(n, &z)?;
            let gh = gap(n, &z_finest.coarsen(factor / 2)?)?;
            Ok(RepresentationRow {
                n,
                dt_fine,
                gap: g,
                gap_half: gh,
                constant: g / dt_fine,
                ratio: g / gh,
            })
        })
        .collect()
}

/// Independent noise paths on `[0, horizon]` at step `delta`, e.g. for increment-moment fits of `S_n`.
pub fn sn_increment_paths(
    noise: LfsmParams,
    horizon: f64,
    delta: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<GridPath>> {
    let sim = LfsmSimulator::new(noise, horizon, delta, default_past_window(horizon))?;
    replicate(&sim, seed, count, |_, _, z| Ok(z.clone()))
}
