//! Solvers for the delay equation
//! `X_t = x0(0) + ∫_0^t ∫ b(X_{s-r}) η(dr) ds + Z_t` with `X = x0` on `[-τ, 0]`.
//!
//! The Euler scheme lives on the grid `t_i = iΔ` with `Δ = τ/n`, so lags are
//! grid multiples and the delay integral becomes a finite sum against the
//! projection of `η` onto the grid. Paths are stored on `[-τ, T]`: the
//! first `n` samples are the initial segment read from `x0`.

use std::fmt;
use std::sync::Arc;

use crate::delay::DelayMeasure;
use crate::error::{as_count, grid, param, Error, Result};
use crate::grid::GridPath;
use crate::lfsm::LfsmParams;
use crate::stable_noise::SeededStream;

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied `C²` drift.
#[derive(Clone)]
pub struct CustomDrift {
    pub name: String,
    pub b: Func,
    pub db: Func,
    pub d2b: Func,
    /// `sup |b'|` on the range of interest.
    pub lipschitz: f64,
}

/// The drift `b` with its first two derivatives.
#[derive(Clone)]
pub enum Drift {
    /// `b(x) = slope * x + intercept`.
    Linear { slope: f64, intercept: f64 },
    /// `b(x) = amplitude * tanh(rate * x)`.
    Tanh { amplitude: f64, rate: f64 },
    /// `b(x) = amplitude * sin(frequency * x)`.
    Sine { amplitude: f64, frequency: f64 },
    Custom(CustomDrift),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { slope, intercept } => write!(f, "Linear({slope}, {intercept})"),
            Drift::Tanh { amplitude, rate } => write!(f, "Tanh({amplitude}, {rate})"),
            Drift::Sine {
                amplitude,
                frequency,
            } => write!(f, "Sine({amplitude}, {frequency})"),
            Drift::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl Drift {
    pub fn linear(slope: f64, intercept: f64) -> Self {
        Drift::Linear { slope, intercept }
    }

    pub fn zero() -> Self {
        Drift::linear(0.0, 0.0)
    }

    pub fn b(&self, x: f64) -> f64 {
        match self {
            Drift::Linear { slope, intercept } => slope * x + intercept,
            Drift::Tanh { amplitude, rate } => amplitude * (rate * x).tanh(),
            Drift::Sine {
                amplitude,
                frequency,
            } => amplitude * (frequency * x).sin(),
            Drift::Custom(c) => (c.b)(x),
        }
    }

    pub fn db(&self, x: f64) -> f64 {
        match self {
            Drift::Linear { slope, .. } => *slope,
            Drift::Tanh { amplitude, rate } => {
                let c = (rate * x).cosh();
                amplitude * rate / (c * c)
            }
            Drift::Sine {
                amplitude,
                frequency,
            } => amplitude * frequency * (frequency * x).cos(),
            Drift::Custom(c) => (c.db)(x),
        }
    }

    pub fn d2b(&self, x: f64) -> f64 {
        match self {
            Drift::Linear { .. } => 0.0,
            Drift::Tanh { amplitude, rate } => {
                let t = (rate * x).tanh();
                -2.0 * amplitude * rate * rate * t * (1.0 - t * t)
            }
            Drift::Sine {
                amplitude,
                frequency,
            } => -amplitude * frequency * frequency * (frequency * x).sin(),
            Drift::Custom(c) => (c.d2b)(x),
        }
    }

    /// `sup |b'|`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Drift::Linear { slope, .. } => slope.abs(),
            Drift::Tanh { amplitude, rate } => (amplitude * rate).abs(),
            Drift::Sine {
                amplitude,
                frequency,
            } => (amplitude * frequency).abs(),
            Drift::Custom(c) => c.lipschitz,
        }
    }

    /// A constant `C` with `|b(x)| ≤ C (1 + |x|)`.
    pub fn growth_bound(&self) -> f64 {
        match self {
            Drift::Linear { slope, intercept } => slope.abs().max(intercept.abs()),
            Drift::Tanh { amplitude, .. } | Drift::Sine { amplitude, .. } => amplitude.abs(),
            Drift::Custom(c) => c.lipschitz + (c.b)(0.0).abs(),
        }
    }

    /// The slope when `b` is affine.
    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            Drift::Linear { slope, .. } => Some(*slope),
            _ => None,
        }
    }

    /// True when `b` is a constant, so that the drift does not depend on the path.
    pub fn is_constant(&self) -> bool {
        matches!(self, Drift::Linear { slope, .. } if *slope == 0.0)
            || matches!(self, Drift::Tanh { amplitude, rate } | Drift::Sine { amplitude, frequency: rate }
                if *amplitude == 0.0 || *rate == 0.0)
    }
}

/// The initial segment `x0` on `[-τ, 0]` and its derivative.
#[derive(Clone)]
pub struct InitialPath {
    x0: Func,
    dx0: Func,
    label: String,
}

impl fmt::Debug for InitialPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialPath({})", self.label)
    }
}

impl InitialPath {
    pub fn new(
        label: impl Into<String>,
        x0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dx0: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            x0: Arc::new(x0),
            dx0: Arc::new(dx0),
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const {c}"), move |_| c, |_| 0.0)
    }

    pub fn cosine() -> Self {
        Self::new("cos", f64::cos, |t: f64| -t.sin())
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.x0)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.dx0)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Compares the declared derivative with central differences on `[-tau, 0]`.
    pub fn check_derivative(&self, tau: f64) -> Result<()> {
        let h = 1e-5 * tau.max(1e-3);
        for k in 0..=16 {
            let t = -tau + (tau - 2.0 * h) * k as f64 / 16.0 + h;
            let x = self.value(t);
            if !x.is_finite() {
                return Err(param(format!("initial path is not finite at {t}")));
            }
            let fd = (self.value(t + h) - self.value(t - h)) / (2.0 * h);
            let d = self.derivative(t);
            if (fd - d).abs() > 1e-4 * (1.0 + d.abs() + fd.abs()) {
                return Err(param(format!(
                    "initial path derivative {d} disagrees with finite difference {fd} at {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything that defines the equation.
#[derive(Debug, Clone)]
pub struct SddeSpec {
    pub drift: Drift,
    pub eta: DelayMeasure,
    pub x0: InitialPath,
    pub noise: LfsmParams,
    pub t_end: f64,
}

impl SddeSpec {
    pub fn new(
        drift: Drift,
        eta: DelayMeasure,
        x0: InitialPath,
        noise: LfsmParams,
        t_end: f64,
    ) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(param(format!("horizon must be positive, got {t_end}")));
        }
        x0.check_derivative(eta.tau())?;
        Ok(Self {
            drift,
            eta,
            x0,
            noise,
            t_end,
        })
    }

    pub fn tau(&self) -> f64 {
        self.eta.tau()
    }

    /// Number of steps of size `τ/n` in `[0, T]`.
    pub fn steps(&self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(param("n must be at least 1"));
        }
        let dt = self.tau() / n as f64;
        as_count(self.t_end / dt).ok_or_else(|| {
            grid(format!(
                "step tau/n = {dt} does not divide the horizon {}",
                self.t_end
            ))
        })
    }
}

/// Identifies the noise a path was driven by, so that errors are only formed
/// between paths that share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseRef {
    Stream(SeededStream),
    /// Noise supplied by the caller, distinguished by a caller-chosen tag.
    Injected(u64),
}

impl From<SeededStream> for NoiseRef {
    fn from(s: SeededStream) -> Self {
        NoiseRef::Stream(s)
    }
}

/// Output of an Euler run.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub n: usize,
    pub dt: f64,
    /// `X^n` on `[-τ, T]`.
    pub path: GridPath,
    /// Drift increments `D_i = Σ_j w_j b(X_{t_i - jΔ})` used on step `i → i+1`.
    pub drift: Vec<f64>,
    pub noise_ref: NoiseRef,
    pub is_reference: bool,
}

impl SchemeResult {
    /// Index of time zero within `path`.
    pub fn origin(&self) -> usize {
        self.n
    }

    /// `X^n_{t_i}` for `i ≥ 0`.
    pub fn value(&self, i: usize) -> f64 {
        self.path.values()[self.n + i]
    }

    /// The part of the path on `[0, T]`.
    pub fn positive_part(&self) -> GridPath {
        GridPath::new(0.0, self.dt, self.path.values()[self.n..].to_vec())
            .expect("non-empty by construction")
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        self.path.at(t)
    }
}

/// Values of `z` on the grid `iΔ`, `i = 0..=steps`, when `z` starts at 0 and its step divides `Δ`.
fn noise_on_grid(z: &GridPath, dt: f64, steps: usize) -> Result<Vec<f64>> {
    if z.t0().abs() > 1e-12 {
        return Err(grid("noise path must start at time 0"));
    }
    let factor = as_count(dt / z.dt())
        .filter(|&f| f >= 1)
        .ok_or_else(|| grid(format!("noise step {} does not divide {dt}", z.dt())))?;
    if z.steps() < steps * factor {
        return Err(grid(format!(
            "noise path ends at {} before the horizon {}",
            z.t_end(),
            steps as f64 * dt
        )));
    }
    Ok((0..=steps).map(|i| z.values()[i * factor]).collect())
}

/// Explicit Euler scheme at `Δ = τ/n` driven by `z`, sampled at `Δ` or on any grid nesting into it.
pub fn euler_scheme(
    spec: &SddeSpec,
    n: usize,
    z: &GridPath,
    noise_ref: NoiseRef,
) -> Result<SchemeResult> {
    let steps = spec.steps(n)?;
    let dt = spec.tau() / n as f64;
    let zs = noise_on_grid(z, dt, steps)?;
    let lags = spec.eta.lag_weights(dt)?;
    let tau = spec.tau();
    let mut x = Vec::with_capacity(n + steps + 1);
    for k in 0..n {
        x.push(spec.x0.value(-tau + k as f64 * dt));
    }
    x.push(spec.x0.value(0.0));
    let mut drift = Vec::with_capacity(steps);
    let b = &spec.drift;
    for i in 1..=steps {
        let prev = n + i - 1;
        let d: f64 = lags.iter().map(|&(j, w)| w * b.b(x[prev - j])).sum();
        drift.push(d);
        x.push(x[prev] + dt * d + (zs[i] - zs[i - 1]));
    }
    Ok(SchemeResult {
        n,
        dt,
        path: GridPath::new(-tau, dt, x)?,
        drift,
        noise_ref,
        is_reference: false,
    })
}

/// The fine Euler scheme used as a stand-in for the exact solution.
pub fn reference_solution(
    spec: &SddeSpec,
    n_ref: usize,
    z_fine: &GridPath,
    noise_ref: NoiseRef,
) -> Result<SchemeResult> {
    let mut r = euler_scheme(spec, n_ref, z_fine, noise_ref)?;
    r.is_reference = true;
    Ok(r)
}

/// The `k`-th Picard iterate on the grid of `z`, started from `x0(t ∧ 0)`.
///
/// Time integrals use the left-endpoint rule at the step of `z`; the delay
/// integral reads the previous iterate by linear interpolation.
pub fn picard_solve(spec: &SddeSpec, z: &GridPath, iterations: usize) -> Result<GridPath> {
    let dt = z.dt();
    let steps = as_count(spec.t_end / dt)
        .ok_or_else(|| grid(format!("step {dt} does not divide the horizon")))?;
    let zs = noise_on_grid(z, dt, steps)?;
    let x00 = spec.x0.value(0.0);
    let mut current = GridPath::new(0.0, dt, vec![x00; steps + 1])?;
    for _ in 0..iterations {
        let read = |u: f64| {
            if u < 0.0 {
                spec.x0.value(u)
            } else {
                current.interp(u)
            }
        };
        let mut next = Vec::with_capacity(steps + 1);
        let mut integral = 0.0;
        next.push(x00 + zs[0]);
        for l in 0..steps {
            let s = l as f64 * dt;
            integral += dt * spec.eta.integrate(|r| spec.drift.b(read(s - r)), dt);
            next.push(x00 + integral + zs[l + 1]);
        }
        current = GridPath::new(0.0, dt, next)?;
    }
    Ok(current)
}

/// `U^n = X - X^n` on the grid of the coarser scheme, over `[0, T]`.
pub fn error_process(reference: &SchemeResult, scheme: &SchemeResult) -> Result<GridPath> {
    if reference.noise_ref != scheme.noise_ref {
        return Err(Error::Coupling(format!(
            "reference driven by {:?} but scheme by {:?}",
            reference.noise_ref, scheme.noise_ref
        )));
    }
    let factor = as_count(scheme.dt / reference.dt)
        .filter(|&f| f >= 1)
        .ok_or_else(|| grid("scheme grid does not nest in the reference grid"))?;
    let steps = scheme.path.steps() - scheme.n;
    if (reference.path.steps() - reference.n) != steps * factor {
        return Err(grid("scheme and reference cover different horizons"));
    }
    let values = (0..=steps)
        .map(|i| reference.value(i * factor) - scheme.value(i))
        .collect();
    GridPath::new(0.0, scheme.dt, values)
}

/// `X^n` between its grid points, on the grid of `z_fine` over `[-τ, T]`:
/// `X^n_t = X^n_{t_i} + (t - t_i) D_i + Z_t - Z_{t_i}` for `t ∈ [t_i, t_{i+1}]`.
pub fn fine_reconstruction(
    spec: &SddeSpec,
    scheme: &SchemeResult,
    z_fine: &GridPath,
) -> Result<GridPath> {
    let delta = z_fine.dt();
    let ratio = as_count(scheme.dt / delta)
        .filter(|&r| r >= 1)
        .ok_or_else(|| grid("fine grid does not nest in the scheme grid"))?;
    let steps = scheme.drift.len();
    let zs = noise_on_grid(z_fine, delta, steps * ratio)?;
    let tau = spec.tau();
    let neg = scheme.n * ratio;
    let mut x = Vec::with_capacity(neg + steps * ratio + 1);
    for k in 0..neg {
        x.push(spec.x0.value(-tau + k as f64 * delta));
    }
    for i in 0..steps {
        let base = scheme.value(i);
        for q in 0..ratio {
            let k = i * ratio + q;
            x.push(base + q as f64 * delta * scheme.drift[i] + zs[k] - zs[i * ratio]);
        }
    }
    x.push(scheme.value(steps));
    GridPath::new(-tau, delta, x)
}

/// `Y^n_t = ∫_0^t ∫ [b(X^n_{s-r}) - b(X^n_{T(s)-T(r)})] η(dr) ds` on the grid of `z_fine`.
///
/// The outer integral is a left-endpoint sum at the fine step `δ`; the inner
/// one integrates the reconstructed `X^n` against the projection of `η` on
/// the fine grid, which keeps every read on a grid point.
pub fn y_process(spec: &SddeSpec, scheme: &SchemeResult, z_fine: &GridPath) -> Result<GridPath> {
    let xf = fine_reconstruction(spec, scheme, z_fine)?;
    let delta = xf.dt();
    let ratio = as_count(scheme.dt / delta).expect("checked by the reconstruction");
    let lags = spec.eta.lag_weights(delta)?;
    let neg = scheme.n * ratio;
    let steps = scheme.drift.len() * ratio;
    let xs = xf.values();
    let mut y = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    y.push(0.0);
    for k in 0..steps {
        let fine: f64 = lags
            .iter()
            .map(|&(l, w)| w * spec.drift.b(xs[neg + k - l]))
            .sum();
        acc += delta * (fine - scheme.drift[k / ratio]);
        y.push(acc);
    }
    GridPath::new(0.0, delta, y)
}
