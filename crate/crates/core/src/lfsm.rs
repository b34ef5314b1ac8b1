//! Linear fractional stable motion on a uniform grid.
//!
//! `Z_t = ∫ [(t-s)_+^β - (-s)_+^β] dL_s` is approximated by a Riemann sum
//! over cells of width `δ` covering `[-K, T]`. The kernel is averaged over
//! each cell in closed form, which keeps every weight finite when `β < 0`:
//!
//! ```text
//! a_m = (1/δ) ∫_{(m-1)δ}^{mδ} u^β du = δ^β (m^{β+1} - (m-1)^{β+1}) / (β+1),   m ≥ 1.
//! ```
//!
//! With `Y_j = Σ_{k<j} a_{j-k} dL_k` the path is `Z_j = Y_j - Y_0`. All `Y_j`
//! for `j = 0..=N` come out of one causal convolution, evaluated with an FFT
//! whose kernel transform is computed once per [`LfsmSimulator`]. Two
//! realisations share a complex transform (one in the real part, one in the
//! imaginary part) since the kernel is real.

use std::sync::Arc;

use rand_distr::Distribution;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{as_count, grid, param, Error, Result};
use crate::grid::GridPath;
use crate::quad::tanh_sinh;
use crate::stable_noise::{fill_scaled, SeededStream, StableParams, StandardStable};

/// Law of the driving motion: stable parameters plus Hurst index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfsmParams {
    stable: StableParams,
    hurst: f64,
}

impl LfsmParams {
    pub fn new(stable: StableParams, hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(param(format!("Hurst index must lie in (0, 1), got {hurst}")));
        }
        Ok(Self { stable, hurst })
    }

    pub fn stable(&self) -> &StableParams {
        &self.stable
    }

    pub fn alpha(&self) -> f64 {
        self.stable.alpha()
    }

    pub fn sigma(&self) -> f64 {
        self.stable.sigma()
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Kernel exponent `β = H - 1/α`.
    pub fn beta(&self) -> f64 {
        self.hurst - 1.0 / self.stable.alpha()
    }

    /// `H < 1/α`: the kernel is singular on the diagonal.
    pub fn is_rough(&self) -> bool {
        self.beta() < 0.0
    }
}

/// Lévy increments over the cells of `[window_start, T]`, shared by every
/// discretisation level of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub window_start: f64,
    pub dt_fine: f64,
    pub dl: Vec<f64>,
    /// Stream the increments were drawn from; `None` for injected increments.
    pub stream: Option<SeededStream>,
}

impl NoiseRealization {
    /// Number of cells before time zero.
    pub fn past_cells(&self) -> usize {
        as_count(-self.window_start / self.dt_fine).unwrap_or(0)
    }

    /// Same realisation with every increment multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dl: self.dl.iter().map(|x| c * x).collect(),
            stream: None,
            ..self.clone()
        }
    }
}

/// Default past window `K = 10 T`.
pub fn default_past_window(t_end: f64) -> f64 {
    10.0 * t_end
}

/// Cell-averaged kernel weights `a_0 = 0, a_1, ..., a_len-1` at step `dt`.
pub fn cell_kernel(beta: f64, dt: f64, len: usize) -> Vec<f64> {
    let mut a = vec![0.0; len];
    let scale = dt.powf(beta) / (beta + 1.0);
    for (m, am) in a.iter_mut().enumerate().skip(1) {
        let mf = m as f64;
        // m^{β+1} - (m-1)^{β+1} without cancellation
        let diff = if m == 1 {
            1.0
        } else {
            -mf.powf(beta + 1.0) * ((beta + 1.0) * (-1.0 / mf).ln_1p()).exp_m1()
        };
        *am = scale * diff;
    }
    a
}

/// `∫_ℝ |(1-s)_+^β - (-s)_+^β|^α ds`, the unit-time scale integral of the kernel.
pub fn kernel_power_integral(beta: f64, alpha: f64) -> f64 {
    let near = 1.0 / (alpha * beta + 1.0);
    if beta == 0.0 {
        return near;
    }
    let head = tanh_sinh(
        |u: f64| ((1.0 + u).powf(beta) - u.powf(beta)).abs().powf(alpha),
        0.0,
        1.0,
        1e-13,
    );
    // u = 1/v on [1, ∞), written so that large u loses no digits
    let tail = tanh_sinh(
        |v: f64| v.powf(-alpha * beta - 2.0) * (beta * v.ln_1p()).exp_m1().abs().powf(alpha),
        0.0,
        1.0,
        1e-13,
    );
    near + head + tail
}

/// Stable scale of `Z_1`; for `α = 2` the standard deviation is `√2` times this.
pub fn unit_scale(params: &LfsmParams) -> f64 {
    params.sigma() * kernel_power_integral(params.beta(), params.alpha()).powf(1.0 / params.alpha())
}

/// Scale of the part of `Z_t` carried by increments before `-K`, to leading order.
pub fn truncation_bias(params: &LfsmParams, t: f64, past_window: f64) -> f64 {
    let (a, b) = (params.alpha(), params.beta());
    if b == 0.0 {
        return 0.0;
    }
    if past_window <= 0.0 {
        return f64::INFINITY;
    }
    let integral = (b.abs() * t).powf(a) * past_window.powf(a * (b - 1.0) + 1.0)
        / (a * (1.0 - b) - 1.0);
    params.sigma() * integral.powf(1.0 / a)
}

fn fast_len(min: usize) -> usize {
    let mut best = usize::MAX;
    let mut p2 = 1usize;
    while p2 < 2 * min {
        let mut v = p2;
        while v < min {
            v *= 3;
        }
        best = best.min(v);
        p2 *= 2;
    }
    best
}

/// Path synthesiser for a fixed law and grid, with the kernel transform cached.
#[derive(Clone)]
pub struct LfsmSimulator {
    params: LfsmParams,
    t_end: f64,
    dt: f64,
    steps: usize,
    past_cells: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    kernel_hat: Arc<Vec<Complex<f64>>>,
}

impl std::fmt::Debug for LfsmSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LfsmSimulator")
            .field("params", &self.params)
            .field("t_end", &self.t_end)
            .field("dt", &self.dt)
            .field("past_cells", &self.past_cells)
            .finish()
    }
}

impl LfsmSimulator {
    pub fn new(params: LfsmParams, t_end: f64, dt_fine: f64, past_window: f64) -> Result<Self> {
        if !(t_end > 0.0 && dt_fine > 0.0) {
            return Err(param("horizon and step must be positive"));
        }
        let steps = as_count(t_end / dt_fine)
            .filter(|&n| n >= 1)
            .ok_or_else(|| grid(format!("step {dt_fine} does not divide horizon {t_end}")))?;
        if past_window < 0.0 {
            return Err(param("past window must be non-negative"));
        }
        let past_cells = as_count(past_window / dt_fine).ok_or_else(|| {
            grid(format!("past window {past_window} is not a multiple of {dt_fine}"))
        })?;
        let bias = truncation_bias(&params, t_end, past_window);
        let reference = unit_scale(&params) * t_end.powf(params.hurst());
        if bias > 0.01 * reference {
            log::warn!(
                "past window {past_window} leaves a truncation bias of scale {bias:.3e} \
                 ({:.1}% of the scale of Z at the horizon)",
                100.0 * bias / reference
            );
        }
        let len = fast_len(past_cells + 2 * steps);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let kernel = cell_kernel(params.beta(), dt_fine, past_cells + steps + 1);
        let mut hat: Vec<Complex<f64>> = kernel.iter().map(|&a| Complex::new(a, 0.0)).collect();
        hat.resize(len, Complex::new(0.0, 0.0));
        fft.process(&mut hat);
        let norm = 1.0 / len as f64;
        hat.iter_mut().for_each(|c| *c *= norm);
        Ok(Self {
            params,
            t_end,
            dt: dt_fine,
            steps,
            past_cells,
            fft,
            ifft,
            kernel_hat: Arc::new(hat),
        })
    }

    pub fn params(&self) -> &LfsmParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn past_cells(&self) -> usize {
        self.past_cells
    }

    pub fn cells(&self) -> usize {
        self.past_cells + self.steps
    }

    pub fn truncation_bias(&self) -> f64 {
        truncation_bias(&self.params, self.t_end, self.past_cells as f64 * self.dt)
    }

    /// Draws the increments of one replication.
    pub fn draw(&self, stream: SeededStream) -> NoiseRealization {
        let mut dl = vec![0.0; self.cells()];
        let scale = self.params.sigma() * self.dt.powf(1.0 / self.params.alpha());
        fill_scaled(self.params.alpha(), scale, &mut stream.rng(), &mut dl);
        NoiseRealization {
            window_start: -(self.past_cells as f64) * self.dt,
            dt_fine: self.dt,
            dl,
            stream: Some(stream),
        }
    }

    /// Wraps externally supplied increments after checking their layout.
    pub fn inject(&self, dl: Vec<f64>) -> Result<NoiseRealization> {
        if dl.len() != self.cells() {
            return Err(grid(format!(
                "expected {} increments, got {}",
                self.cells(),
                dl.len()
            )));
        }
        Ok(NoiseRealization {
            window_start: -(self.past_cells as f64) * self.dt,
            dt_fine: self.dt,
            dl,
            stream: None,
        })
    }

    fn check(&self, r: &NoiseRealization) -> Result<()> {
        if r.dl.len() != self.cells() || r.past_cells() != self.past_cells {
            return Err(grid("noise realisation does not match the simulator grid"));
        }
        Ok(())
    }

    /// `Y_{Kc + j}` for `j = 0..=N` of two increment vectors at once.
    fn causal_pair(&self, d1: &[f64], d2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let len = self.kernel_hat.len();
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for (b, x) in buf.iter_mut().zip(d1) {
            b.re = *x;
        }
        for (b, y) in buf.iter_mut().zip(d2) {
            b.im = *y;
        }
        self.fft.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *b *= k;
        }
        self.ifft.process(&mut buf);
        let window = &buf[self.past_cells..=self.past_cells + self.steps];
        (
            window.iter().map(|c| c.re).collect(),
            window.iter().map(|c| c.im).collect(),
        )
    }

    fn anchored(&self, y: Vec<f64>) -> GridPath {
        let y0 = y[0];
        let mut z: Vec<f64> = y.into_iter().map(|v| v - y0).collect();
        z[0] = 0.0;
        GridPath::new(0.0, self.dt, z).expect("grid validated at construction")
    }

    fn partial_sums(&self, dl: &[f64]) -> GridPath {
        let mut z = Vec::with_capacity(self.steps + 1);
        let mut acc = 0.0;
        z.push(0.0);
        for d in &dl[self.past_cells..] {
            acc += d;
            z.push(acc);
        }
        GridPath::new(0.0, self.dt, z).expect("grid validated at construction")
    }

    /// `Z` on `[0, T]` for the given increments.
    pub fn path(&self, r: &NoiseRealization) -> Result<GridPath> {
        self.check(r)?;
        if self.params.beta() == 0.0 {
            return Ok(self.partial_sums(&r.dl));
        }
        let (y, _) = self.causal_pair(&r.dl, &[]);
        Ok(self.anchored(y))
    }

    /// `Z` for two realisations with a single pair of transforms.
    pub fn path_pair(
        &self,
        a: &NoiseRealization,
        b: &NoiseRealization,
    ) -> Result<(GridPath, GridPath)> {
        self.check(a)?;
        self.check(b)?;
        if self.params.beta() == 0.0 {
            return Ok((self.partial_sums(&a.dl), self.partial_sums(&b.dl)));
        }
        let (ya, yb) = self.causal_pair(&a.dl, &b.dl);
        Ok((self.anchored(ya), self.anchored(yb)))
    }

    /// Draws increments on `stream` and returns them with the path.
    pub fn simulate(&self, stream: SeededStream) -> Result<(NoiseRealization, GridPath)> {
        let r = self.draw(stream);
        let z = self.path(&r)?;
        Ok((r, z))
    }

    /// Splits `Z = V + Z'` into the contributions of increments before and after time zero.
    pub fn decompose(&self, r: &NoiseRealization) -> Result<(GridPath, GridPath)> {
        self.check(r)?;
        let zero = GridPath::zeros(0.0, self.dt, self.steps)?;
        if self.params.beta() == 0.0 || self.past_cells == 0 {
            return Ok((zero, self.path(r)?));
        }
        let mut past = r.dl.clone();
        past[self.past_cells..].iter_mut().for_each(|x| *x = 0.0);
        let mut future = r.dl.clone();
        future[..self.past_cells].iter_mut().for_each(|x| *x = 0.0);
        let (yp, yf) = self.causal_pair(&past, &future);
        let mut zf = yf;
        zf[0] = 0.0;
        Ok((self.anchored(yp), GridPath::new(0.0, self.dt, zf)?))
    }
}

/// One-shot synthesis of `Z` on `[0, T]` with past window `K`.
pub fn simulate_lfsm(
    params: LfsmParams,
    t_end: f64,
    dt_fine: f64,
    past_window: f64,
    stream: SeededStream,
) -> Result<(NoiseRealization, GridPath)> {
    LfsmSimulator::new(params, t_end, dt_fine, past_window)?.simulate(stream)
}

/// One-shot version of [`LfsmSimulator::decompose`].
pub fn decompose(
    params: LfsmParams,
    realization: &NoiseRealization,
    t_end: f64,
) -> Result<(GridPath, GridPath)> {
    let past = realization.past_cells() as f64 * realization.dt_fine;
    LfsmSimulator::new(params, t_end, realization.dt_fine, past)?.decompose(realization)
}

/// Fractional Brownian motion sampled exactly by circulant embedding, scaled
/// so that `Var(Z_1) = 2 σ² ∫|(1-s)_+^β - (-s)_+^β|² ds` as for the moving average.
pub fn exact_gaussian_fbm(
    params: LfsmParams,
    t_end: f64,
    dt: f64,
    stream: SeededStream,
) -> Result<GridPath> {
    if !params.stable().is_gaussian() {
        return Err(Error::UnsupportedRegime(
            "exact synthesis is only available for alpha = 2".into(),
        ));
    }
    let n = as_count(t_end / dt)
        .filter(|&n| n >= 1)
        .ok_or_else(|| grid(format!("step {dt} does not divide horizon {t_end}")))?;
    let h2 = 2.0 * params.hurst();
    let gamma = |k: f64| 0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2));
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex::new(gamma(k as f64), 0.0)
        })
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut c);
    let mut rng = stream.rng();
    let normal = StandardStable::new(2.0);
    let mut w: Vec<Complex<f64>> = c
        .iter()
        .map(|lambda| {
            let s = (lambda.re.max(0.0) / m as f64).sqrt() / std::f64::consts::SQRT_2;
            Complex::new(normal.sample(&mut rng), normal.sample(&mut rng)) * s
        })
        .collect();
    fft.process(&mut w);
    let sd = (2.0 * kernel_power_integral(params.beta(), 2.0)).sqrt()
        * params.sigma()
        * dt.powf(params.hurst());
    let mut z = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    z.push(0.0);
    for x in &w[..n] {
        acc += sd * x.re;
        z.push(acc);
    }
    GridPath::new(0.0, dt, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, h: f64) -> LfsmParams {
        LfsmParams::new(StableParams::new(alpha, 1.0).unwrap(), h).unwrap()
    }

    #[test]
    fn regime_flag_follows_beta() {
        assert!(params(2.0, 0.3).is_rough());
        assert!(!params(2.0, 0.7).is_rough());
        assert!(params(1.5, 0.6).is_rough());
        assert!(!params(1.5, 0.7).is_rough());
        assert!(LfsmParams::new(StableParams::new(2.0, 1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn cell_kernel_matches_naive_formula() {
        let beta = -0.3;
        let dt = 0.01;
        let a = cell_kernel(beta, dt, 50);
        assert_eq!(a[0], 0.0);
        for (m, am) in a.iter().enumerate().skip(1) {
            let mf = m as f64;
            let naive = dt.powf(beta) * (mf.powf(beta + 1.0) - (mf - 1.0).powf(beta + 1.0))
                / (beta + 1.0);
            assert!((am - naive).abs() < 1e-12 * naive.abs());
        }
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let p = params(1.5, 0.4);
        let sim = LfsmSimulator::new(p, 1.0, 1.0 / 32.0, 0.5).unwrap();
        let r = sim.draw(SeededStream::new(3, 1));
        let z = sim.path(&r).unwrap();
        let a = cell_kernel(p.beta(), sim.dt(), sim.cells() + 1);
        let kc = sim.past_cells() as isize;
        let y = |j: isize| -> f64 {
            (-kc..j)
                .map(|k| a[(j - k) as usize] * r.dl[(k + kc) as usize])
                .sum()
        };
        for j in 0..=sim.steps() {
            let direct = y(j as isize) - y(0);
            assert!((z.values()[j] - direct).abs() < 1e-10, "j={j}");
        }
        assert_eq!(z.values()[0], 0.0);
    }

    #[test]
    fn beta_zero_gives_partial_sums() {
        let p = params(2.0, 0.5);
        let (r, z) = simulate_lfsm(p, 1.0, 0.125, 1.0, SeededStream::new(1, 0)).unwrap();
        let mut acc = 0.0;
        for j in 1..=8 {
            acc += r.dl[8 + j - 1];
            assert!((z.values()[j] - acc).abs() < 1e-15);
        }
        let (v, zp) = decompose(p, &r, 1.0).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert_eq!(zp.values(), z.values());
    }

    #[test]
    fn decomposition_recombines() {
        let p = params(1.5, 0.4);
        let sim = LfsmSimulator::new(p, 1.0, 1.0 / 64.0, 2.0).unwrap();
        let r = sim.draw(SeededStream::new(8, 2));
        let z = sim.path(&r).unwrap();
        let (v, zp) = sim.decompose(&r).unwrap();
        for j in 0..z.len() {
            let d = v.values()[j] + zp.values()[j] - z.values()[j];
            assert!(d.abs() < 1e-11 * (1.0 + z.values()[j].abs()));
        }
        let sim0 = LfsmSimulator::new(p, 1.0, 1.0 / 64.0, 0.0).unwrap();
        let r0 = sim0.draw(SeededStream::new(8, 2));
        let (v0, zp0) = sim0.decompose(&r0).unwrap();
        assert!(v0.values().iter().all(|&x| x == 0.0));
        assert_eq!(zp0, sim0.path(&r0).unwrap());
    }

    #[test]
    fn pair_transform_matches_single() {
        let p = params(2.0, 0.3);
        let sim = LfsmSimulator::new(p, 2.0, 1.0 / 16.0, 1.0).unwrap();
        let a = sim.draw(SeededStream::new(1, 1));
        let b = sim.draw(SeededStream::new(1, 2));
        let (za, zb) = sim.path_pair(&a, &b).unwrap();
        let (sa, sb) = (sim.path(&a).unwrap(), sim.path(&b).unwrap());
        for j in 0..za.len() {
            assert!((za.values()[j] - sa.values()[j]).abs() < 1e-12);
            assert!((zb.values()[j] - sb.values()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_power_integral_matches_gaussian_closed_form() {
        use statrs::function::gamma::gamma;
        for h in [0.2, 0.3, 0.5, 0.7, 0.9] {
            let beta = h - 0.5;
            let closed = gamma(h + 0.5).powi(2) / (gamma(2.0 * h + 1.0) * (std::f64::consts::PI * h).sin());
            let numeric = kernel_power_integral(beta, 2.0);
            assert!((numeric - closed).abs() < 1e-9 * closed, "H={h}: {numeric} vs {closed}");
        }
    }

    #[test]
    fn truncation_bias_decays_with_window() {
        let p = params(1.5, 0.4);
        let a = truncation_bias(&p, 1.0, 10.0);
        let b = truncation_bias(&p, 1.0, 100.0);
        assert!(b < a && a > 0.0);
        assert_eq!(truncation_bias(&params(2.0, 0.5), 1.0, 1.0), 0.0);
    }

    #[test]
    fn rejects_non_nesting_grids() {
        let p = params(2.0, 0.7);
        assert!(LfsmSimulator::new(p, 1.0, 0.3, 1.0).is_err());
        assert!(LfsmSimulator::new(p, 1.0, 0.25, 0.3).is_err());
        assert!(exact_gaussian_fbm(params(1.5, 0.7), 1.0, 0.25, SeededStream::new(0, 0)).is_err());
    }

    #[test]
    fn fbm_increment_correlation_sign() {
        for (h, sign) in [(0.3, -1.0), (0.8, 1.0)] {
            let p = params(2.0, h);
            let mut acc = 0.0;
            for i in 0..400 {
                let z = exact_gaussian_fbm(p, 1.0, 1.0 / 64.0, SeededStream::new(4, i)).unwrap();
                let inc: Vec<f64> = z.values().windows(2).map(|w| w[1] - w[0]).collect();
                acc += inc.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
            }
            assert!(acc * sign > 0.0, "H={h}");
        }
    }
}
