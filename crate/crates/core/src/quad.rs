//! Small one-dimensional quadrature toolkit.
//!
//! Two independent rules are provided so that every integral with an
//! endpoint singularity can be computed twice: Gauss–Legendre on a mesh
//! graded geometrically toward the left endpoint, and double-exponential
//! (tanh-sinh) quadrature, which tolerates integrable endpoint blow-ups.

use std::f64::consts::FRAC_PI_2;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A reusable Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Integral over `[a, b]` on a mesh graded geometrically toward `a`.
    ///
    /// Panels are `[a + L q^{k+1}, a + L q^k]` for `k < levels`, with the
    /// innermost panel `[a, a + L q^levels]` integrated directly.
    pub fn integrate_graded(
        &self,
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        ratio: f64,
        levels: usize,
    ) -> f64 {
        let len = b - a;
        let mut total = 0.0;
        let mut hi = len;
        for _ in 0..levels {
            let lo = hi * ratio;
            total += self.integrate(f, a + lo, a + hi);
            hi = lo;
        }
        total + self.integrate(f, a, a + hi)
    }
}

/// Tanh-sinh quadrature of `f` over `[a, b]`, halving the step until two
/// successive estimates agree to `rel_tol`. Returns the last estimate.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let tmax = 6.0;
    // Evaluate on the abscissa measured from whichever endpoint is closer so
    // points crowding the endpoints keep full relative precision.
    let eval = |t: f64| -> f64 {
        let s = FRAC_PI_2 * t.sinh();
        let c = s.cosh();
        let w = FRAC_PI_2 * t.cosh() / (c * c);
        // distance from the nearer endpoint, as a fraction of the half-length
        let d = 1.0 / (s.abs().exp() * c);
        let x = if t < 0.0 { a + half * d } else { b - half * d };
        if w == 0.0 || d == 0.0 {
            return 0.0;
        }
        let v = f(x);
        if v.is_finite() {
            w * v
        } else {
            0.0
        }
    };
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= tmax {
        sum += eval(k as f64 * h) + eval(-(k as f64) * h);
        k += 1;
    }
    let mut estimate = half * h * sum;
    for _ in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= tmax {
            sum += eval(k as f64 * h) + eval(-(k as f64) * h);
            k += 2;
        }
        let next = half * h * sum;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(5);
        let f = |x: f64| x.powi(9) + 3.0 * x.powi(4) - x;
        let exact = 1.0 / 10.0 + 3.0 / 5.0 - 0.5;
        assert!((rule.integrate(&f, 0.0, 1.0) - exact).abs() < 1e-14);
        let (_, w) = gauss_legendre(1);
        assert!((w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn graded_mesh_handles_weak_singularity() {
        let rule = GaussLegendre::new(16);
        let f = |x: f64| x.powf(-0.6);
        let v = rule.integrate_graded(&f, 0.0, 1.0, 0.25, 40);
        assert!((v - 2.5).abs() < 1e-9, "{v}");
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularities() {
        let v = tanh_sinh(|x| x.powf(-0.6), 0.0, 1.0, 1e-12);
        assert!((v - 2.5).abs() < 1e-9, "{v}");
        // the right-hand singularity is only resolved down to the spacing of f64 near 1
        let w = tanh_sinh(|x| (1.0 - x).powf(-0.5) + x.ln(), 0.0, 1.0, 1e-12);
        assert!((w - 1.0).abs() < 1e-7, "{w}");
        let e = tanh_sinh(f64::exp, -1.0, 2.0, 1e-13);
        assert!((e - (2f64.exp() - (-1f64).exp())).abs() < 1e-11);
    }
}
