use fsdde::delay::DelayMeasure;
use fsdde::experiments::synthetic_study;
use fsdde::grid::GridPath;
use fsdde::lfsm::{cell_kernel, exact_gaussian_fbm, unit_scale, LfsmParams, LfsmSimulator};
use fsdde::limits::{
    g_eval, ks_one_sample, ks_two_sample, m_scale, rate_fit, s_n_statistic, GKernel, ZetaRule,
};
use fsdde::resolvent::{phi_solve, resolvent_general, ResolventGrid};
use fsdde::sdde::{error_process, euler_scheme, Drift, InitialPath, NoiseRef, SddeSpec};
use fsdde::stable_noise::{fill_scaled, SeededStream, StableParams};
use fsdde::Error;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn lfsm(alpha: f64, hurst: f64) -> LfsmParams {
    LfsmParams::new(StableParams::new(alpha, 1.0).unwrap(), hurst).unwrap()
}

fn measure() -> impl Strategy<Value = DelayMeasure> {
    (
        prop::collection::vec((0.0..1.0f64, -2.0..2.0f64), 0..3),
        prop::option::of((0.0..0.5f64, 0.5..1.0f64, -1.5..1.5f64)),
    )
        .prop_filter_map("distinct atoms", |(atoms, dens)| {
            DelayMeasure::new(1.0, atoms, dens.into_iter().collect()).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaled_draws_are_proportional(alpha in 1.05..2.0f64, scale in 0.01..10.0f64, seed in any::<u64>()) {
        let s = SeededStream::new(seed, 3);
        let mut unit = vec![0.0; 16];
        let mut scaled = vec![0.0; 16];
        fill_scaled(alpha, 1.0, &mut s.rng(), &mut unit);
        fill_scaled(alpha, scale, &mut s.rng(), &mut scaled);
        for (u, v) in unit.iter().zip(&scaled) {
            prop_assert!((u * scale - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn pushforward_preserves_mass_and_variation(eta in measure(), k in 1usize..64) {
        let dt = 1.0 / k as f64;
        let push = eta.floor_pushforward(dt).unwrap();
        prop_assert!((push.mass() - eta.mass()).abs() < 1e-9);
        prop_assert!(push.total_variation() <= eta.total_variation() + 1e-9);
        prop_assert!(push.atoms().iter().all(|&(r, _)| ((r / dt) - (r / dt).round()).abs() < 1e-9));
        let lags: f64 = eta.lag_weights(dt).unwrap().iter().map(|l| l.1).sum();
        prop_assert!((lags - eta.mass()).abs() < 1e-9);
    }

    #[test]
    fn integration_against_constants_gives_mass(eta in measure(), c in -3.0..3.0f64) {
        prop_assert!((eta.integrate(|_| c, 1e-3) - c * eta.mass()).abs() < 1e-9);
    }

    #[test]
    fn kernel_weights_scale_with_the_step(beta in -0.45..0.45f64, c in 0.1..4.0f64) {
        let a = cell_kernel(beta, 0.01, 64);
        let b = cell_kernel(beta, 0.01 * c, 64);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * c.powf(beta) - y).abs() <= 1e-12 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn lfsm_is_linear_in_the_increments(x in -3.0..3.0f64, y in -3.0..3.0f64, seed in any::<u64>()) {
        let sim = LfsmSimulator::new(lfsm(1.7, 0.35), 1.0, 1.0 / 64.0, 2.0).unwrap();
        let a = sim.draw(SeededStream::new(seed, 0));
        let b = sim.draw(SeededStream::new(seed, 1));
        let mix = sim.inject(a.dl.iter().zip(&b.dl).map(|(p, q)| x * p + y * q).collect()).unwrap();
        let (za, zb) = sim.path_pair(&a, &b).unwrap();
        let zm = sim.path(&mix).unwrap();
        for k in 0..zm.len() {
            let want = x * za.values()[k] + y * zb.values()[k];
            prop_assert!((zm.values()[k] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn phi_obeys_growth_bound(eta in measure(), c in -2.0..2.0f64) {
        let phi = phi_solve(&eta, c, 3.0, 1.0 / 32.0).unwrap();
        let growth = c.abs() * eta.total_variation();
        prop_assert_eq!(phi.values[0], 1.0);
        for (k, v) in phi.values.iter().enumerate() {
            let t = k as f64 / 32.0;
            prop_assert!(v.abs() <= (growth * t).exp() * (1.0 + 1e-12));
        }
        // Lipschitz in t with constant growth * e^{growth T}
        let lip = growth * (growth * 3.0).exp();
        for w in phi.values.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= lip / 32.0 + 1e-12);
        }
    }

    #[test]
    fn constant_coefficient_resolvent_is_stationary(eta in measure(), c in -1.5..1.5f64) {
        let dt = 1.0 / 16.0;
        let phi = phi_solve(&eta, c, 2.0, dt).unwrap();
        let psi = GridPath::new(0.0, dt, vec![c; phi.values.len()]).unwrap();
        let general = resolvent_general(&psi, &eta, 2.0, dt).unwrap();
        let stationary = ResolventGrid::from_phi(&phi);
        for i in 0..general.size() {
            prop_assert_eq!(general.get(i, i), 1.0);
            for j in 0..=i {
                prop_assert!((general.get(i, j) - stationary.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_drift_scheme_is_start_plus_noise(seed in any::<u64>(), n in prop::sample::select(vec![4usize, 8, 16])) {
        let spec = SddeSpec::new(
            Drift::zero(),
            DelayMeasure::dirac(1.0, 0.5).unwrap(),
            InitialPath::cosine(),
            lfsm(1.5, 0.4),
            1.0,
        ).unwrap();
        let (_, z) = LfsmSimulator::new(spec.noise, 1.0, 1.0 / 64.0, 2.0)
            .unwrap()
            .simulate(SeededStream::new(seed, 0))
            .unwrap();
        let x = euler_scheme(&spec, n, &z, NoiseRef::Injected(1)).unwrap();
        let factor = 64 / n;
        for i in 0..=n {
            prop_assert!((x.value(i) - 1.0 - z.values()[i * factor]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_scheme_is_affine_in_the_noise(seed in any::<u64>(), c in -2.0..2.0f64) {
        let spec = SddeSpec::new(
            Drift::linear(c, 0.2),
            DelayMeasure::new(1.0, vec![(0.25, 1.0)], vec![(0.0, 1.0, -0.4)]).unwrap(),
            InitialPath::cosine(),
            lfsm(2.0, 0.3),
            2.0,
        ).unwrap();
        let sim = LfsmSimulator::new(spec.noise, 2.0, 1.0 / 32.0, 2.0).unwrap();
        let a = sim.simulate(SeededStream::new(seed, 0)).unwrap().1;
        let b = sim.simulate(SeededStream::new(seed, 1)).unwrap().1;
        let sum = GridPath::new(0.0, a.dt(), a.values().iter().zip(b.values()).map(|(p, q)| p + q).collect()).unwrap();
        let zero = GridPath::zeros(0.0, a.dt(), a.steps()).unwrap();
        let r = NoiseRef::Injected(0);
        let run = |z: &GridPath| euler_scheme(&spec, 8, z, r).unwrap().positive_part();
        let (xa, xb, xs, x0) = (run(&a), run(&b), run(&sum), run(&zero));
        for k in 0..xs.len() {
            let want = xa.values()[k] + xb.values()[k] - x0.values()[k];
            prop_assert!((xs.values()[k] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn s_n_is_linear_in_the_path(p in -2.0..2.0f64, q in -2.0..2.0f64, seed in any::<u64>()) {
        let sim = LfsmSimulator::new(lfsm(2.0, 0.6), 1.0, 1.0 / 128.0, 1.0).unwrap();
        let a = sim.simulate(SeededStream::new(seed, 0)).unwrap().1;
        let b = sim.simulate(SeededStream::new(seed, 1)).unwrap().1;
        let mix = GridPath::new(0.0, a.dt(), a.values().iter().zip(b.values()).map(|(x, y)| p * x + q * y).collect()).unwrap();
        for rule in [ZetaRule::LeftEndpoint, ZetaRule::Trapezoid] {
            let s = |z: &GridPath| s_n_statistic(z, 1.0 / 16.0, 0.5, rule).unwrap().value;
            let want = p * s(&a) + q * s(&b);
            prop_assert!((s(&mix) - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn g_is_finite_and_continuous(beta in -0.9..-0.01f64, s in 0.01..0.99f64) {
        let k = GKernel::new(beta, 1e-12).unwrap();
        let a = g_eval(&k, s).unwrap();
        let b = g_eval(&k, s + 1e-7).unwrap();
        prop_assert!(a.is_finite());
        // |g'| ≤ |β| s^{β-1} + O(1) near the singularity
        prop_assert!((a - b).abs() <= 1e-7 * (beta.abs() * s.powf(beta - 1.0) + 2.0));
    }

    #[test]
    fn m_scale_is_linear_in_sigma(alpha in 1.2..2.0f64, sigma in 0.1..5.0f64) {
        let beta = -0.3f64.min(0.9 / alpha);
        let k = GKernel::new(beta, 1e-12).unwrap();
        let one = m_scale(&k, &StableParams::new(alpha, 1.0).unwrap()).unwrap();
        let many = m_scale(&k, &StableParams::new(alpha, sigma).unwrap()).unwrap();
        prop_assert!((many - sigma * one).abs() < 1e-12 * many);
    }

    #[test]
    fn rate_fit_recovers_power_laws(rate in 0.1..2.0f64, c in 0.01..100.0f64) {
        let dts: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let errs: Vec<f64> = dts.iter().map(|d| c * d.powf(rate)).collect();
        let fit = rate_fit(&dts, &errs).unwrap();
        prop_assert!((fit.slope - rate).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn ks_is_symmetric(a in prop::collection::vec(-5.0..5.0f64, 1..50), b in prop::collection::vec(-5.0..5.0f64, 1..50)) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert!((ab.statistic - ba.statistic).abs() < 1e-15);
        prop_assert!(ab.statistic >= 0.0 && ab.statistic <= 1.0);
    }
}

#[test]
fn synthetic_harness_recovers_planted_rates() {
    for (k, rate) in [0.3, 0.7333, 1.0, 1.4].into_iter().enumerate() {
        let r = synthetic_study(&[16, 32, 64, 128, 256], 1.0, rate, 2000, k as u64).unwrap();
        let slope = r.slope().unwrap();
        assert!((slope - rate).abs() < 0.05, "planted {rate}, recovered {slope}");
    }
}

#[test]
fn gaussian_lfsm_matches_exact_fbm_in_law() {
    let params = lfsm(2.0, 0.7);
    let sim = LfsmSimulator::new(params, 1.0, 1.0 / 256.0, 10.0).unwrap();
    let count = 3000;
    let moving: Vec<f64> = (0..count)
        .map(|i| sim.simulate(SeededStream::new(21, i)).unwrap().1.last())
        .collect();
    let exact: Vec<f64> = (0..count)
        .map(|i| {
            exact_gaussian_fbm(params, 1.0, 1.0 / 256.0, SeededStream::new(22, i))
                .unwrap()
                .last()
        })
        .collect();
    let ks = ks_two_sample(&moving, &exact).unwrap();
    assert!(ks.passes(), "{ks:?}");
    // and both against N(0, 2 s²) with s the unit scale
    let sd = 2f64.sqrt() * unit_scale(&params);
    let normal = Normal::new(0.0, sd).unwrap();
    let d = ks_one_sample(&exact, |x| normal.cdf(x)).unwrap();
    assert!(d < 1.628 / (count as f64).sqrt(), "{d}");
}

#[test]
fn coupling_mismatch_is_rejected() {
    let spec = SddeSpec::new(
        Drift::linear(-1.0, 0.0),
        DelayMeasure::dirac(1.0, 1.0).unwrap(),
        InitialPath::cosine(),
        lfsm(2.0, 0.7),
        1.0,
    )
    .unwrap();
    let z = GridPath::zeros(0.0, 1.0 / 64.0, 64).unwrap();
    let a = euler_scheme(&spec, 64, &z, NoiseRef::Injected(1)).unwrap();
    let b = euler_scheme(&spec, 8, &z, NoiseRef::Injected(2)).unwrap();
    assert!(matches!(error_process(&a, &b), Err(Error::Coupling(_))));
}
