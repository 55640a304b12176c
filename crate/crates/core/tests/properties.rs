use photon_ensemble::criteria::{self, classical_bound_check};
use photon_ensemble::detection::{self, DetectorNetwork};
use photon_ensemble::fock::{LightSource, PhotonNumberDistribution, SourceComposition};
use photon_ensemble::sources::{
    self, EtaFluctuation, NoiseGeometry, NoiseModel, NumberModel, SourceSpec,
};
use proptest::prelude::*;

fn table(weights: &[f64]) -> PhotonNumberDistribution {
    let total: f64 = weights.iter().sum();
    PhotonNumberDistribution::from_probs(weights.iter().map(|w| w / total).collect()).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..8)
}

// classical generator: thermal, coherent or a two-component mixture of them
fn classical() -> impl Strategy<Value = PhotonNumberDistribution> {
    (0u8..3, 0.0f64..3.0, 0.0f64..3.0, 0.05f64..0.95).prop_map(|(kind, a, b, w)| match kind {
        0 => PhotonNumberDistribution::thermal(a, 0).unwrap(),
        1 => PhotonNumberDistribution::coherent(a).unwrap(),
        _ => PhotonNumberDistribution::mixture(&[
            (w, PhotonNumberDistribution::coherent(a).unwrap()),
            (1.0 - w, PhotonNumberDistribution::thermal(b, 0).unwrap()),
        ])
        .unwrap(),
    })
}

// ln Σ pₙ (1-s)ⁿ straight from the table
fn table_log_vacuum(d: &PhotonNumberDistribution, s: f64) -> f64 {
    d.probs()
        .iter()
        .enumerate()
        .map(|(n, p)| p * (1.0 - s).powi(n as i32))
        .sum::<f64>()
        .ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attenuation_composes(w in weights(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let d = table(&w);
        let twice = d.attenuate(t1).unwrap().attenuate(t2).unwrap();
        let once = d.attenuate(t1 * t2).unwrap();
        for (a, b) in twice.probs().iter().zip(once.probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pgf_is_monotone_on_unit_interval(w in weights(), x in 0.0f64..1.0, dx in 0.0f64..1.0) {
        let d = table(&w);
        let y = x + dx * (1.0 - x);
        prop_assert!(d.pgf(x) <= d.pgf(y) + 1e-15);
        prop_assert!((d.pgf(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attenuation_commutes_with_pgf(w in weights(), t in 0.0f64..=1.0, x in 0.0f64..=1.0) {
        let d = table(&w);
        let lhs = d.attenuate(t).unwrap().pgf(x);
        let rhs = d.pgf(1.0 - t * (1.0 - x));
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn composition_matches_convolution(
        a in weights(), b in weights(), copies in 1u64..4, s in 0.0f64..=1.0,
    ) {
        let comp = SourceComposition::new().with(table(&a)).with_copies(table(&b), copies);
        let direct = table_log_vacuum(&comp.convolved(), s);
        let product = comp.no_click_prob(s);
        prop_assert!((direct - product).abs() < 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn classical_generators_never_violate(
        parts in prop::collection::vec(classical(), 1..4), m in 2u32..6, eff in 0.05f64..1.0,
    ) {
        let mut comp = SourceComposition::new();
        for p in parts {
            comp = comp.with(p);
        }
        let r = classical_bound_check(&comp, m, eff / m as f64).unwrap();
        prop_assert!(!r.violated, "margin {}", r.margin());
    }

    #[test]
    fn poissonian_background_leaves_distance_unchanged(
        n in 1u64..200, eta in 0.001f64..0.5, mean in 0.0f64..5.0, m in 2u32..5,
    ) {
        let bare = SourceSpec::ensemble(n, eta);
        let noisy = bare.clone().with_noise(NoiseModel::Poissonian { mean });
        let (a0, am) = bare.vacuum_logprobs(m, 1.0, 1.0).unwrap();
        let (b0, bm) = noisy.vacuum_logprobs(m, 1.0, 1.0).unwrap();
        let clean = criteria::margin(a0, am, m);
        let dirty = criteria::margin(b0, bm, m);
        prop_assert!((clean - dirty).abs() < 1e-9 * (1.0 + b0.abs() * m as f64));
        if clean.abs() > 1e-10 {
            let r1 = criteria::evaluate(a0, am, m).unwrap();
            let r2 = criteria::evaluate(b0, bm, m).unwrap();
            prop_assert_eq!(r1.violated, r2.violated);
        }
    }

    #[test]
    fn classical_light_with_dark_counts_never_violates(
        src in classical(), m in 2usize..5, eff in 0.1f64..=1.0, dark in 0.0f64..1e7,
    ) {
        let net = DetectorNetwork::symmetric(m, eff).unwrap().with_dark_rate(dark);
        let comp = SourceComposition::new().with(src);
        let r = detection::criterion_from_network(&net, &comp).unwrap();
        prop_assert!(!r.violated);
    }

    #[test]
    fn product_of_emitters_stays_nonclassical(
        etas in prop::collection::vec(0.01f64..1.0, 1..6), m in 2u32..5, s in 0.1f64..=1.0,
    ) {
        let mut comp = SourceComposition::new();
        for eta in etas {
            comp = comp.with(PhotonNumberDistribution::single_photon_emitter(eta).unwrap());
        }
        let mf = m as f64;
        let r = criteria::evaluate(comp.no_click_prob(s / mf), comp.no_click_prob(s), m).unwrap();
        prop_assert!(r.violated);
    }
}

#[test]
fn per_emitter_threshold_does_not_depend_on_ensemble_size() {
    for nbar in [1e-3, 0.01, 0.1, 1.0] {
        let exact = sources::noise_threshold_per_emitter(nbar).unwrap();
        for n in [1u64, 7, 100, 5000] {
            let eta = sources::numeric_noise_threshold(NoiseGeometry::PerEmitter, nbar, n).unwrap();
            assert!(
                (eta - exact).abs() < 1e-8,
                "nbar {nbar}, N {n}: {eta} vs {exact}"
            );
        }
    }
}

#[test]
fn common_threshold_scales_as_inverse_root_n() {
    let nbar = 1e-3;
    let mut last = f64::INFINITY;
    for n in [1e2f64, 1e4, 1e6] {
        let eta = sources::noise_threshold_common(nbar, n as u64).unwrap();
        let scaled = eta * n.sqrt() / nbar;
        assert!((scaled - 1.0).abs() < last, "N {n}: {scaled}");
        last = (scaled - 1.0).abs();
    }
    assert!(last < 0.01);
}

#[test]
fn decay_distribution_is_an_attenuated_binomial() {
    let (n, eta, tau) = (25u64, 0.4, 2.0);
    for t in [0.0, 0.3, 1.0, 5.0] {
        let a = sources::decay_distribution(n, eta, tau, t).unwrap();
        let b = sources::binomial_ensemble(n, eta)
            .unwrap()
            .attenuate((-t / tau).exp())
            .unwrap();
        let c = sources::decay_distribution_direct(n, eta, tau, t).unwrap();
        for k in 0..=n as usize {
            assert!((a.probs()[k] - b.probs()[k]).abs() < 1e-13);
            assert!((a.probs()[k] - c.probs()[k]).abs() < 1e-13);
        }
    }
}

// (1/t_m) ∫ (1 - c e^{-t/τ})^N dt with u = e^{-t/τ}: binomial expansion and
// ∫ u^{k-1} du term by term
fn averaged_power(n: u64, c: f64, tau: f64, t0: f64, t_m: f64) -> f64 {
    let u0 = (-t0 / tau).exp();
    let u1 = (-(t0 + t_m) / tau).exp();
    let mut total = (u0 / u1).ln();
    let mut binom = 1.0;
    for k in 1..=n {
        binom *= (n - k + 1) as f64 / k as f64;
        let kf = k as f64;
        total += binom * (-c).powi(k as i32) * (u0.powf(kf) - u1.powf(kf)) / kf;
    }
    tau * total / t_m
}

#[test]
fn averaged_vacuum_matches_polynomial_oracle() {
    // small N keeps the alternating sum free of cancellation
    let (n, eta, tau) = (12u64, 0.3, 1.5);
    for (t0, t_m) in [(0.0, 0.1), (0.0, 1.5), (0.7, 4.0), (2.0, 0.01)] {
        let (lp0, lp0m) = sources::averaged_vacuum(n, eta, tau, t0, t_m, 2).unwrap();
        let p0 = averaged_power(n, eta / 2.0, tau, t0, t_m);
        let p0m = averaged_power(n, eta, tau, t0, t_m);
        assert!((lp0.exp() / p0 - 1.0).abs() < 1e-10, "t0 {t0}, t_m {t_m}");
        assert!((lp0m.exp() / p0m - 1.0).abs() < 1e-10, "t0 {t0}, t_m {t_m}");
    }
}

#[test]
fn decay_bound_separates_violation_at_short_windows() {
    let (tau, t_m, eta) = (1.0, 0.1, 1e-3);
    let bound = sources::max_emitters_decay(t_m, tau).unwrap();
    let margin = |n: u64| {
        let (a, b) = sources::averaged_vacuum(n, eta, tau, 0.0, t_m, 2).unwrap();
        criteria::margin(a, b, 2)
    };
    assert!(margin((bound * 0.98) as u64) > 0.0);
    assert!(margin((bound * 1.02).ceil() as u64) < 0.0);
}

#[test]
fn decay_bound_at_one_percent_window() {
    let n = sources::max_emitters_decay(0.01, 1.0).unwrap();
    // 0.01 - 2 tanh(0.005) = 0.01³/12 (1 - 0.01²/10 + ...)
    let oracle = 0.01 / (0.01f64.powi(3) / 12.0 * (1.0 - 1e-5));
    assert!((n / oracle - 1.0).abs() < 1e-8);
    assert!((n - 1.2e5).abs() < 20.0);
}

#[test]
fn emitter_number_variance_decides_the_verdict() {
    let eta = 0.01;
    let sub = NumberModel::Binomial {
        trials: 200,
        p: 0.5,
    }
    .statistics()
    .unwrap();
    assert!(sub.variance() < sub.mean());
    assert!(
        sources::fluctuating_n_criterion(&sub, eta, 2)
            .unwrap()
            .violated
    );

    let poisson = NumberModel::Poisson { mean: 100.0 }.statistics().unwrap();
    assert!(
        !sources::fluctuating_n_criterion(&poisson, eta, 2)
            .unwrap()
            .violated
    );

    let geometric = NumberModel::Geometric { mean: 100.0 }.statistics().unwrap();
    let r = sources::fluctuating_n_criterion(&geometric, eta, 2).unwrap();
    assert!(!r.violated && r.margin() < 0.0);
}

#[test]
fn efficiency_fluctuations_factorise() {
    let fluct = EtaFluctuation::Discrete {
        values: vec![0.0, 0.2, 0.9],
        weights: vec![0.5, 0.3, 0.2],
    };
    let (n, m) = (12u64, 2u32);
    let (lp0, lp0m) = sources::fluctuating_eta_vacuum(fluct.mean(), n, m).unwrap();
    let mc = sources::fluctuating_eta_monte_carlo(&fluct, n, m, 200_000, 17, 8).unwrap();
    assert!(((mc.p0_mean - lp0.exp()) / mc.p0_se).abs() < 4.0);
    assert!(((mc.p0m_mean - lp0m.exp()) / mc.p0m_se).abs() < 4.0);
}

#[test]
fn network_matches_source_level_vacuum() {
    let spec = SourceSpec::ensemble(300, 0.02).with_noise(NoiseModel::Common { nbar: 0.01 });
    for m in 2..=5usize {
        let net = DetectorNetwork::symmetric(m, 0.7).unwrap();
        let a = detection::network_vacuum_logprobs(&net, &spec, 0.4).unwrap();
        let b = spec.vacuum_logprobs(m as u32, 0.7, 0.4).unwrap();
        assert!((a.0 - b.0).abs() < 1e-13 && (a.1 - b.1).abs() < 1e-13);
    }
}

#[test]
fn distance_does_not_grow_with_dark_rate() {
    // dark counts are a Poissonian background of equal mean on every arm,
    // so they shift both sides of the margin by the same amount
    let spec = SourceSpec::ensemble(50, 0.1);
    let mut last = f64::INFINITY;
    for dark in [0.0, 1e3, 1e5, 1e6, 1e7] {
        let net = DetectorNetwork::symmetric(2, 1.0)
            .unwrap()
            .with_dark_rate(dark);
        let r = detection::criterion_from_network(&net, &spec).unwrap();
        assert!(r.violated);
        assert!(
            r.d <= last * (1.0 + 1e-9),
            "dark {dark}: {} after {last}",
            r.d
        );
        last = r.d;
    }
}

#[test]
fn source_mean_photon_number() {
    let spec = SourceSpec::ensemble(40, 0.1)
        .with_two_photon(0.01)
        .with_noise(NoiseModel::PerEmitter { nbar: 0.05 });
    assert!((spec.mean_photon_number().unwrap() - 40.0 * (0.12 + 0.05)).abs() < 1e-12);
}
