//! Traffic, tail model and power-floor checks against independent oracles.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use statrs::distribution::{ContinuousCDF, Normal};
use tailfl_core::config::SimConfig;
use tailfl_core::evt::{extract_exceedances, fit_local};
use tailfl_core::federated::hurst_estimate;
use tailfl_core::fgn;
use tailfl_core::power::{min_power, UrllcConstraint};
use tailfl_core::seed::rng_from_seed;
use tailfl_core::traffic::TrafficModel;

/// `E|N(mu, s^2)| = s sqrt(2/pi) exp(-mu^2 / 2s^2) + mu (1 - 2 Phi(-mu/s))`.
fn folded_mean(mu: f64, s: f64) -> f64 {
    let phi = Normal::new(0.0, 1.0).unwrap();
    s * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * s * s)).exp()
        + mu * (1.0 - 2.0 * phi.cdf(-mu / s))
}

#[test]
fn folded_mean_matches_normal_cdf_oracle() {
    for (mu, s) in [(0.1, 0.05), (0.1, 0.1), (0.0, 1.0), (-0.3, 0.2), (2.0, 0.5)] {
        let m = TrafficModel { underlying_mean: mu, underlying_std: s, ..TrafficModel::default() };
        let want = folded_mean(mu, s);
        assert!((m.mean_interarrival() - want).abs() < 1e-7 * want, "{mu} {s}");
    }
}

#[test]
fn sample_mean_matches_folded_mean() {
    for hurst in [0.5, 0.7] {
        let m = TrafficModel { hurst, seed: 11, ..TrafficModel::default() };
        let xs = m.generate_interarrivals(1 << 18).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let want = folded_mean(0.1, 0.05);
        // LRD inflates the standard error of the mean well beyond s / sqrt(n).
        let tol = if hurst == 0.5 { 5e-4 } else { 5e-3 };
        assert!((mean - want).abs() < tol, "H={hurst}: {mean} vs {want}");
        assert!(xs.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn hurst_recovered_from_generated_traffic() {
    let m = TrafficModel { hurst: 0.8, seed: 12, ..TrafficModel::default() };
    let g = m.generate_underlying(1 << 14).unwrap();
    let h = hurst_estimate(&g).unwrap();
    assert!((0.7..=0.9).contains(&h), "{h}");
}

#[test]
fn fgn_lag_covariances_match_closed_form() {
    let n = 1 << 16;
    // Above H = 0.75 the sample covariances converge too slowly for a fixed tolerance.
    for (i, h) in [0.55, 0.65, 0.75].into_iter().enumerate() {
        let mut rng = rng_from_seed(20 + i as u64);
        let (x, method) = fgn::sample(h, n, &mut rng);
        assert_eq!(method, fgn::Method::CirculantEmbedding);
        for k in 0..=3 {
            let c = x.iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / (n - k) as f64;
            let want = 0.5 * ((k as f64 + 1.0).powf(2.0 * h) - 2.0 * (k as f64).powf(2.0 * h)
                + (k as f64 - 1.0).abs().powf(2.0 * h));
            assert!((c - want).abs() < 0.06, "H={h} lag {k}: {c} vs {want}");
        }
    }
}

/// Transmitting exactly at the minimum power keeps `Pr{q + T - x > q_th}`
/// at or under epsilon when the inter-arrivals follow the fitted tail.
#[test]
fn min_power_meets_the_tail_target() {
    let cfg = SimConfig::default();
    let history = TrafficModel::default().with_seed(31).generate_interarrivals(400_000).unwrap();
    let set = extract_exceedances(&history, cfg.tail_quantile).unwrap();
    let gpd = fit_local(&set, cfg.init_params(), cfg.learning_rate, 2000).unwrap();
    // A looser target keeps the Monte-Carlo count small.
    let epsilon = 1e-3;
    let c = UrllcConstraint {
        q_threshold: cfg.q_threshold_s,
        epsilon,
        tail_prob: set.tail_prob,
        x0: set.threshold_x0,
        gpd,
    };
    let budget = cfg.link_budget();
    let path_gain = cfg.channel_model(0).path_gain();
    let n = 2_000_000;
    let xs = TrafficModel::default().with_seed(32).generate_interarrivals(n).unwrap();
    let mut rng = rng_from_seed(33);
    let mut hits = 0usize;
    for &x in &xs {
        let q = rng.random_range(0.0..0.15);
        let gain = path_gain * <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
        let p = min_power(&c, &budget, gain, q, f64::INFINITY).required();
        let t = budget.transmission_time(gain, p).unwrap();
        hits += usize::from(q + t - x > c.q_threshold);
    }
    let rate = hits as f64 / n as f64;
    let bound = epsilon * (1.0 + 3.0 / (epsilon * n as f64).sqrt());
    assert!(rate <= bound, "{rate} > {bound}");
    // The floor is not wildly conservative either.
    assert!(rate >= 0.7 * epsilon, "{rate}");
}
