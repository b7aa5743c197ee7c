use phasemarket::fitting::{
    batch_error, fit_gaussian, fit_line, fit_power_law, LinePoint, PowerLawOptions, PowerLawPoint,
};
use phasemarket::Error;
use proptest::prelude::*;

fn planted(g0: f64, alpha_c: f64, gamma: f64, rel_sigma: f64) -> Vec<PowerLawPoint> {
    (0..20)
        .map(|k| {
            let alpha = alpha_c + 1.0 + 2.0 * k as f64;
            let f0 = g0 * (alpha - alpha_c).powf(gamma);
            PowerLawPoint { alpha, f0, sigma: rel_sigma * f0 }
        })
        .collect()
}

fn gaussian_samples(a: f64, mu: f64, s: f64) -> Vec<(f64, f64)> {
    let lo = (mu - 5.0 * s).floor() as i64;
    let hi = (mu + 5.0 * s).ceil() as i64;
    (lo..=hi)
        .map(|p| {
            let x = p as f64;
            (x, a * (-(x - mu).powi(2) / (2.0 * s * s)).exp())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_law_recovers_planted(g0 in 1.0f64..200.0, alpha_c in 30.0f64..70.0, gamma in 0.3f64..2.0, weighted in any::<bool>()) {
        let pts = planted(g0, alpha_c, gamma, if weighted { 0.05 } else { 0.0 });
        let opts = PowerLawOptions { weighted, ..Default::default() };
        let fit = fit_power_law(&pts, &opts).unwrap();
        prop_assert!((fit.g0 - g0).abs() <= 1e-3 * g0.max(1.0), "{:?}", fit);
        prop_assert!((fit.alpha_c - alpha_c).abs() <= 1e-3, "{:?}", fit);
        prop_assert!((fit.gamma - gamma).abs() <= 1e-3, "{:?}", fit);
    }

    #[test]
    fn power_law_is_scale_consistent(g0 in 1.0f64..50.0, alpha_c in 30.0f64..70.0, gamma in 0.3f64..2.0, k in 0.01f64..100.0) {
        let mut pts = planted(g0, alpha_c, gamma, 0.05);
        for p in pts.iter_mut() {
            p.f0 *= 1.0 + 0.02 * (p.alpha * 7.3).sin();
            p.sigma = 0.05 * p.f0;
        }
        let opts = PowerLawOptions::default();
        let base = fit_power_law(&pts, &opts).unwrap();
        let scaled: Vec<PowerLawPoint> = pts
            .iter()
            .map(|p| PowerLawPoint { f0: k * p.f0, sigma: k * p.sigma, ..*p })
            .collect();
        let fit = fit_power_law(&scaled, &opts).unwrap();
        prop_assert!((fit.g0 / (k * base.g0) - 1.0).abs() < 1e-6, "{:?} vs {:?}", fit, base);
        prop_assert!((fit.alpha_c - base.alpha_c).abs() < 1e-6);
        prop_assert!((fit.gamma - base.gamma).abs() < 1e-6);
    }

    #[test]
    fn gaussian_recovers_planted(a in 1.0f64..1e4, mu in 20.0f64..200.0, s in 1.5f64..30.0) {
        let fit = fit_gaussian(&gaussian_samples(a, mu, s)).unwrap();
        prop_assert!((fit.amplitude - a).abs() <= 1e-6 * a, "{:?}", fit);
        prop_assert!((fit.mean - mu).abs() <= 1e-6, "{:?}", fit);
        prop_assert!((fit.sigma - s).abs() <= 1e-6, "{:?}", fit);
    }

    #[test]
    fn gaussian_follows_translation(a in 1.0f64..1e4, mu in 20.0f64..200.0, s in 1.5f64..30.0, shift in -15i32..300) {
        let mut pts = gaussian_samples(a, mu, s);
        for (i, p) in pts.iter_mut().enumerate() {
            p.1 *= 1.0 + 0.03 * ((i * 13 % 7) as f64 - 3.0) / 3.0;
        }
        let base = fit_gaussian(&pts).unwrap();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + shift as f64, y)).collect();
        let fit = fit_gaussian(&moved).unwrap();
        prop_assert!((fit.mean - (base.mean + shift as f64)).abs() < 1e-9, "{} vs {}", fit.mean, base.mean);
        prop_assert!((fit.sigma - base.sigma).abs() < 1e-9);
        prop_assert!((fit.amplitude - base.amplitude).abs() < 1e-9 * base.amplitude);
    }

    #[test]
    fn constant_estimator_has_zero_spread(value in -1e6f64..1e6, sets in 2usize..20, size in 1usize..10) {
        let data: Vec<Vec<u8>> = (0..sets).map(|k| vec![k as u8; size]).collect();
        let stats = batch_error(&data, |_| Ok(value)).unwrap();
        prop_assert_eq!(stats.std, 0.0);
        prop_assert_eq!(stats.mean, value);
        prop_assert_eq!(stats.n_sets, sets);
    }

    #[test]
    fn line_through_exact_points(m in -5.0f64..5.0, c in -100.0f64..100.0) {
        let pts: Vec<LinePoint> = (0..6)
            .map(|k| {
                let alpha_c = 40.0 + 3.0 * k as f64;
                LinePoint { alpha_c, beta: m * alpha_c + c, sigma: 0.5 }
            })
            .collect();
        let fit = fit_line(&pts).unwrap();
        prop_assert!((fit.slope - m).abs() < 1e-9);
        prop_assert!((fit.intercept - c).abs() < 1e-7);
    }
}

#[test]
fn unequal_sets_are_rejected() {
    let sets = vec![vec![1, 2], vec![3]];
    assert!(matches!(batch_error(&sets, |_| Ok(1.0)), Err(Error::UnequalSets)));
}

#[test]
fn failing_sets_are_reported() {
    let sets: Vec<Vec<i32>> = (0..4).map(|k| vec![k]).collect();
    let stats = batch_error(&sets, |s| {
        if s[0] == 2 {
            Err(Error::Degenerate("planted"))
        } else {
            Ok(s[0] as f64)
        }
    })
    .unwrap();
    assert_eq!(stats.n_sets, 3);
    assert_eq!(stats.failures.len(), 1);
    assert_eq!(stats.failures[0].0, 2);
}

#[test]
fn too_few_points_for_power_law() {
    let pts = planted(2.0, 50.0, 0.5, 0.0);
    assert!(fit_power_law(&pts[..2], &PowerLawOptions { weighted: false, ..Default::default() }).is_err());
}
