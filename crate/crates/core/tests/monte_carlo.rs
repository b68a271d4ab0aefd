mod common;

use common::{dim, table};
use mortsynth_core::mc::{
    mc_standard_error, percentile, simulate, simulate_aggregated_summary, simulate_cell,
    simulate_summary, summarize, summarize_cell, ReplicateMatrix, SimulationConfig,
};
use mortsynth_core::Error;

fn config(replicates: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        replicates,
        rng_seed: seed,
        ci_levels: vec![(2.5, 97.5)],
    }
}

fn moments(draws: &[u32]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().map(|&d| d as f64).sum::<f64>() / n;
    let var = draws.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn poisson_moments_within_clt_bounds() {
    let n = 10_000;
    for (cell, lambda) in [1.0, 10.0, 100.0].into_iter().enumerate() {
        let draws = simulate_cell(lambda, cell, &config(n, 42));
        let (mean, var) = moments(&draws);
        let mean_bound = 4.0 * (lambda / n as f64).sqrt();
        let var_bound = 4.0 * ((2.0 * lambda * lambda + lambda) / n as f64).sqrt();
        assert!((mean - lambda).abs() <= mean_bound, "lambda {lambda}: mean {mean}");
        assert!((var - lambda).abs() <= var_bound, "lambda {lambda}: variance {var}");
    }
}

#[test]
fn zero_intensity_draws_zero() {
    assert!(simulate_cell(0.0, 3, &config(1000, 1)).iter().all(|&d| d == 0));
}

#[test]
fn invalid_intensity_is_refused() {
    // construction already rejects negative values; huge ones overflow storage
    let t = table(vec![dim("a", 1)], vec![2e9]);
    assert!(matches!(simulate(&t, &config(2, 1)), Err(Error::InvalidIntensity { .. })));
}

#[test]
fn coverage_on_fresh_draws() {
    let draws = simulate_cell(50.0, 0, &config(10_000, 7));
    let s = summarize_cell(&mut draws.clone(), 1.0, &[(2.5, 97.5)]);
    let (lo, hi) = s.bounds[0];
    let fresh = simulate_cell(50.0, 0, &config(10_000, 8));
    let inside = fresh.iter().filter(|&&d| (d as f64) >= lo && (d as f64) <= hi).count();
    assert!(inside as f64 / 10_000.0 >= 0.94, "coverage {inside}");
}

#[test]
fn relative_width_decreases_with_intensity() {
    let mut last = f64::INFINITY;
    for (cell, lambda) in [1.0, 10.0, 100.0, 1000.0].into_iter().enumerate() {
        let mut draws = simulate_cell(lambda, cell, &config(10_000, 42));
        let w = summarize_cell(&mut draws, 1.0, &[(2.5, 97.5)]).relative_width().unwrap();
        assert!(w < last, "width {w} at lambda {lambda} not below {last}");
        last = w;
    }
}

#[test]
fn deterministic_and_consistent_paths() {
    let lambda = table(vec![dim("a", 3), dim("b", 4)], (0..12).map(|i| i as f64 * 2.5).collect());
    let exposure = table(vec![dim("a", 3), dim("b", 4)], vec![100.0; 12]);
    let cfg = config(500, 99);
    let m1 = simulate(&lambda, &cfg).unwrap();
    let m2 = simulate(&lambda, &cfg).unwrap();
    assert_eq!(m1, m2);
    let mut s1 = summarize(&m1, &exposure, &cfg.ci_levels).unwrap();
    let s2 = simulate_summary(&lambda, &exposure, &cfg).unwrap();
    s1.seed = s2.seed;
    assert_eq!(s1, s2);
    let other = simulate(&lambda, &config(500, 100)).unwrap();
    assert_ne!(m1, other);

    // aggregated draws are sums of the joint draws
    let agg = simulate_aggregated_summary(&lambda, &exposure, &["a"], &cfg).unwrap();
    for a in 0..3 {
        let sums: Vec<u32> = (0..500).map(|r| (0..4).map(|b| m1.get(a * 4 + b, r)).sum()).collect();
        let (mean, _) = moments(&sums);
        assert!((agg.cells[a].mean - mean).abs() < 1e-9);
    }
}

#[test]
fn summary_examples() {
    let m = ReplicateMatrix::from_rows(vec![vec![7; 10], (0..100).collect()]).unwrap_err();
    assert!(matches!(m, Error::InvalidSpec(_) | Error::ConstraintMismatch(_)));

    let mut constant = vec![7u32; 10];
    let s = summarize_cell(&mut constant, 0.0, &[(2.5, 97.5)]);
    assert_eq!((s.mean, s.variance, s.bounds[0]), (7.0, 0.0, (7.0, 7.0)));
    assert_eq!(s.rate_bounds[0], None);

    let mut ramp: Vec<u32> = (0..100).collect();
    let s = summarize_cell(&mut ramp, 10.0, &[(2.5, 97.5)]);
    assert!((s.bounds[0].0 - 2.475).abs() < 1e-12);
    assert!((s.bounds[0].1 - 96.525).abs() < 1e-12);
    let sorted: Vec<f64> = (0..100).map(f64::from).collect();
    assert!((percentile(&sorted, 2.5) - 2.475).abs() < 1e-12);
}

#[test]
fn standard_error_examples() {
    assert_eq!(mc_standard_error(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
    assert!((mc_standard_error(&[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(mc_standard_error(&[1.0]), Err(Error::InsufficientSample { .. })));
    let draws: Vec<f64> = simulate_cell(100.0, 0, &config(10_000, 3)).into_iter().map(f64::from).collect();
    let se = mc_standard_error(&draws).unwrap();
    assert!((se - 0.1).abs() < 0.01, "se {se}");
}

#[test]
fn config_validation() {
    assert!(simulate_cell(1.0, 0, &config(3, 1)).len() == 3);
    let bad = SimulationConfig {
        ci_levels: vec![(97.5, 2.5)],
        ..SimulationConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(config(0, 1).validate().is_err());
}
