use std::collections::HashMap;
use std::f64::consts::FRAC_1_SQRT_2;

use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};
use slfv::event::{lambda_beta_c_rate, merger_size_distribution};
use slfv::limit::{
    ks_exponential, sample_kingman, sample_lambda_beta_c, sample_spatial_limit, BlockCountChain,
};
use slfv::{ClassLaw, Point, SimError, SimRng, Torus};

fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn binomial_ok(hits: usize, trials: usize, p: f64) -> bool {
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    (hits as f64 / trials as f64 - p).abs() <= 3.0 * sd
}

#[test]
fn kingman_single_block_is_constant() {
    let path = sample_kingman(1, 1.0, f64::INFINITY, &mut rng(1)).unwrap();
    assert!(path.events.is_empty());
    assert_eq!(path.mrca_time(), Some(0.0));
}

#[test]
fn kingman_pair_time_has_mean_one_over_rate() {
    let mut r = rng(2);
    let rate = 2.5;
    let n = 100_000;
    let mean = (0..n)
        .map(|_| sample_kingman(2, rate, f64::INFINITY, &mut r).unwrap().mrca_time().unwrap())
        .sum::<f64>()
        / n as f64;
    assert!((mean * rate - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn kingman_holding_probability() {
    let mut r = rng(3);
    let trials = 100_000;
    let hits = (0..trials)
        .filter(|_| sample_kingman(3, 1.0, 0.5, &mut r).unwrap().block_count_at(0.5) == 3)
        .count();
    assert!(binomial_ok(hits, trials, (-1.5f64).exp()));
}

#[test]
fn kingman_chain_matches_closed_form() {
    let p = BlockCountChain::kingman(4).distribution(0.3);
    assert!((p[4] - (-1.8f64).exp()).abs() < 1e-12);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let p = BlockCountChain::kingman(2).distribution(0.7);
    assert!((p[2] - (-0.7f64).exp()).abs() < 1e-12);
}

#[test]
fn lambda_coalescent_without_mergers_is_constant() {
    let large = ClassLaw::point(0.25, 1.0, 0.0).unwrap();
    let path = sample_lambda_beta_c(5, 1.0, 0.0, &large, 10.0, &mut rng(4)).unwrap();
    assert_eq!(path.block_count_at(10.0), 5);
    assert!(path.first_merger().is_none());
    assert_eq!(
        sample_lambda_beta_c(5, 1.0, 0.0, &large, f64::INFINITY, &mut rng(4)).unwrap_err(),
        SimError::NonCoalescing
    );
}

#[test]
fn lambda_pair_hazard_matches_rate() {
    let large = ClassLaw::point(0.25, 1.0, 0.5).unwrap();
    for beta in [0.0, 0.01] {
        let rate = lambda_beta_c_rate(2, 2, 1.0, beta, &large).unwrap();
        let mut r = rng(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                sample_lambda_beta_c(2, 1.0, beta, &large, f64::INFINITY, &mut r)
                    .unwrap()
                    .mrca_time()
                    .unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((1.0 / mean / rate - 1.0).abs() < 0.03, "beta {beta}: {} vs {rate}", 1.0 / mean);
    }
}

#[test]
fn first_merger_sizes_match_binomial_mixture() {
    let large = ClassLaw::point(0.35, 1.0, 0.8).unwrap();
    let expected = merger_size_distribution(4, 1.0, &large).unwrap();
    let mut r = rng(6);
    let trials = 20_000;
    let mut counts = [0usize; 3];
    for _ in 0..trials {
        let path = sample_lambda_beta_c(4, 1.0, 0.0, &large, f64::INFINITY, &mut r).unwrap();
        counts[path.first_merger().unwrap().merged.len() - 2] += 1;
    }
    for (k, (&c, &p)) in counts.iter().zip(&expected).enumerate() {
        assert!(binomial_ok(c, trials, p), "k = {}: {c} vs {p}", k + 2);
    }
}

#[test]
fn full_cover_merges_everything_at_exponential_time() {
    let large = ClassLaw::point(FRAC_1_SQRT_2, 2.0, 1.0).unwrap();
    let c = 1.0;
    let mut r = rng(7);
    let times: Vec<f64> = (0..10_000)
        .map(|_| {
            let path = sample_lambda_beta_c(5, c, 0.0, &large, f64::INFINITY, &mut r).unwrap();
            let first = path.first_merger().unwrap();
            assert_eq!(first.merged.len(), 5);
            first.time * 2.0 / (c * c)
        })
        .collect();
    assert!(ks_exponential(&times).unwrap() < 1.63 / 100.0);
}

#[test]
fn merged_subsets_are_exchangeable() {
    let large = ClassLaw::point(0.3, 1.0, 0.6).unwrap();
    let mut r = rng(8);
    let mut counts: HashMap<Vec<Vec<usize>>, usize> = HashMap::new();
    let mut pairs = 0;
    while pairs < 12_000 {
        let path = sample_lambda_beta_c(4, 1.0, 0.0, &large, f64::INFINITY, &mut r).unwrap();
        let first = path.first_merger().unwrap();
        if first.merged.len() == 2 {
            *counts.entry(first.merged.clone()).or_default() += 1;
            pairs += 1;
        }
    }
    assert_eq!(counts.len(), 6);
    let e = pairs as f64 / 6.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 0.999 quantile of chi-square with 5 degrees of freedom
    assert!(chi2 < 20.515, "{chi2}");
}

#[test]
fn spatial_limit_without_motion_keeps_labels() {
    let large = ClassLaw::point(0.1, 1.0, 0.0).unwrap();
    let x = [Point::new(0.1, 0.2), Point::new(-0.3, 0.4)];
    let rec = sample_spatial_limit(&x, 0.0, 1.0, &large, 1.0, 5.0, true, &mut rng(9)).unwrap();
    assert_eq!(rec.final_state.blocks()[0].label, x[0]);
    assert_eq!(rec.final_state.blocks()[1].label, x[1]);
}

#[test]
fn spatial_limit_brownian_variance() {
    let large = ClassLaw::point(0.1, 1.0, 0.0).unwrap();
    let (b, sigma2, t) = (0.5, 0.8, 0.01);
    let mut r = rng(10);
    let n = 100_000;
    let unit = Torus::new(1.0).unwrap();
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..n {
        let rec = sample_spatial_limit(&[Point::ORIGIN], b, 1.0, &large, sigma2, t, false, &mut r).unwrap();
        let d = unit.displacement(Point::ORIGIN, rec.final_state.blocks()[0].label);
        sx += d.0 * d.0;
        sy += d.1 * d.1;
    }
    let want = b * sigma2 * t;
    assert!((sx / n as f64 / want - 1.0).abs() < 0.02);
    assert!((sy / n as f64 / want - 1.0).abs() < 0.02);
}

#[test]
fn spatial_limit_full_impact_merges_covered_labels() {
    let large = ClassLaw::point(FRAC_1_SQRT_2, 1.0, 1.0).unwrap();
    let x = [Point::new(0.1, 0.2), Point::new(-0.3, 0.4), Point::new(0.45, -0.45)];
    let rec = sample_spatial_limit(&x, 0.0, 1.0, &large, 1.0, f64::INFINITY, true, &mut rng(11)).unwrap();
    assert_eq!(rec.events.len(), 1);
    assert_eq!(rec.final_state.len(), 1);
}

#[test]
fn ks_reference_cases() {
    assert_eq!(ks_exponential(&[0.0; 20]).unwrap(), 1.0);
    assert!(ks_exponential(&[]).is_err());
    let m = 10_000;
    let grid: Vec<f64> = (0..m)
        .map(|i| -(1.0 - (i as f64 + 0.5) / m as f64).ln())
        .collect();
    assert!(ks_exponential(&grid).unwrap() <= 0.5 / m as f64 + 1e-12);
    let mut r = rng(12);
    let draws: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut r)).collect();
    assert!(ks_exponential(&draws).unwrap() < 1.63 / (m as f64).sqrt());
}

#[test]
fn lambda_chain_matches_simulated_block_counts() {
    let large = ClassLaw::point(0.4, 1.0, 0.7).unwrap();
    let beta = 0.05;
    let chain = BlockCountChain::lambda_beta_c(4, 1.0, beta, &large).unwrap();
    let t = 3.0;
    let p = chain.distribution(t);
    let mut r = rng(13);
    let trials = 40_000;
    let mut counts = [0usize; 5];
    for _ in 0..trials {
        let path = sample_lambda_beta_c(4, 1.0, beta, &large, t, &mut r).unwrap();
        counts[path.block_count_at(t)] += 1;
    }
    for j in 1..=4 {
        assert!(binomial_ok(counts[j], trials, p[j]), "j = {j}: {} vs {}", counts[j], p[j]);
    }
}
