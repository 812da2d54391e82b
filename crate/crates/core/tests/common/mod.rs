#![allow(dead_code)]

use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig, MarketWeightPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the open simplex (normalised exponentials).
pub fn simplex_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-12)
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn gbm_weights(n: usize, days: usize, seed: u64) -> MarketWeightPath {
    let cfg = GbmConfig {
        n_assets: n,
        n_days: days,
        seed,
        ..GbmConfig::default()
    };
    normalize_to_weights(&gbm_simulate(&cfg).unwrap()).unwrap()
}

pub fn assert_self_financing(w: &[f64]) {
    let s: f64 = w.iter().sum();
    assert!((s - 1.0).abs() < 1e-10, "weights sum to {s}");
    assert!(w.iter().all(|&v| v > 0.0), "non-positive weight in {w:?}");
}

/// Every parameter drawn from U(−1, 1), projected onto the constraints, with
/// `c` shifted so that `G(uniform)` lands in [0.5, 3).
pub fn random_theta(n: usize, widths: &[usize], seed: u64) -> neural_fgp::icnn::IcnnParams {
    let mut p = neural_fgp::icnn::IcnnParams::init(n, widths, seed).unwrap();
    let mut rng = rng(seed + 500);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    p.project_constraints();
    let uniform = vec![1.0 / n as f64; n];
    let f0 = p.forward(&uniform).unwrap().0;
    p.offset -= f0 + rng.gen_range(0.5..3.0);
    p
}
