//! Full walk-forward comparison of the neural FGP against classical benchmarks
//! on simulated GBM markets.
//!
//! Run with: cargo run --release --example walk_forward_backtest [seed] [epochs]

use std::time::Instant;

use neural_fgp::backtest::{summarize, walk_forward, WalkForwardConfig};
use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig};
use neural_fgp::report::format_summary_table;
use neural_fgp::training::TrainConfig;

fn main() -> neural_fgp::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let prices = gbm_simulate(&GbmConfig {
        seed,
        ..GbmConfig::default()
    })?;
    let weights = normalize_to_weights(&prices)?;
    let cfg = WalkForwardConfig {
        train: TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        },
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..WalkForwardConfig::default()
    };

    let started = Instant::now();
    let report = walk_forward(&weights, &cfg)?;
    println!("K = {} windows in {:.1?}\n", report.k(), started.elapsed());
    print!("{}", format_summary_table(&summarize(&report)?));
    Ok(())
}
