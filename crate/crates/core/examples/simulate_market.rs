//! Simulate a GBM market, write it as CSV and look at the market weights.
//!
//! Run with: cargo run --example simulate_market [seed] [out.csv]

use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig};

fn main() -> neural_fgp::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let out = args.next();

    let cfg = GbmConfig {
        seed,
        ..GbmConfig::default()
    };
    let prices = gbm_simulate(&cfg)?;
    let weights = normalize_to_weights(&prices)?;
    println!(
        "{} days x {} assets (seed {seed}), tickers {:?}",
        prices.n_rows(),
        prices.n_assets(),
        prices.tickers()
    );

    let last = prices.n_rows() - 1;
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "asset", "price_T", "mu_0", "mu_T"
    );
    for (i, name) in prices.tickers().iter().enumerate() {
        println!(
            "{name:>6} {:>10.4} {:>10.4} {:>10.4}",
            prices.prices()[last][i],
            weights.row(0)[i],
            weights.row(last)[i]
        );
    }

    if let Some(path) = out {
        prices.save_csv(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}
