//! Classical functionally generated portfolios: weights at one point and
//! relative wealth against the market on a simulated path.
//!
//! Run with: cargo run --example classical_portfolios

use neural_fgp::backtest::relative_wealth;
use neural_fgp::fgp::{classical_weights, Generator};
use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig};

fn main() -> neural_fgp::Result<()> {
    let generators = vec![
        Generator::Constant,
        Generator::EqualWeight,
        Generator::diversity(0.3)?,
        Generator::diversity(0.5)?,
        Generator::diversity(0.8)?,
        Generator::Entropy,
    ];

    let x = [0.5, 0.3, 0.15, 0.05];
    println!("weights at mu = {x:?}");
    for g in &generators {
        let w = classical_weights(g, &x)?;
        let cells: Vec<String> = w.iter().map(|v| format!("{v:.4}")).collect();
        println!("  {:<10} {}", g.label(), cells.join("  "));
    }

    let prices = gbm_simulate(&GbmConfig::default())?;
    let path = normalize_to_weights(&prices)?;
    println!("\nlog V_T over {} simulated days", path.len() - 1);
    for g in &generators {
        let v = relative_wealth(|x| classical_weights(g, x), &path)?;
        println!("  {:<10} {:+.6}", g.label(), v.terminal().ln());
    }
    Ok(())
}
