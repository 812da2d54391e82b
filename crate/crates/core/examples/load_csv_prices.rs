//! Read a wide price CSV with gaps, select tickers and normalise to weights.
//!
//! Run with: cargo run --example load_csv_prices [file.csv]

use neural_fgp::market_data::{load_prices_csv, normalize_to_weights, read_prices_csv};

const SAMPLE: &str = "\
date,AAPL,MSFT,GOOG
2024-01-02,185.6,,139.6
2024-01-03,184.3,370.6,140.4
2024-01-04,181.9,368.0,
2024-01-05,181.2,367.8,137.4
2024-01-08,185.6,374.7,140.5
";

fn main() -> neural_fgp::Result<()> {
    let prices = match std::env::args().nth(1) {
        Some(path) => load_prices_csv(path, None)?,
        None => {
            let keep = ["GOOG".to_string(), "AAPL".to_string(), "MSFT".to_string()];
            read_prices_csv(SAMPLE.as_bytes(), Some(&keep))?
        }
    };
    // The first row lacks MSFT and is dropped; the GOOG gap is forward-filled.
    println!("{} rows, tickers {:?}", prices.n_rows(), prices.tickers());
    let weights = normalize_to_weights(&prices)?;
    for (date, row) in prices.dates().iter().zip(weights.rows()) {
        let cells: Vec<String> = row.iter().map(|w| format!("{w:.4}")).collect();
        println!("{date}  {}", cells.join("  "));
    }
    Ok(())
}
