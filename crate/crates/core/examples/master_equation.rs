//! Pathwise decomposition of log relative wealth into the change in log G and
//! the accumulated drift, with the discretisation residual.
//!
//! Run with: cargo run --example master_equation

use neural_fgp::backtest::{estimate_tau, master_residual, MasterOptions};
use neural_fgp::fgp::Generator;
use neural_fgp::icnn::IcnnParams;
use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig};

fn main() -> neural_fgp::Result<()> {
    let path = normalize_to_weights(&gbm_simulate(&GbmConfig::default())?)?;
    let generators = vec![
        Generator::Constant,
        Generator::EqualWeight,
        Generator::diversity(0.5)?,
        Generator::Entropy,
        Generator::Neural(Box::new(IcnnParams::init(path.n_assets(), &[8], 3)?)),
    ];
    let opts = MasterOptions {
        neural_finite_difference: true,
    };
    println!(
        "{:<12} {:>12} {:>12} {:>12} {:>12}",
        "generator", "log V_T", "log G ratio", "drift", "residual"
    );
    for g in &generators {
        let m = master_residual(g, &path, opts)?;
        println!(
            "{:<12} {:>+12.6} {:>+12.6} {:>+12.6} {:>+12.2e}",
            g.label(),
            m.log_v,
            m.log_g_ratio,
            m.drift_integral,
            m.residual
        );
    }

    let tau = estimate_tau(&path)?;
    println!("\nrealised covariation of log market weights:");
    for row in &tau {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.5}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}
