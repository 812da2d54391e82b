//! Train the neural generating function on one 200-day window and compare the
//! trained portfolio with the market on the following 20 days.
//!
//! Run with: cargo run --release --example train_neural_fgp [epochs]

use neural_fgp::backtest::relative_wealth;
use neural_fgp::fgp::{classical_weights, neural_weights, Generator};
use neural_fgp::icnn::IcnnParams;
use neural_fgp::market_data::{gbm_simulate, normalize_to_weights, GbmConfig};
use neural_fgp::training::{train_window, TrainConfig};

fn main() -> neural_fgp::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let path = normalize_to_weights(&gbm_simulate(&GbmConfig::default())?)?;
    let train = path.slice(0, 201)?;
    let test = path.slice(200, 221)?;

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let theta0 = IcnnParams::init(path.n_assets(), &cfg.widths, 1)?;
    let outcome = train_window(&theta0, &train, &cfg)?;
    for rec in outcome.log.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:>4}  loss {:+.6e}  log V_T {:+.5}  penalty {:.3e}  hinge {:.3e}",
            rec.epoch, rec.loss.total, rec.loss.log_v, rec.loss.penalty, rec.loss.hinge
        );
    }
    println!(
        "best loss {:+.6e} at epoch {}",
        outcome.best_loss, outcome.best_epoch
    );

    let theta = outcome.params;
    let neural = relative_wealth(|x| neural_weights(&theta, x, cfg.grad_clip), &test)?;
    let ewp = relative_wealth(|x| classical_weights(&Generator::EqualWeight, x), &test)?;
    println!(
        "out of sample log V: neural {:+.6}  ewp {:+.6}",
        neural.terminal().ln(),
        ewp.terminal().ln()
    );
    println!(
        "weights at the last training point: {:.4?}",
        neural_weights(&theta, train.row(200), cfg.grad_clip)?.as_slice()
    );
    Ok(())
}
