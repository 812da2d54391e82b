//! A randomly initialised ICNN as a concave generating function: values,
//! log-gradients, a midpoint concavity probe and a JSON round trip.
//!
//! Run with: cargo run --example icnn_generating_function

use neural_fgp::fgp::neural_weights;
use neural_fgp::fgp::GRAD_CLIP;
use neural_fgp::icnn::IcnnParams;

fn main() -> neural_fgp::Result<()> {
    let theta = IcnnParams::init(3, &[16, 16], 7)?;
    println!(
        "{} parameters, feasible: {}",
        theta.param_count(),
        theta.is_feasible()
    );

    let uniform = [1.0 / 3.0; 3];
    let tilted = [0.6, 0.3, 0.1];
    for x in [uniform, tilted] {
        let g = theta.generating_function(&x)?;
        let grad = theta.grad_log_g(&x)?;
        let w = neural_weights(&theta, &x, GRAD_CLIP)?;
        println!(
            "x = {x:.3?}  G = {g:.5}  grad log G = {grad:.4?}  weights = {:.4?}",
            w.as_slice()
        );
    }

    let mid: Vec<f64> = uniform
        .iter()
        .zip(&tilted)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let lhs = theta.generating_function(&mid)?;
    let rhs = 0.5 * (theta.generating_function(&uniform)? + theta.generating_function(&tilted)?);
    println!(
        "G(midpoint) = {lhs:.6} >= average of endpoints {rhs:.6}: {}",
        lhs >= rhs
    );

    let text = theta.to_json()?;
    let back = IcnnParams::from_json(&text)?;
    println!(
        "JSON round trip: {} bytes, identical = {}",
        text.len(),
        back == theta
    );
    Ok(())
}
