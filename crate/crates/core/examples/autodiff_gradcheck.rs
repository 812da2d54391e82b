//! Reverse-mode gradients on the tape checked against central differences.
//!
//! Run with: cargo run --example autodiff_gradcheck

use neural_fgp::autodiff::{Tape, Tensor};

// f(A, x) = log(1 + ‖softplus(A x)‖₂) + mean(exp(−x))
fn build(tape: &mut Tape, a: &Tensor, x: &Tensor) -> neural_fgp::Result<(f64, Vec<f64>)> {
    let av = tape.leaf(a.clone());
    let xv = tape.leaf(x.clone());
    let ax = tape.matmul(av, xv)?;
    let h = tape.softplus(ax);
    let norm = tape.norm(h);
    let shifted = tape.add_scalar(norm, 1.0);
    let first = tape.log(shifted);
    let neg = tape.scale(xv, -1.0);
    let e = tape.exp(neg);
    let second = tape.mean(e);
    let f = tape.add(first, second)?;
    tape.backward(f)?;
    let value = tape.value(f).item()?;
    Ok((
        value,
        tape.grad(xv).expect("x is on the tape").data().to_vec(),
    ))
}

fn main() -> neural_fgp::Result<()> {
    let a = Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1])?;
    let x = Tensor::column(vec![0.4, -0.2]);
    let (value, grad) = build(&mut Tape::new(), &a, &x)?;
    println!("f = {value:.10}");

    let h = 1e-5;
    for i in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let fd = (build(&mut Tape::new(), &a, &up)?.0 - build(&mut Tape::new(), &a, &down)?.0)
            / (2.0 * h);
        println!(
            "df/dx{i}: tape {:+.10}  finite difference {:+.10}  |diff| {:.1e}",
            grad[i],
            fd,
            (grad[i] - fd).abs()
        );
    }
    Ok(())
}
