//! Adam training of the neural generating function on one window.
//!
//! The objective over a window `x₀..x_T` is
//!
//! ```text
//! L(θ) = −(1/T) log V_T + λ · (1/T) Σₜ ‖π_θ(xₜ)‖₂ + λ_pos · meanₜ max(0, δ_pos − G_θ(xₜ))²
//! log V_T = Σₛ log Σᵢ π_θ,ᵢ(xₛ₋₁) · xₛ,ᵢ / xₛ₋₁,ᵢ
//! ```

use std::io::Write;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fgp::{neural_weights_on_tape, GRAD_CLIP};
use crate::icnn::{IcnnParams, ParamVars};
use crate::market_data::MarketWeightPath;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight-norm penalty `λ`.
    pub lambda_l2: f64,
    /// Coefficient of the positivity hinge on `G`.
    pub lambda_pos: f64,
    /// Margin below which `G` is penalised.
    pub delta_pos: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Componentwise cap on `∇ₓ log G`.
    pub grad_clip: f64,
    /// Hidden widths used when a fresh network is initialised.
    pub widths: Vec<usize>,
    pub seed: u64,
    /// Start each walk-forward window from the previous window's parameters.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l2: 1e-3,
            lambda_pos: 1.0,
            delta_pos: 0.1,
            learning_rate: 1e-3,
            epochs: 300,
            grad_clip: GRAD_CLIP,
            widths: vec![64, 64],
            seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda_l2),
            ("lambda_pos", self.lambda_pos),
            ("delta_pos", self.delta_pos),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "gradient clip must be > 0, got {}",
                self.grad_clip
            )));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid widths {:?}", self.widths)));
        }
        Ok(())
    }
}

/// Evaluated loss components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub log_v: f64,
    pub penalty: f64,
    pub hinge: f64,
}

/// Tape handles of the loss and its components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub log_v: Var,
    pub penalty: Var,
    pub hinge: Var,
    /// Portfolio weights `n×T`, column `t` held over step `t → t+1`.
    pub weights: Var,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        let item = |v: Var| tape.value(v).data()[0];
        LossBreakdown {
            total: item(self.total),
            log_v: item(self.log_v),
            penalty: item(self.penalty),
            hinge: item(self.hinge),
        }
    }
}

/// Start points (`n×T`) and gross returns `xₛ/xₛ₋₁` (`n×T`) of a window.
fn window_matrices(window: &MarketWeightPath) -> Result<(Tensor, Tensor)> {
    if window.len() < 2 {
        return Err(Error::Config(format!(
            "training window needs at least 2 rows, got {}",
            window.len()
        )));
    }
    let n = window.n_assets();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 assets, got {n}")));
    }
    let steps = window.len() - 1;
    let mut start = Tensor::zeros(n, steps);
    let mut ratio = Tensor::zeros(n, steps);
    for s in 0..steps {
        let (prev, next) = (window.row(s), window.row(s + 1));
        for i in 0..n {
            start.set(i, s, prev[i]);
            ratio.set(i, s, next[i] / prev[i]);
        }
    }
    Ok((start, ratio))
}

/// Build the loss on `tape`.
pub fn loss_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    theta: &IcnnParams,
    window: &MarketWeightPath,
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    let (start, ratio) = window_matrices(window)?;
    let steps = start.cols() as f64;
    let x = tape.leaf(start);
    let r = tape.leaf(ratio);
    let (weights, g) = neural_weights_on_tape(tape, vars, theta, x, cfg.grad_clip)?;

    let growth = tape.mul(weights, r)?;
    let step_returns = tape.col_sums(growth);
    if let Some(s) = tape
        .value(step_returns)
        .data()
        .iter()
        .position(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::Numeric(format!(
            "relative return at step {} is {}",
            s + 1,
            tape.value(step_returns).data()[s]
        )));
    }
    let logs = tape.log(step_returns);
    let log_v = tape.sum(logs);

    let sq = tape.square(weights);
    let sq = tape.col_sums(sq);
    let norms = tape.sqrt(sq);
    let mean_norm = tape.mean(norms);
    let penalty = tape.scale(mean_norm, cfg.lambda_l2);

    let neg_g = tape.scale(g, -1.0);
    let gap = tape.add_scalar(neg_g, cfg.delta_pos);
    let gap = tape.max_scalar(gap, 0.0);
    let gap_sq = tape.square(gap);
    let mean_gap = tape.mean(gap_sq);
    let hinge = tape.scale(mean_gap, cfg.lambda_pos);

    let objective = tape.scale(log_v, -1.0 / steps);
    let total = tape.add(objective, penalty)?;
    let total = tape.add(total, hinge)?;
    let value = tape.value(total).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    Ok(LossTerms {
        total,
        log_v,
        penalty,
        hinge,
        weights,
    })
}

pub fn loss(
    theta: &IcnnParams,
    window: &MarketWeightPath,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, theta);
    let terms = loss_on_tape(&mut tape, &vars, theta, window, cfg)?;
    Ok(terms.values(&tape))
}

/// Loss components and `∂L/∂θ` in parameter layout.
pub fn loss_and_grad(
    theta: &IcnnParams,
    window: &MarketWeightPath,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, IcnnParams)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, theta);
    let terms = loss_on_tape(&mut tape, &vars, theta, window, cfg)?;
    tape.backward(terms.total)?;
    Ok((terms.values(&tape), vars.gradients(&tape, theta)))
}

/// First and second moment estimates shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(theta: &IcnnParams) -> Self {
        let zeros: Vec<Vec<f64>> = theta.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update followed by constraint projection.
pub fn adam_step(
    theta: &mut IcnnParams,
    grads: &IcnnParams,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let shapes_match = grad_tensors.len() == state.first.len()
        && grad_tensors
            .iter()
            .zip(&state.first)
            .all(|(g, m)| g.len() == m.len());
    if !shapes_match || theta.tensors().len() != grad_tensors.len() {
        return Err(Error::dim(
            "adam_step",
            "gradient layout does not match parameters",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (((param, g), m), v) in theta
        .slices_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((p, &gi), mi), vi) in param
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    theta.project_constraints();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded loss.
    pub params: IcnnParams,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub adam_steps: u64,
}

/// Full-batch Adam on one window. Each epoch records the loss at the current
/// parameters and then takes one step.
pub fn train_window(
    theta0: &IcnnParams,
    window: &MarketWeightPath,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    theta0.validate()?;
    if window.n_assets() != theta0.n {
        return Err(Error::dim(
            "train_window",
            format!(
                "network has {} inputs, window has {} assets",
                theta0.n,
                window.n_assets()
            ),
        ));
    }
    let mut theta = theta0.projected();
    let mut state = AdamState::new(&theta);
    let mut best = (f64::INFINITY, 0, theta.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (values, grads) = loss_and_grad(&theta, window, cfg)?;
        log.push(EpochRecord {
            epoch,
            loss: values,
        });
        if values.total < best.0 {
            best = (values.total, epoch, theta.clone());
        }
        adam_step(&mut theta, &grads, &mut state, cfg.learning_rate)?;
    }
    Ok(TrainOutcome {
        params: best.2,
        best_loss: best.0,
        best_epoch: best.1,
        log,
        adam_steps: state.step,
    })
}

/// `epoch,loss,log_v_t,penalty,hinge`, one row per epoch.
pub fn write_training_log<W: Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "log_v_t", "penalty", "hinge"])?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.loss.total.to_string(),
            r.loss.log_v.to_string(),
            r.loss.penalty.to_string(),
            r.loss.hinge.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(rows: Vec<Vec<f64>>) -> MarketWeightPath {
        MarketWeightPath::from_rows(rows).unwrap()
    }

    fn trending(steps: usize) -> MarketWeightPath {
        window(
            (0..=steps)
                .map(|t| {
                    let a = 0.3 + 0.4 * t as f64 / steps as f64;
                    vec![a, 1.0 - a]
                })
                .collect(),
        )
    }

    #[test]
    fn market_network_has_zero_log_return() {
        let theta = IcnnParams::constant(2, &[3], -2.0).unwrap();
        let w = window(vec![vec![0.5, 0.5], vec![0.6, 0.4], vec![0.3, 0.7]]);
        let cfg = TrainConfig {
            lambda_l2: 0.0,
            ..TrainConfig::default()
        };
        let l = loss(&theta, &w, &cfg).unwrap();
        assert!(l.log_v.abs() < 1e-15);
        assert_eq!(l.hinge, 0.0);
        assert!(l.total.abs() < 1e-15);

        let cfg = TrainConfig::default();
        let l = loss(&theta, &w, &cfg).unwrap();
        let norms = [0.5f64.sqrt(), (0.36f64 + 0.16).sqrt()];
        let expected = 1e-3 * (norms[0] + norms[1]) / 2.0;
        assert!((l.total - expected).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_linear_instance() {
        // f = uᵀx + c with u = (1, 0), c = -3: G = 3 - x₀, ∇log G = (-1/G, 0)
        let mut theta = IcnnParams::constant(2, &[2], -3.0).unwrap();
        theta.out_linear = Tensor::column(vec![1.0, 0.0]);
        let rows = vec![vec![0.5, 0.5], vec![0.6, 0.4], vec![0.3, 0.7]];
        let w = window(rows.clone());
        let cfg = TrainConfig::default();

        let mut log_v = 0.0;
        let mut norm_sum = 0.0;
        for s in 1..3 {
            let x = &rows[s - 1];
            let g = 3.0 - x[0];
            let g0 = -1.0 / g;
            let mean = x[0] * g0;
            let pi = [x[0] * (g0 + 1.0 - mean), x[1] * (1.0 - mean)];
            log_v += (pi[0] * rows[s][0] / x[0] + pi[1] * rows[s][1] / x[1]).ln();
            norm_sum += (pi[0] * pi[0] + pi[1] * pi[1]).sqrt();
        }
        let expected = -log_v / 2.0 + 1e-3 * norm_sum / 2.0;
        let l = loss(&theta, &w, &cfg).unwrap();
        assert!((l.log_v - log_v).abs() < 1e-15);
        assert!((l.total - expected).abs() < 1e-15);
    }

    #[test]
    fn hinge_activates_for_small_g() {
        let theta = IcnnParams::constant(2, &[2], -0.05).unwrap();
        let w = window(vec![vec![0.5, 0.5], vec![0.6, 0.4]]);
        let l = loss(&theta, &w, &TrainConfig::default()).unwrap();
        assert!((l.hinge - 0.05f64 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_windows_and_bad_configs() {
        let theta = IcnnParams::constant(2, &[2], -1.0).unwrap();
        let w = window(vec![vec![0.5, 0.5]]);
        assert!(matches!(
            loss(&theta, &w, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
        let good = trending(3);
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda_l2: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train_window(&theta, &good, &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut theta = IcnnParams::init(3, &[4], 1).unwrap();
        let before = theta.clone();
        let zero = IcnnParams::constant(3, &[4], 0.0).unwrap();
        let mut state = AdamState::new(&theta);
        adam_step(&mut theta, &zero, &mut state, 0.1).unwrap();
        assert_eq!(theta, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut theta = IcnnParams::constant(2, &[1], 0.0).unwrap();
        let mut grads = IcnnParams::constant(2, &[1], 0.0).unwrap();
        grads.offset = 1.0;
        let mut state = AdamState::new(&theta);
        adam_step(&mut theta, &grads, &mut state, 0.1).unwrap();
        assert!((theta.offset + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_projects_constrained_entries() {
        let mut theta = IcnnParams::constant(2, &[2], 0.0).unwrap();
        theta.out_hidden = Tensor::column(vec![0.05, 0.05]);
        let mut grads = IcnnParams::constant(2, &[2], 0.0).unwrap();
        grads.out_hidden = Tensor::column(vec![1.0, -1.0]);
        let mut state = AdamState::new(&theta);
        adam_step(&mut theta, &grads, &mut state, 0.1).unwrap();
        assert_eq!(theta.out_hidden.data()[0], 0.0);
        assert!(theta.out_hidden.data()[1] > 0.05);
    }

    #[test]
    fn one_epoch_is_one_step() {
        let theta = IcnnParams::init(2, &[3], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            widths: vec![3],
            ..TrainConfig::default()
        };
        let out = train_window(&theta, &trending(5), &cfg).unwrap();
        assert_eq!(out.adam_steps, 1);
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.params, theta);
    }

    #[test]
    fn training_is_deterministic_and_best_of() {
        let theta = IcnnParams::init(2, &[4], 5).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 0.01,
            widths: vec![4],
            ..TrainConfig::default()
        };
        let w = trending(20);
        let a = train_window(&theta, &w, &cfg).unwrap();
        let b = train_window(&theta, &w, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.best_loss <= a.log[0].loss.total);
        assert_eq!(a.best_loss, a.log[a.best_epoch].loss.total);
        assert!(a.params.is_feasible());
    }

    #[test]
    fn learns_to_overweight_trending_asset() {
        let w = trending(40);
        let theta = IcnnParams::init(2, &[4], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            widths: vec![4],
            ..TrainConfig::default()
        };
        let out = train_window(&theta, &w, &cfg).unwrap();
        let mut tilt = 0.0;
        for t in 0..40 {
            let x = w.row(t);
            let pi = crate::fgp::neural_weights(&out.params, x, cfg.grad_clip).unwrap();
            tilt += pi[0] - x[0];
        }
        assert!(tilt / 40.0 > 0.0, "mean tilt {}", tilt / 40.0);
        assert!(out.best_loss < out.log[0].loss.total);
    }

    #[test]
    fn training_log_has_one_row_per_epoch() {
        let theta = IcnnParams::init(2, &[3], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            widths: vec![3],
            ..TrainConfig::default()
        };
        let out = train_window(&theta, &trending(5), &cfg).unwrap();
        let mut buf = Vec::new();
        write_training_log(&out.log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,loss,log_v_t,penalty,hinge");
        assert_eq!(lines.len(), 4);
    }
}
