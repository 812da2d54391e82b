//! Relative wealth, walk-forward evaluation and master-equation diagnostics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fgp::{classical_weights, neural_weights, Generator, PortfolioWeights};
use crate::icnn::IcnnParams;
use crate::market_data::MarketWeightPath;
use crate::training::{train_window, TrainConfig};

/// Seed of the fresh network for window `index` (1-based).
pub fn window_init_seed(seed: u64, index: usize) -> u64 {
    seed + index as u64
}

/// Wealth of a strategy divided by market wealth, starting at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeWealthPath {
    pub v: Vec<f64>,
}

impl RelativeWealthPath {
    pub fn terminal(&self) -> f64 {
        *self.v.last().expect("relative wealth path is never empty")
    }
}

/// `V_t = Π_{s≤t} Σᵢ πᵢ(x_{s−1}) x_{s,i} / x_{s−1,i}`, weights from `x_{s−1}` only.
pub fn relative_wealth<F>(weights: F, path: &MarketWeightPath) -> Result<RelativeWealthPath>
where
    F: Fn(&[f64]) -> Result<PortfolioWeights>,
{
    if path.len() < 2 {
        return Err(Error::Data(format!(
            "relative wealth needs at least 2 rows, got {}",
            path.len()
        )));
    }
    let mut v = Vec::with_capacity(path.len());
    v.push(1.0);
    let mut current = 1.0;
    for s in 1..path.len() {
        let (prev, next) = (path.row(s - 1), path.row(s));
        let pi = weights(prev)?;
        let growth: f64 = pi
            .iter()
            .zip(prev.iter().zip(next))
            .map(|(w, (a, b))| w * b / a)
            .sum();
        if !(growth.is_finite() && growth > 0.0) {
            return Err(Error::Data(format!("relative return {growth} at step {s}")));
        }
        current *= growth;
        v.push(current);
    }
    Ok(RelativeWealthPath { v })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    /// Retrained on every window.
    NeuralFgp,
    Classical(Generator),
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::NeuralFgp => "neural_fgp".into(),
            Strategy::Classical(g) => g.label(),
        }
    }

    /// Neural FGP, EWP, market and DWP for each exponent.
    pub fn benchmark_set(p_vals: &[f64]) -> Result<Vec<Strategy>> {
        let mut out = vec![
            Strategy::NeuralFgp,
            Strategy::Classical(Generator::EqualWeight),
            Strategy::Classical(Generator::Constant),
        ];
        for &p in p_vals {
            out.push(Strategy::Classical(Generator::diversity(p)?));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkForwardConfig {
    pub train_days: usize,
    pub test_days: usize,
    pub strategies: Vec<Strategy>,
    pub train: TrainConfig,
    /// Worker threads for independent windows.
    pub jobs: usize,
    /// Report running products of the per-window terminal values.
    pub chain: bool,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        Self {
            train_days: 200,
            test_days: 20,
            strategies: Strategy::benchmark_set(&[0.3, 0.5, 0.8]).expect("valid exponents"),
            train: TrainConfig::default(),
            jobs: 1,
            chain: false,
        }
    }
}

impl WalkForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_days < 2 {
            return Err(Error::Config(format!(
                "train_days must be >= 2, got {}",
                self.train_days
            )));
        }
        if self.test_days < 1 {
            return Err(Error::Config("test_days must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        for s in &self.strategies {
            if let Strategy::Classical(g) = s {
                if matches!(g, Generator::Neural(_)) {
                    return Err(Error::Config(
                        "use Strategy::NeuralFgp for the trained portfolio".into(),
                    ));
                }
                g.validate()?;
            }
        }
        if self.strategies.contains(&Strategy::NeuralFgp) {
            self.train.validate()?;
        }
        Ok(())
    }
}

/// `K = (N − (train + test)) / test` with integer division.
pub fn window_count(n_rows: usize, train_days: usize, test_days: usize) -> usize {
    n_rows.saturating_sub(train_days + test_days) / test_days
}

/// Row indices of one walk-forward window (all inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowBounds {
    pub index: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub test_end: usize,
}

impl WindowBounds {
    /// Window `k` (1-based).
    pub fn new(k: usize, train_days: usize, test_days: usize) -> Self {
        let train_start = (k - 1) * test_days;
        Self {
            index: k,
            train_start,
            train_end: train_start + train_days,
            test_end: train_start + train_days + test_days,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkForwardReport {
    pub strategies: Vec<String>,
    pub windows: Vec<WindowBounds>,
    /// `terminal[strategy][window]`: per-window terminal relative wealth.
    pub terminal: Vec<Vec<f64>>,
    pub chained: bool,
}

impl WalkForwardReport {
    pub fn k(&self) -> usize {
        self.windows.len()
    }

    /// Values for output: per-window, or running products when chained.
    pub fn reported_values(&self, strategy: usize) -> Vec<f64> {
        let per_window = &self.terminal[strategy];
        if !self.chained {
            return per_window.clone();
        }
        per_window
            .iter()
            .scan(1.0, |acc, v| {
                *acc *= v;
                Some(*acc)
            })
            .collect()
    }
}

/// Train-and-evaluate over sliding windows.
pub fn walk_forward(path: &MarketWeightPath, cfg: &WalkForwardConfig) -> Result<WalkForwardReport> {
    cfg.validate()?;
    let k = window_count(path.len(), cfg.train_days, cfg.test_days);
    if k < 1 {
        return Err(Error::Config(format!(
            "walk-forward needs at least {} rows for one window, got {}",
            cfg.train_days + 2 * cfg.test_days,
            path.len()
        )));
    }
    let windows: Vec<WindowBounds> = (1..=k)
        .map(|i| WindowBounds::new(i, cfg.train_days, cfg.test_days))
        .collect();
    let needs_training = cfg.strategies.contains(&Strategy::NeuralFgp);

    let per_window: Vec<Vec<f64>> = if cfg.train.warm_start && needs_training {
        let mut previous: Option<IcnnParams> = None;
        let mut out = Vec::with_capacity(k);
        for w in &windows {
            let (values, trained) = run_window(path, w, cfg, previous.as_ref())?;
            previous = trained;
            out.push(values);
        }
        out
    } else if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
        pool.install(|| {
            windows
                .par_iter()
                .map(|w| run_window(path, w, cfg, None).map(|(v, _)| v))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        windows
            .iter()
            .map(|w| run_window(path, w, cfg, None).map(|(v, _)| v))
            .collect::<Result<Vec<_>>>()?
    };

    let terminal = (0..cfg.strategies.len())
        .map(|s| per_window.iter().map(|w| w[s]).collect())
        .collect();
    Ok(WalkForwardReport {
        strategies: cfg.strategies.iter().map(Strategy::label).collect(),
        windows,
        terminal,
        chained: cfg.chain,
    })
}

/// Terminal relative wealth of every strategy on one window's test slice.
fn run_window(
    path: &MarketWeightPath,
    bounds: &WindowBounds,
    cfg: &WalkForwardConfig,
    warm: Option<&IcnnParams>,
) -> Result<(Vec<f64>, Option<IcnnParams>)> {
    let test = path.slice(bounds.train_end, bounds.test_end + 1)?;
    let mut trained = None;
    let mut out = Vec::with_capacity(cfg.strategies.len());
    for strategy in &cfg.strategies {
        let v = match strategy {
            Strategy::NeuralFgp => {
                let train = path.slice(bounds.train_start, bounds.train_end + 1)?;
                let theta0 = match warm {
                    Some(theta) => theta.clone(),
                    None => IcnnParams::init(
                        path.n_assets(),
                        &cfg.train.widths,
                        window_init_seed(cfg.train.seed, bounds.index),
                    )?,
                };
                let outcome = train_window(&theta0, &train, &cfg.train)?;
                let theta = outcome.params;
                let clip = cfg.train.grad_clip;
                let v = relative_wealth(|x| neural_weights(&theta, x, clip), &test)?.terminal();
                trained = Some(theta);
                v
            }
            Strategy::Classical(g) => {
                relative_wealth(|x| classical_weights(g, x), &test)?.terminal()
            }
        };
        out.push(v);
    }
    Ok((out, trained))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    /// `(1/K) Σₖ log V_{T_k}`.
    pub avg_log_relative_return: f64,
    pub k: usize,
}

pub fn summarize(report: &WalkForwardReport) -> Result<Vec<SummaryRow>> {
    let k = report.k();
    if k < 1 {
        return Err(Error::Config(
            "cannot summarise a report without windows".into(),
        ));
    }
    Ok(report
        .strategies
        .iter()
        .zip(&report.terminal)
        .map(|(name, values)| SummaryRow {
            strategy: name.clone(),
            avg_log_relative_return: values.iter().map(|v| v.ln()).sum::<f64>() / k as f64,
            k,
        })
        .collect())
}

/// Realised covariation `Σₛ Δlog μᵢ(s) Δlog μⱼ(s)` over the slice.
pub fn estimate_tau(path: &MarketWeightPath) -> Result<Vec<Vec<f64>>> {
    if path.len() < 2 {
        return Err(Error::Data("covariation needs at least 2 rows".into()));
    }
    let n = path.n_assets();
    let mut tau = vec![vec![0.0; n]; n];
    for s in 1..path.len() {
        let d = log_increment(path, s)?;
        for i in 0..n {
            for j in 0..n {
                tau[i][j] += d[i] * d[j];
            }
        }
    }
    Ok(tau)
}

fn log_increment(path: &MarketWeightPath, s: usize) -> Result<Vec<f64>> {
    let (prev, next) = (path.row(s - 1), path.row(s));
    prev.iter()
        .zip(next)
        .enumerate()
        .map(|(i, (&a, &b))| {
            if a > 0.0 && b > 0.0 {
                Ok(b.ln() - a.ln())
            } else {
                Err(Error::Data(format!(
                    "non-positive weight in column {i} near row {s}"
                )))
            }
        })
        .collect()
}

/// Pathwise terms of the master equation over a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MasterDecomposition {
    pub log_v: f64,
    pub log_g_ratio: f64,
    pub drift_integral: f64,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MasterOptions {
    /// Permit the neural generator, using finite-difference Hessians.
    pub neural_finite_difference: bool,
}

/// Step for the finite-difference Hessian of a neural generator.
pub const FD_HESSIAN_STEP: f64 = 1e-4;

/// Decompose `log V_T` into `log G(μ_T)/G(μ₀)` plus the discrete drift sum
/// `Σₛ q(s)` with `q(s) = −1/(2G) Σᵢⱼ D²ᵢⱼG μᵢ μⱼ Δτᵢⱼ(s)` at the left point.
pub fn master_residual(
    generator: &Generator,
    path: &MarketWeightPath,
    opts: MasterOptions,
) -> Result<MasterDecomposition> {
    generator.validate()?;
    if path.len() < 2 {
        return Err(Error::Data(
            "master decomposition needs at least 2 rows".into(),
        ));
    }
    if matches!(generator, Generator::Constant) {
        // the market measured against itself: every term vanishes identically
        return Ok(MasterDecomposition {
            log_v: 0.0,
            log_g_ratio: 0.0,
            drift_integral: 0.0,
            residual: 0.0,
        });
    }
    let hessian = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        match generator {
            Generator::Neural(theta) if opts.neural_finite_difference => {
                Ok(neural_hessian_fd(theta, x))
            }
            Generator::Neural(_) => Err(Error::Config(
                "neural master decomposition requires the finite-difference option".into(),
            )),
            g => g.hessian(x),
        }
    };
    let weights = |x: &[f64]| match generator {
        Generator::Neural(theta) => neural_weights(theta, x, crate::fgp::GRAD_CLIP),
        g => classical_weights(g, x),
    };

    let log_v = relative_wealth(weights, path)?.terminal().ln();
    let first = path.row(0);
    let last = path.row(path.len() - 1);
    let log_g_ratio = (generator.value(last)? / generator.value(first)?).ln();

    let mut drift_integral = 0.0;
    for s in 1..path.len() {
        let x = path.row(s - 1);
        let d = log_increment(path, s)?;
        let h = hessian(x)?;
        let g = generator.value(x)?;
        let mut acc = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                acc += h[i][j] * x[i] * x[j] * d[i] * d[j];
            }
        }
        drift_integral += -acc / (2.0 * g);
    }
    let residual = log_v - log_g_ratio - drift_integral;
    if !residual.is_finite() {
        return Err(Error::Numeric(format!("master residual is {residual}")));
    }
    Ok(MasterDecomposition {
        log_v,
        log_g_ratio,
        drift_integral,
        residual,
    })
}

/// Central-difference Hessian of `G = −f`.
fn neural_hessian_fd(theta: &IcnnParams, x: &[f64]) -> Vec<Vec<f64>> {
    let h = FD_HESSIAN_STEP;
    let n = x.len();
    let g = |dx: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in dx {
            y[i] += d;
        }
        -theta.forward_unchecked(&y).0
    };
    let centre = g(&[]);
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        hess[i][i] = (g(&[(i, h)]) - 2.0 * centre + g(&[(i, -h)])) / (h * h);
        for j in (i + 1)..n {
            let v = (g(&[(i, h), (j, h)]) - g(&[(i, h), (j, -h)]) - g(&[(i, -h), (j, h)])
                + g(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(rows: Vec<Vec<f64>>) -> MarketWeightPath {
        MarketWeightPath::from_rows(rows).unwrap()
    }

    fn ewp(x: &[f64]) -> Result<PortfolioWeights> {
        classical_weights(&Generator::EqualWeight, x)
    }

    #[test]
    fn market_is_the_numeraire() {
        let p = path(vec![
            vec![0.2, 0.3, 0.5],
            vec![0.25, 0.25, 0.5],
            vec![0.1, 0.6, 0.3],
        ]);
        let v = relative_wealth(|x| classical_weights(&Generator::Constant, x), &p).unwrap();
        for val in v.v {
            assert!((val - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_weight_hand_examples() {
        let p = path(vec![vec![0.5, 0.5], vec![0.6, 0.4]]);
        assert!((relative_wealth(ewp, &p).unwrap().terminal() - 1.0).abs() < 1e-15);
        let p = path(vec![vec![0.5, 0.5], vec![0.8, 0.2], vec![0.5, 0.5]]);
        let v = relative_wealth(ewp, &p).unwrap();
        assert!((v.v[1] - 1.0).abs() < 1e-15);
        assert!((v.v[2] - 1.5625).abs() < 1e-15);
    }

    #[test]
    fn relative_wealth_needs_two_rows() {
        let p = path(vec![vec![0.5, 0.5]]);
        assert!(relative_wealth(ewp, &p).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(1000, 200, 20), 39);
        assert_eq!(window_count(1260, 200, 20), 52);
        assert_eq!(window_count(220, 200, 20), 0);
        let last = WindowBounds::new(39, 200, 20);
        assert_eq!(
            (last.train_start, last.train_end, last.test_end),
            (760, 960, 980)
        );
    }

    #[test]
    fn walk_forward_rejects_short_paths() {
        let rows = vec![vec![0.5, 0.5]; 220];
        let cfg = WalkForwardConfig {
            strategies: vec![Strategy::Classical(Generator::Constant)],
            ..WalkForwardConfig::default()
        };
        assert!(matches!(
            walk_forward(&path(rows), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn summary_examples() {
        let report = WalkForwardReport {
            strategies: vec!["a".into(), "b".into()],
            windows: vec![WindowBounds::new(1, 2, 1), WindowBounds::new(2, 2, 1)],
            terminal: vec![vec![1.0, 1.0], vec![std::f64::consts::E; 2]],
            chained: false,
        };
        let s = summarize(&report).unwrap();
        assert_eq!(s[0].avg_log_relative_return, 0.0);
        assert!((s[1].avg_log_relative_return - 1.0).abs() < 1e-15);
        assert_eq!(s[1].k, 2);
        let chained = WalkForwardReport {
            chained: true,
            ..report
        };
        let c = chained.reported_values(1);
        assert!((c[1] - std::f64::consts::E.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn tau_examples() {
        let constant = path(vec![vec![0.4, 0.6]; 5]);
        assert_eq!(estimate_tau(&constant).unwrap(), vec![vec![0.0; 2]; 2]);
        let two = path(vec![vec![0.4, 0.6], vec![0.5, 0.5]]);
        let tau = estimate_tau(&two).unwrap();
        let d = [(0.5f64 / 0.4).ln(), (0.5f64 / 0.6).ln()];
        for i in 0..2 {
            for j in 0..2 {
                assert!((tau[i][j] - d[i] * d[j]).abs() < 1e-15);
            }
        }
        // rank one: zero determinant
        assert!((tau[0][0] * tau[1][1] - tau[0][1] * tau[1][0]).abs() < 1e-15);
    }

    #[test]
    fn constant_and_flat_paths_have_zero_residual() {
        let p = path(vec![
            vec![0.2, 0.3, 0.5],
            vec![0.3, 0.3, 0.4],
            vec![0.1, 0.4, 0.5],
        ]);
        let m = master_residual(&Generator::Constant, &p, MasterOptions::default()).unwrap();
        assert_eq!(m.residual, 0.0);
        let flat = path(vec![vec![0.2, 0.3, 0.5]; 4]);
        let m = master_residual(&Generator::Entropy, &flat, MasterOptions::default()).unwrap();
        assert_eq!(
            (m.log_v, m.log_g_ratio, m.drift_integral, m.residual),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn neural_master_needs_explicit_flag() {
        let theta = IcnnParams::init(2, &[3], 1).unwrap();
        let gen = Generator::Neural(Box::new(theta));
        let p = path(vec![vec![0.5, 0.5], vec![0.51, 0.49], vec![0.5, 0.5]]);
        assert!(master_residual(&gen, &p, MasterOptions::default()).is_err());
        let m = master_residual(
            &gen,
            &p,
            MasterOptions {
                neural_finite_difference: true,
            },
        )
        .unwrap();
        assert!(m.residual.is_finite());
    }

    #[test]
    fn fd_hessian_matches_analytic_for_linear_network() {
        let mut theta = IcnnParams::constant(3, &[2], -4.0).unwrap();
        theta.out_linear = crate::autodiff::Tensor::column(vec![1.0, -1.0, 0.5]);
        let h = neural_hessian_fd(&theta, &[0.2, 0.3, 0.5]);
        assert!(h.iter().flatten().all(|v| v.abs() < 1e-6));
    }
}
