//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any failure.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use neural_fgp::autodiff::{Tape, Tensor, Var};
use neural_fgp::backtest::{
    master_residual, walk_forward, window_count, MasterOptions, WalkForwardConfig,
};
use neural_fgp::fgp::{
    classical_weights, neural_weights, project_to_simplex, raw_fgp_weights, Generator, GRAD_CLIP,
};
use neural_fgp::market_data::{
    gbm_simulate, normalize_to_weights, read_prices_csv, GbmConfig, MarketWeightPath,
};
use neural_fgp::report::{read_summary_csv, SUMMARY_FILE, WINDOWS_FILE};
use neural_fgp::training::{loss, loss_and_grad, TrainConfig};
use neural_fgp::Result;
use rand::Rng;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn nfgp(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_nfgp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "nfgp {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn quick_config() -> WalkForwardConfig {
    WalkForwardConfig {
        train: TrainConfig {
            epochs: 1,
            seed: 42,
            ..TrainConfig::default()
        },
        ..WalkForwardConfig::default()
    }
}

/// 1260 simulated rows pushed through the CSV reader, as real data would be.
fn five_year_csv_path() -> MarketWeightPath {
    let prices = gbm_simulate(&GbmConfig {
        n_days: 1260,
        seed: 2024,
        ..GbmConfig::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    prices.write_csv(&mut buf).unwrap();
    normalize_to_weights(&read_prices_csv(buf.as_slice(), None).unwrap()).unwrap()
}

fn market_average(path: &MarketWeightPath) -> (f64, usize) {
    let report = walk_forward(path, &quick_config()).unwrap();
    let rows = neural_fgp::backtest::summarize(&report).unwrap();
    let market = rows.iter().find(|r| r.strategy == "market").unwrap();
    (market.avg_log_relative_return, market.k)
}

fn c1_market_identity() -> Outcome {
    let synthetic = market_average(&common::gbm_weights(5, 1000, 42)).0;
    let real = market_average(&five_year_csv_path()).0;
    check(
        synthetic.abs() < 1e-6 && real.abs() < 1e-6,
        format!("market average {synthetic:.3e} (synthetic), {real:.3e} (CSV); bound 1e-6"),
    )
}

fn c2_window_counts() -> Outcome {
    let formula = (window_count(1000, 200, 20), window_count(1260, 200, 20));
    let run = (
        market_average(&common::gbm_weights(5, 1000, 1)).1,
        market_average(&five_year_csv_path()).1,
    );
    check(
        formula == (39, 52) && run == (39, 52),
        format!(
            "N=1000 -> K={}, N=1260 -> K={} (walk-forward produced {} and {})",
            formula.0, formula.1, run.0, run.1
        ),
    )
}

fn closed_form(g: &Generator, x: &[f64]) -> Vec<f64> {
    match g {
        Generator::Constant => x.to_vec(),
        Generator::EqualWeight => vec![1.0 / x.len() as f64; x.len()],
        Generator::Diversity { p } => {
            let s: f64 = x.iter().map(|v| v.powf(*p)).sum();
            x.iter().map(|v| v.powf(*p) / s).collect()
        }
        Generator::Entropy => {
            let h = -x.iter().map(|v| v * v.ln()).sum::<f64>();
            x.iter().map(|v| -v * v.ln() / h).collect()
        }
        Generator::Neural(_) => unreachable!(),
    }
}

fn classical_set() -> Vec<Generator> {
    vec![
        Generator::EqualWeight,
        Generator::diversity(0.3).unwrap(),
        Generator::diversity(0.5).unwrap(),
        Generator::diversity(0.8).unwrap(),
        Generator::Entropy,
        Generator::Constant,
    ]
}

fn c3_generic_map() -> Outcome {
    let mut rng = common::rng(3);
    let mut worst = 0.0f64;
    for n in [2, 5, 10] {
        for _ in 0..1000 {
            let x = common::simplex_point(&mut rng, n);
            for g in &classical_set() {
                let raw = raw_fgp_weights(&g.grad_log(&x).unwrap(), &x).unwrap();
                for (a, b) in raw.iter().zip(closed_form(g, &x)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(
        worst < 1e-10,
        format!("max abs error {worst:.2e} over 3000 points x 6 generators; bound 1e-10"),
    )
}

type Primitive = fn(&mut Tape, Var, Var) -> Result<Var>;

fn primitives() -> Vec<(&'static str, Primitive)> {
    // x is 2×3 and positive, y is 2×3
    vec![
        ("add", |t, x, y| t.add(x, y)),
        ("sub", |t, x, y| t.sub(y, x)),
        ("mul", |t, x, y| t.mul(x, y)),
        ("div", |t, x, y| t.div(y, x)),
        ("dot", |t, x, y| t.dot(x, y)),
        ("matmul", |t, x, y| {
            let yt = t.transpose(y);
            t.matmul(x, yt)
        }),
        ("sum", |t, x, _| Ok(t.sum(x))),
        ("mean", |t, x, _| Ok(t.mean(x))),
        ("transpose", |t, x, y| {
            let xt = t.transpose(x);
            let yt = t.transpose(y);
            t.mul(xt, yt)
        }),
        ("softplus", |t, _, y| Ok(t.softplus(y))),
        ("sigmoid", |t, _, y| Ok(t.sigmoid(y))),
        ("log", |t, x, _| Ok(t.log(x))),
        ("exp", |t, _, y| Ok(t.exp(y))),
        ("square", |t, _, y| Ok(t.square(y))),
        ("sqrt", |t, x, _| Ok(t.sqrt(x))),
        ("max_scalar", |t, _, y| Ok(t.max_scalar(y, 0.05))),
        ("min_scalar", |t, _, y| Ok(t.min_scalar(y, 0.05))),
        ("norm", |t, _, y| Ok(t.norm(y))),
        ("scale", |t, _, y| Ok(t.scale(y, -1.7))),
        ("add_scalar", |t, _, y| Ok(t.add_scalar(y, 0.3))),
        ("col_sums", |t, _, y| Ok(t.col_sums(y))),
        ("broadcast_rows", |t, x, y| {
            let r = t.col_sums(x);
            let b = t.broadcast_rows(r, 2)?;
            t.mul(b, y)
        }),
        ("broadcast_cols", |t, x, y| {
            let ones = t.leaf(Tensor::filled(3, 1, 1.0));
            let c = t.matmul(x, ones)?;
            let b = t.broadcast_cols(c, 3)?;
            t.mul(b, y)
        }),
    ]
}

/// Weighted sum of the primitive's output, with gradients for both inputs.
fn primitive_eval(op: Primitive, x: &Tensor, y: &Tensor, probe: &[f64]) -> (f64, Vec<f64>) {
    let mut t = Tape::new();
    let (xv, yv) = (t.leaf(x.clone()), t.leaf(y.clone()));
    let out = op(&mut t, xv, yv).unwrap();
    let (r, c) = t.value(out).shape();
    let weights = t.leaf(Tensor::new(r, c, probe[..r * c].to_vec()).unwrap());
    let prod = t.mul(out, weights).unwrap();
    let total = t.sum(prod);
    t.backward(total).unwrap();
    let zeros = Tensor::zeros(2, 3);
    let mut grad = t.grad(xv).unwrap_or(&zeros).data().to_vec();
    grad.extend_from_slice(t.grad(yv).unwrap_or(&zeros).data());
    (t.value(total).item().unwrap(), grad)
}

fn primitive_error(rng: &mut impl Rng) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (_, op) in primitives() {
        for _ in 0..5 {
            let x = Tensor::new(2, 3, (0..6).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
            let y = Tensor::new(2, 3, (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let probe: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, grad) = primitive_eval(op, &x, &y, &probe);
            for k in 0..12 {
                let shift = |d: f64| {
                    let (mut xs, mut ys) = (x.clone(), y.clone());
                    if k < 6 {
                        xs.data_mut()[k] += d;
                    } else {
                        ys.data_mut()[k - 6] += d;
                    }
                    primitive_eval(op, &xs, &ys, &probe).0
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                worst = worst.max((grad[k] - fd).abs() / (1.0 + fd.abs()));
            }
        }
    }
    worst
}

fn loss_error(seed: u64) -> f64 {
    let theta = common::random_theta(2, &[2], seed);
    let mut rng = common::rng(seed + 100);
    let window =
        MarketWeightPath::from_rows((0..4).map(|_| common::simplex_point(&mut rng, 2)).collect())
            .unwrap();
    let cfg = TrainConfig::default();
    let (_, grads) = loss_and_grad(&theta, &window, &cfg).unwrap();
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let sizes: Vec<usize> = theta.tensors().iter().map(Tensor::len).collect();
    let h = 1e-6;
    let mut fd = Vec::new();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up.slices_mut()[ti][j] += h;
            down.slices_mut()[ti][j] -= h;
            fd.push(
                (loss(&up, &window, &cfg).unwrap().total
                    - loss(&down, &window, &cfg).unwrap().total)
                    / (2.0 * h),
            );
        }
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(&fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn c4_autodiff() -> Outcome {
    let prim = primitive_error(&mut common::rng(4));
    let full = (0..20).map(loss_error).fold(0.0f64, f64::max);
    check(
        prim < 1e-6 && full < 1e-4,
        format!(
            "loss gradient rel. error {full:.2e} over 20 random θ (bound 1e-4); primitives {prim:.2e} over {} ops (bound 1e-6)",
            primitives().len()
        ),
    )
}

fn c5_convexity() -> Outcome {
    let mut rng = common::rng(5);
    let mut worst = f64::NEG_INFINITY;
    for depth in [1, 2, 3] {
        for width in [4, 16, 64] {
            let p = common::random_theta(5, &vec![width; depth], (10 * depth + width) as u64);
            for _ in 0..1000 {
                let x = common::simplex_point(&mut rng, 5);
                let y = common::simplex_point(&mut rng, 5);
                let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                let f = |v: &[f64]| p.forward(v).unwrap().0;
                worst = worst.max(f(&mid) - 0.5 * (f(&x) + f(&y)));
            }
        }
    }
    check(
        worst <= 1e-10,
        format!(
            "max f(mid) - mean(f) = {worst:.2e} over 9 architectures x 1000 pairs; bound 1e-10"
        ),
    )
}

fn c6_self_financing() -> Outcome {
    let mut rng = common::rng(6);
    let mut emitted = Vec::new();
    for n in [2, 5, 10] {
        let theta = common::random_theta(n, &[8, 8], n as u64);
        for i in 0..500 {
            let mut x = common::simplex_point(&mut rng, n);
            if i % 2 == 0 {
                // crowd one asset towards a vertex
                x.iter_mut().for_each(|v| *v = v.powi(6) + 1e-9);
                let s: f64 = x.iter().sum();
                x.iter_mut().for_each(|v| *v /= s);
            }
            for g in classical_set() {
                emitted.push(classical_weights(&g, &x).unwrap().into_vec());
            }
            emitted.push(neural_weights(&theta, &x, GRAD_CLIP).unwrap().into_vec());
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            emitted.push(project_to_simplex(&raw).unwrap().into_vec());
        }
    }
    emitted.push(project_to_simplex(&[-1.0, -2.0, -0.5]).unwrap().into_vec());
    let bad = emitted
        .iter()
        .filter(|w| (w.iter().sum::<f64>() - 1.0).abs() > 1e-10 || w.iter().any(|&v| v <= 0.0))
        .count();
    check(
        bad == 0,
        format!("{} weight vectors checked, {bad} violations", emitted.len()),
    )
}

fn nested_paths(seed: u64) -> Vec<MarketWeightPath> {
    let fine = normalize_to_weights(
        &gbm_simulate(&GbmConfig {
            n_days: 1001,
            dt: 1.0 / 1008.0,
            seed,
            ..GbmConfig::default()
        })
        .unwrap(),
    )
    .unwrap();
    [4, 2, 1]
        .iter()
        .map(|&e| {
            MarketWeightPath::from_rows(fine.rows().iter().step_by(e).cloned().collect()).unwrap()
        })
        .collect()
}

fn c7_master_residual() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    let paths: Vec<Vec<MarketWeightPath>> = (0..5).map(nested_paths).collect();
    for g in [Generator::EqualWeight, Generator::Entropy] {
        let mut mean = [0.0; 3];
        for seed_paths in &paths {
            for (m, p) in mean.iter_mut().zip(seed_paths) {
                *m += master_residual(&g, p, MasterOptions::default())
                    .unwrap()
                    .residual
                    .abs()
                    / 5.0;
            }
        }
        ok &= mean[0] > mean[1] && mean[1] > mean[2];
        detail.push(format!(
            "{} mean |r| {:.2e} > {:.2e} > {:.2e}",
            g.label(),
            mean[0],
            mean[1],
            mean[2]
        ));
    }
    let constant = paths
        .iter()
        .flatten()
        .map(|p| {
            master_residual(&Generator::Constant, p, MasterOptions::default())
                .unwrap()
                .residual
        })
        .fold(0.0f64, |m, r| m.max(r.abs()));
    ok &= constant == 0.0;
    detail.push(format!("constant |r| = {constant}"));
    check(
        ok,
        format!("seeds 0-4 at dt, dt/2, dt/4: {}", detail.join("; ")),
    )
}

fn c8_outperformance(dir: &Path) -> Outcome {
    let jobs = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .to_string();
    let out = dir.join("default");
    let started = Instant::now();
    nfgp(&[
        "backtest",
        "--seed",
        "42",
        "--jobs",
        &jobs,
        "--out",
        out.to_str().unwrap(),
    ])?;
    let elapsed = started.elapsed();
    let rows = read_summary_csv(fs::File::open(out.join(SUMMARY_FILE)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let get = |name: &str| rows.iter().find(|r| r.strategy == name).unwrap();
    let (neural, market) = (get("neural_fgp"), get("market"));
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:+.6}", r.strategy, r.avg_log_relative_return))
        .collect();
    check(
        neural.avg_log_relative_return > market.avg_log_relative_return
            && neural.k == 39
            && elapsed < Duration::from_secs(15 * 60),
        format!(
            "neural {:+.6} vs market {:+.3e}, K={}, {:.0?} on {jobs} thread(s) [{}]",
            neural.avg_log_relative_return,
            market.avg_log_relative_return,
            neural.k,
            elapsed,
            table.join(", ")
        ),
    )
}

fn c9_no_look_ahead() -> Outcome {
    let path = common::gbm_weights(5, 1000, 42);
    let cfg = WalkForwardConfig {
        train: TrainConfig {
            epochs: 20,
            seed: 42,
            ..TrainConfig::default()
        },
        ..WalkForwardConfig::default()
    };
    let before = walk_forward(&path, &cfg).unwrap();
    let cut = 500;
    let mut rng = common::rng(9);
    let rows = path
        .rows()
        .iter()
        .enumerate()
        .map(|(t, r)| {
            if t > cut {
                common::simplex_point(&mut rng, 5)
            } else {
                r.clone()
            }
        })
        .collect();
    let after = walk_forward(&MarketWeightPath::from_rows(rows).unwrap(), &cfg).unwrap();
    let mut same = 0;
    let mut checked = 0;
    for (k, w) in before.windows.iter().enumerate() {
        if w.test_end <= cut {
            checked += 1;
            if (0..before.strategies.len())
                .all(|s| before.terminal[s][k].to_bits() == after.terminal[s][k].to_bits())
            {
                same += 1;
            }
        }
    }
    let later_changed = before.terminal != after.terminal;
    check(
        checked > 0 && same == checked && later_changed,
        format!("{same}/{checked} windows ending by row {cut} bit-identical after rewriting rows > {cut}"),
    )
}

fn c10_determinism(dir: &Path) -> Outcome {
    let mut files = Vec::new();
    for (i, jobs) in ["1", "1", "4", "4"].iter().enumerate() {
        let out = dir.join(format!("det{i}"));
        nfgp(&[
            "backtest",
            "--days",
            "400",
            "--epochs",
            "5",
            "--seed",
            "42",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])?;
        let summary = fs::read(out.join(SUMMARY_FILE)).map_err(|e| e.to_string())?;
        let windows = fs::read(out.join(WINDOWS_FILE)).map_err(|e| e.to_string())?;
        files.push((summary, windows));
    }
    let identical = files.windows(2).all(|p| p[0] == p[1]);
    check(
        identical,
        format!("4 runs (jobs 1,1,4,4): summary and window CSVs byte-identical = {identical}"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("market-numeraire identity", Box::new(c1_market_identity)),
        ("window counts", Box::new(c2_window_counts)),
        ("generic-map equivalence", Box::new(c3_generic_map)),
        ("autodiff correctness", Box::new(c4_autodiff)),
        ("ICNN convexity", Box::new(c5_convexity)),
        ("self-financing weights", Box::new(c6_self_financing)),
        ("master-equation residual", Box::new(c7_master_residual)),
        (
            "outperformance direction",
            Box::new(|| c8_outperformance(dir.path())),
        ),
        ("no look-ahead", Box::new(c9_no_look_ahead)),
        ("determinism", Box::new(|| c10_determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{status} criterion {:>2} {name} ({:.1?}): {detail}",
            i + 1,
            started.elapsed()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
