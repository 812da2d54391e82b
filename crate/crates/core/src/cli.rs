//! Command-line front end: `simulate`, `fetch`, `train`, `backtest`, `report`.
//!
//! Settings come from defaults, then an optional `key=value` config file, then
//! flags. Every run is driven by one master seed: the simulator uses it
//! directly and window `k` initialises its network from `seed + k`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backtest::{
    summarize, walk_forward, window_init_seed, Strategy, WalkForwardConfig, WindowBounds,
};
use crate::error::{Error, Result};
use crate::icnn::IcnnParams;
use crate::market_data::{
    fetch_csv, gbm_simulate, load_prices_csv, normalize_to_weights, GbmConfig, PricePath,
};
use crate::report::{
    format_summary_table, read_summary_csv, render_svg, write_plot_data, write_summary_csv,
    write_windows_csv, SUMMARY_FILE, SVG_FILE, WINDOWS_FILE,
};
use crate::training::{train_window, write_training_log, TrainConfig};

pub const TRADING_DAYS_PER_YEAR: usize = 252;
pub const PARAMS_FILE: &str = "params.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";

#[derive(Debug, Parser)]
#[command(
    name = "nfgp",
    version,
    about = "Neural functionally generated portfolios"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated GBM price CSV.
    Simulate(RunArgs),
    /// Download a price CSV over HTTP.
    Fetch(RunArgs),
    /// Train on the first window and save the network and its loss log.
    Train(RunArgs),
    /// Walk-forward comparison of the neural FGP and the benchmarks.
    Backtest(RunArgs),
    /// Print the summary table of a finished backtest.
    Report(ReportArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use a price CSV instead of simulated data.
    #[arg(long)]
    pub use_real: bool,
    #[arg(long)]
    pub n: Option<usize>,
    /// Years of history taken from the end of a real price CSV.
    #[arg(long)]
    pub years: Option<usize>,
    /// Simulated trading days.
    #[arg(long)]
    pub days: Option<usize>,
    /// Comma-separated diversity exponents.
    #[arg(long, value_delimiter = ',')]
    pub p_vals: Option<Vec<f64>>,
    #[arg(long)]
    pub train_days: Option<usize>,
    #[arg(long)]
    pub test_days: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (`train`, `backtest`) or file (`simulate`, `fetch`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the relative-wealth chart.
    #[arg(long)]
    pub svg: bool,
    /// Price CSV used with `--use-real`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated ticker columns to keep, in order.
    #[arg(long, value_delimiter = ',')]
    pub tickers: Option<Vec<String>>,
    #[arg(long)]
    pub url: Option<String>,
    /// Start each window from the previous window's network.
    #[arg(long)]
    pub warm_start: bool,
    /// Report running products of window values.
    #[arg(long)]
    pub chain: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `backtest`.
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub use_real: bool,
    pub n: usize,
    /// Years of real history.
    pub y: usize,
    /// Simulated trading days.
    pub days: usize,
    pub p_vals: Vec<f64>,
    pub data_path: Option<PathBuf>,
    pub fetch_url: Option<String>,
    pub tickers: Option<Vec<String>>,
    pub seed: u64,
    pub train: TrainConfig,
    pub train_days: usize,
    pub test_days: usize,
    pub jobs: usize,
    pub chain: bool,
    pub svg: bool,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let wf = WalkForwardConfig::default();
        Self {
            use_real: false,
            n: 5,
            y: 5,
            days: GbmConfig::default().n_days,
            p_vals: vec![0.3, 0.5, 0.8],
            data_path: None,
            fetch_url: None,
            tickers: None,
            seed: 42,
            train: TrainConfig::default(),
            train_days: wf.train_days,
            test_days: wf.test_days,
            jobs: 1,
            chain: false,
            svg: false,
            output: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim(), line))
        .collect()
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: bad boolean {value:?} for {key}"
        ))),
    }
}

impl RunConfig {
    /// Applies a flat `key=value` document; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key=value")))?;
            let (key, value) = (key.trim().replace('-', "_"), value.trim());
            match key.as_str() {
                "use_real" => self.use_real = parse_bool(&key, value, line)?,
                "n" => self.n = parse_value(&key, value, line)?,
                "y" | "years" => self.y = parse_value(&key, value, line)?,
                "days" => self.days = parse_value(&key, value, line)?,
                "p_vals" => self.p_vals = parse_list(&key, value, line)?,
                "data" | "data_path" => self.data_path = Some(value.into()),
                "url" | "fetch_url" => self.fetch_url = Some(value.into()),
                "tickers" => self.tickers = Some(parse_list(&key, value, line)?),
                "seed" => self.seed = parse_value(&key, value, line)?,
                "train_days" => self.train_days = parse_value(&key, value, line)?,
                "test_days" => self.test_days = parse_value(&key, value, line)?,
                "epochs" => self.train.epochs = parse_value(&key, value, line)?,
                "lr" | "learning_rate" => {
                    self.train.learning_rate = parse_value(&key, value, line)?
                }
                "lambda" => self.train.lambda_l2 = parse_value(&key, value, line)?,
                "lambda_pos" => self.train.lambda_pos = parse_value(&key, value, line)?,
                "delta_pos" => self.train.delta_pos = parse_value(&key, value, line)?,
                "grad_clip" => self.train.grad_clip = parse_value(&key, value, line)?,
                "widths" => self.train.widths = parse_list(&key, value, line)?,
                "warm_start" => self.train.warm_start = parse_bool(&key, value, line)?,
                "jobs" => self.jobs = parse_value(&key, value, line)?,
                "chain" => self.chain = parse_bool(&key, value, line)?,
                "svg" => self.svg = parse_bool(&key, value, line)?,
                "out" | "output_dir" => self.output = Some(value.into()),
                other => {
                    return Err(Error::Config(format!("line {line}: unknown key {other:?}")));
                }
            }
        }
        Ok(())
    }

    /// Defaults, then the file named by `--config`, then flags.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_file_text(&text)?;
        }
        if args.use_real {
            cfg.use_real = true;
        }
        if args.svg {
            cfg.svg = true;
        }
        if args.chain {
            cfg.chain = true;
        }
        if args.warm_start {
            cfg.train.warm_start = true;
        }
        macro_rules! take {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = &args.$flag {
                    cfg.$($field)+ = v.clone().into();
                }
            };
        }
        take!(n => n);
        take!(years => y);
        take!(days => days);
        take!(p_vals => p_vals);
        take!(train_days => train_days);
        take!(test_days => test_days);
        take!(epochs => train.epochs);
        take!(lr => train.learning_rate);
        take!(lambda => train.lambda_l2);
        take!(widths => train.widths);
        take!(seed => seed);
        take!(jobs => jobs);
        take!(out => output);
        take!(data => data_path);
        take!(tickers => tickers);
        take!(url => fetch_url);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        if self.use_real && self.y < 1 {
            return Err(Error::Config("y must be >= 1 with real data".into()));
        }
        if let Some(p) = self.p_vals.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Config(format!(
                "diversity exponent {p} is outside (0, 1)"
            )));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gbm(&self) -> GbmConfig {
        GbmConfig {
            n_assets: self.n,
            n_days: self.days,
            seed: self.seed,
            ..GbmConfig::default()
        }
    }

    pub fn walk_forward(&self) -> Result<WalkForwardConfig> {
        Ok(WalkForwardConfig {
            train_days: self.train_days,
            test_days: self.test_days,
            strategies: Strategy::benchmark_set(&self.p_vals)?,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            jobs: self.jobs,
            chain: self.chain,
        })
    }

    fn output_or(&self, default: &str) -> PathBuf {
        self.output.clone().unwrap_or_else(|| default.into())
    }

    /// Simulated prices, or the last `252·y` rows of the real CSV.
    pub fn load_prices(&self) -> Result<PricePath> {
        if !self.use_real {
            return gbm_simulate(&self.gbm());
        }
        let path = match (&self.data_path, &self.fetch_url) {
            (Some(p), _) => p.clone(),
            (None, Some(url)) => {
                let dir = self.output_or("out");
                fs::create_dir_all(&dir)?;
                let target = dir.join("prices.csv");
                fetch_csv(url, &target)?;
                target
            }
            (None, None) => {
                return Err(Error::Config("use_real needs --data or --url".into()));
            }
        };
        let prices = load_prices_csv(&path, self.tickers.as_deref())?;
        let rows = TRADING_DAYS_PER_YEAR * self.y;
        if prices.n_rows() < rows {
            return Err(Error::Data(format!(
                "{} has {} usable rows, {} years need {rows}",
                path.display(),
                prices.n_rows(),
                self.y
            )));
        }
        prices.tail(rows)
    }
}

fn simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let prices = gbm_simulate(&cfg.gbm())?;
    let path = cfg.output_or("prices.csv");
    prices.save_csv(&path)?;
    writeln!(
        out,
        "wrote {} ({} rows x {} assets, seed {})",
        path.display(),
        prices.n_rows(),
        prices.n_assets(),
        cfg.seed
    )?;
    Ok(())
}

fn fetch(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let url = cfg
        .fetch_url
        .as_deref()
        .ok_or_else(|| Error::Config("fetch needs --url".into()))?;
    let path = cfg.output_or("prices.csv");
    let prices = fetch_csv(url, &path)?;
    writeln!(
        out,
        "wrote {} ({} rows x {} assets)",
        path.display(),
        prices.n_rows(),
        prices.n_assets()
    )?;
    Ok(())
}

fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let weights = normalize_to_weights(&cfg.load_prices()?)?;
    let bounds = WindowBounds::new(1, cfg.train_days, cfg.test_days);
    if weights.len() <= bounds.train_end {
        return Err(Error::Data(format!(
            "training needs {} rows, data has {}",
            bounds.train_end + 1,
            weights.len()
        )));
    }
    let window = weights.slice(bounds.train_start, bounds.train_end + 1)?;
    let theta0 = IcnnParams::init(
        weights.n_assets(),
        &cfg.train.widths,
        window_init_seed(cfg.seed, bounds.index),
    )?;
    let outcome = train_window(
        &theta0,
        &window,
        &TrainConfig {
            seed: cfg.seed,
            ..cfg.train.clone()
        },
    )?;

    let dir = cfg.output_or("out");
    fs::create_dir_all(&dir)?;
    outcome.params.save(dir.join(PARAMS_FILE))?;
    write_training_log(&outcome.log, fs::File::create(dir.join(TRAINING_LOG_FILE))?)?;
    writeln!(
        out,
        "trained {} epochs on rows {}..={}: best loss {:.6e} at epoch {}; wrote {}",
        outcome.log.len(),
        bounds.train_start,
        bounds.train_end,
        outcome.best_loss,
        outcome.best_epoch,
        dir.display()
    )?;
    Ok(())
}

fn backtest(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let weights = normalize_to_weights(&cfg.load_prices()?)?;
    let report = walk_forward(&weights, &cfg.walk_forward()?)?;
    let rows = summarize(&report)?;

    let dir = cfg.output_or("out");
    fs::create_dir_all(&dir)?;
    write_windows_csv(&report, fs::File::create(dir.join(WINDOWS_FILE))?)?;
    write_summary_csv(&rows, fs::File::create(dir.join(SUMMARY_FILE))?)?;
    write_plot_data(&report, &dir)?;
    if cfg.svg {
        fs::write(dir.join(SVG_FILE), render_svg(&report))?;
    }
    write!(out, "{}", format_summary_table(&rows))?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

fn report(dir: &Path, out: &mut dyn Write) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    let file = fs::File::open(&path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let rows = read_summary_csv(file)?;
    write!(out, "{}", format_summary_table(&rows))?;
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(&RunConfig::from_args(a)?, out),
        Command::Fetch(a) => fetch(&RunConfig::from_args(a)?, out),
        Command::Train(a) => train(&RunConfig::from_args(a)?, out),
        Command::Backtest(a) => backtest(&RunConfig::from_args(a)?, out),
        Command::Report(a) => {
            let dir = a
                .dir
                .clone()
                .or_else(|| a.out.clone())
                .unwrap_or_else(|| "out".into());
            report(&dir, out)
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "nfgp: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_file_text("# run\nuse_real = false\nn=3\np_vals = 0.2, 0.6\nepochs=7\nlr=0.01\n")
            .unwrap();
        assert_eq!(cfg.n, 3);
        assert_eq!(cfg.p_vals, vec![0.2, 0.6]);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.learning_rate, 0.01);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "n=3\nepochs=7\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            epochs: Some(2),
            ..RunArgs::default()
        };
        let cfg = RunConfig::from_args(&args).unwrap();
        assert_eq!((cfg.n, cfg.train.epochs), (3, 2));
    }

    #[test]
    fn bad_config_lines() {
        let mut cfg = RunConfig::default();
        let e = cfg.apply_file_text("n=3\nbogus=1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
        assert_eq!(e.exit_code(), 2);
        assert!(cfg.apply_file_text("n three").is_err());
        assert!(cfg.apply_file_text("use_real=maybe").is_err());
    }

    #[test]
    fn validation() {
        let bad_p = RunConfig {
            p_vals: vec![1.2],
            ..RunConfig::default()
        };
        assert!(matches!(bad_p.validate(), Err(Error::Config(_))));
        let one_asset = RunConfig {
            n: 1,
            ..RunConfig::default()
        };
        assert!(one_asset.validate().is_err());
        let no_years = RunConfig {
            use_real: true,
            y: 0,
            ..RunConfig::default()
        };
        assert!(no_years.validate().is_err());
    }

    #[test]
    fn real_data_needs_a_source() {
        let cfg = RunConfig {
            use_real: true,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.load_prices(), Err(Error::Config(_))));
    }

    #[test]
    fn help_exits_zero_and_unknown_flag_two() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(main_with_args(["nfgp", "--help"], &mut out, &mut err), 0);
        assert!(String::from_utf8(out).unwrap().contains("backtest"));
        assert_eq!(
            main_with_args(["nfgp", "simulate", "--bogus"], &mut Vec::new(), &mut err),
            2
        );
    }
}
