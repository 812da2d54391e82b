//! Report files: per-window and summary CSVs, plot series and an SVG chart.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::backtest::{SummaryRow, WalkForwardReport};
use crate::error::{Error, Result};

pub const WINDOWS_FILE: &str = "walk_forward.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SVG_FILE: &str = "relative_wealth.svg";

/// `window,strategy,V_Tk,log_V_Tk`
pub fn write_windows_csv<W: Write>(report: &WalkForwardReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "strategy", "V_Tk", "log_V_Tk"])?;
    let values: Vec<Vec<f64>> = (0..report.strategies.len())
        .map(|s| report.reported_values(s))
        .collect();
    for (k, bounds) in report.windows.iter().enumerate() {
        for (name, series) in report.strategies.iter().zip(&values) {
            let v = series[k];
            w.write_record([
                bounds.index.to_string(),
                name.clone(),
                v.to_string(),
                v.ln().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `strategy,avg_log_relative_return,K`
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "avg_log_relative_return", "K"])?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.avg_log_relative_return.to_string(),
            r.k.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["strategy", "avg_log_relative_return", "K"] {
        return Err(Error::Data(format!("unexpected summary header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Data(format!("summary line {}: bad {what}", i + 2));
        rows.push(SummaryRow {
            strategy: rec[0].to_string(),
            avg_log_relative_return: rec[1].parse().map_err(|_| parse_err("average"))?,
            k: rec[2].parse().map_err(|_| parse_err("K"))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("summary has no strategy rows".into()));
    }
    Ok(rows)
}

/// Fixed-width summary table, one row per strategy.
pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.strategy.len())
        .max()
        .unwrap_or(8)
        .max(8);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>24}  {:>4}",
        "Strategy", "(1/K) sum log V_Tk", "K"
    );
    let _ = writeln!(s, "{}", "-".repeat(width + 32));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>24}  {:>4}",
            r.strategy, r.avg_log_relative_return, r.k
        );
    }
    s
}

/// One `plot_<strategy>.csv` (`window,V_Tk`) per strategy.
pub fn write_plot_data(report: &WalkForwardReport, dir: impl AsRef<Path>) -> Result<()> {
    for (s, name) in report.strategies.iter().enumerate() {
        let file = std::fs::File::create(dir.as_ref().join(format!("plot_{name}.csv")))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["window", "V_Tk"])?;
        for (bounds, v) in report.windows.iter().zip(report.reported_values(s)) {
            w.write_record([bounds.index.to_string(), v.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of `V_{T_k}` against `k` for every strategy.
pub fn render_svg(report: &WalkForwardReport) -> String {
    let (w, h, margin) = (800.0, 450.0, 60.0);
    let series: Vec<Vec<f64>> = (0..report.strategies.len())
        .map(|s| report.reported_values(s))
        .collect();
    let all = series.iter().flatten().copied();
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !(hi > lo) {
        lo -= 0.01;
        hi += 0.01;
    }
    let k = report.k().max(2);
    let sx = |i: usize| margin + (w - 2.0 * margin) * i as f64 / (k - 1) as f64;
    let sy = |v: f64| h - margin - (h - 2.0 * margin) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = margin,
        b = h - margin,
        r = w - margin
    );
    for (label, v) in [(format!("{hi:.4}"), hi), (format!("{lo:.4}"), lo)] {
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{:.1}" font-size="11">{label}</text>"#,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">window k</text>"#,
        w / 2.0,
        h - 20.0
    );
    for (s, (name, values)) in report.strategies.iter().zip(&series).enumerate() {
        let colour = PALETTE[s % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{colour}">{name}</text>"#,
            w - margin + 5.0 - 120.0,
            margin + 16.0 * s as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
