//! Report emission: metric histogram, trials-versus-threshold table and a
//! text summary, next to the statistics files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{MetricSelector, RunRecord};
use crate::metrics::{aggregate_errors, format_mean_std, Loss};
use crate::stats::{estimate_success_prob, RetryPlan, StatReport};

pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Default thresholds for the trials table, by training loss.
pub fn default_thresholds(loss: Loss) -> Vec<f64> {
    match loss {
        Loss::Mse => vec![0.01, 0.015, 0.05],
        Loss::Sad => vec![0.05, 0.075, 0.1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    FreedmanDiaconis,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub metric: MetricSelector,
    pub thresholds: Vec<f64>,
    pub confidence: f64,
    pub binning: Binning,
}

impl ReportOptions {
    pub fn for_loss(loss: Loss, metric: MetricSelector) -> Self {
        Self {
            metric,
            thresholds: default_thresholds(loss),
            confidence: 0.95,
            binning: Binning::FreedmanDiaconis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const MAX_BINS: usize = 10_000;

/// Histogram of finite values; the last bin is closed on the right.
pub fn histogram(values: &[f64], binning: Binning) -> Vec<Bin> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let (min, max) = (v[0], v[v.len() - 1]);
    let span = max - min;
    if span == 0.0 {
        return vec![Bin {
            left: min,
            right: max,
            count: v.len(),
        }];
    }
    let bins = match binning {
        Binning::Fixed(n) => n.max(1),
        Binning::FreedmanDiaconis => {
            let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
            let width = 2.0 * iqr / (v.len() as f64).cbrt();
            if width > 0.0 {
                ((span / width).ceil() as usize).clamp(1, MAX_BINS)
            } else {
                // Sturges' rule when the interquartile range collapses.
                (v.len() as f64).log2().ceil() as usize + 1
            }
        }
    };
    let width = span / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin {
            left: min + b as f64 * width,
            right: if b + 1 == bins {
                max
            } else {
                min + (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for x in v {
        let idx = (((x - min) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub threshold: f64,
    pub p_hat: f64,
    /// `None` when no run met the threshold.
    pub n_req: Option<u64>,
}

pub fn trials_table(
    records: &[RunRecord],
    metric: MetricSelector,
    thresholds: &[f64],
    confidence: f64,
) -> Result<Vec<TrialRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let p_hat = estimate_success_prob(records, metric, t)?;
            let n_req = match RetryPlan::new(t, p_hat, confidence) {
                Ok(plan) => Some(plan.n_req),
                Err(Error::UnreachableThreshold) => None,
                Err(e) => return Err(e),
            };
            Ok(TrialRow {
                threshold: t,
                p_hat,
                n_req,
            })
        })
        .collect()
}

fn summary_text(records: &[RunRecord], stats: Option<&StatReport>, opts: &ReportOptions) -> String {
    let mut s = String::new();
    let diverged = records.iter().filter(|r| r.diverged).count();
    s += &format!("runs: {} ({} diverged)\n", records.len(), diverged);
    match aggregate_errors(records) {
        Ok(e) => {
            let (a, m) = e.formatted();
            s += &format!("abundance error E^a: {a}\n");
            s += &format!("endmember error E^e: {m}\n");
        }
        Err(_) => s += "abundance/endmember errors: unavailable (no ground truth)\n",
    }
    let vals: Vec<f64> = records
        .iter()
        .filter_map(|r| r.metric(opts.metric))
        .collect();
    if !vals.is_empty() {
        let (mean, std) = crate::metrics::mean_std(&vals);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        s += &format!(
            "{}: {} (min {:.6}, n = {})\n",
            opts.metric,
            format_mean_std(mean, std),
            min,
            vals.len()
        );
    }
    if let Some(st) = stats {
        s += &st.summary();
    }
    s
}

/// Writes `histogram.csv`, `trials.csv`, `summary.txt` and, when given, the
/// statistics files into `out_dir`. Output depends only on the inputs.
pub fn emit_report(
    records: &[RunRecord],
    stats: Option<&StatReport>,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::MissingData("no records to report on".into()));
    }
    fs::create_dir_all(out_dir)?;
    let csv_err = |e: csv::Error| Error::Format(e.to_string());

    let values: Vec<f64> = records
        .iter()
        .filter_map(|r| r.metric(opts.metric))
        .collect();
    let mut w = csv::Writer::from_path(out_dir.join(HISTOGRAM_FILE)).map_err(csv_err)?;
    w.write_record(["bin_left", "bin_right", "count"])
        .map_err(csv_err)?;
    for b in histogram(&values, opts.binning) {
        w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join(TRIALS_FILE)).map_err(csv_err)?;
    w.write_record(["threshold", "p_hat", "n_req", "status"])
        .map_err(csv_err)?;
    for row in trials_table(records, opts.metric, &opts.thresholds, opts.confidence)? {
        let (n, status) = match row.n_req {
            Some(n) => (n.to_string(), "ok"),
            None => (String::new(), "unreachable"),
        };
        w.write_record([
            row.threshold.to_string(),
            row.p_hat.to_string(),
            n,
            status.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    fs::write(
        out_dir.join(SUMMARY_FILE),
        summary_text(records, stats, opts),
    )?;
    if let Some(st) = stats {
        st.write_files(out_dir)?;
    }
    Ok(())
}
