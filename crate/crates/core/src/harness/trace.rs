use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, LayerRef, Network};

pub const TRACE_HEADER: [&str; 4] = ["iteration", "layer", "mean", "std"];

/// Every iteration below this index is logged; later ones every
/// [`TRACE_STRIDE`]th.
pub const TRACE_DENSE_ITERATIONS: usize = 1000;
pub const TRACE_STRIDE: usize = 100;

pub fn should_log(iteration: usize) -> bool {
    iteration < TRACE_DENSE_ITERATIONS || iteration.is_multiple_of(TRACE_STRIDE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub layer: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-iteration mean and standard deviation of each encoder layer's
/// gradient entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientTrace {
    pub rows: Vec<TraceRow>,
}

/// Trace labels of the encoder layers that carry parameters, e.g.
/// `linear0`, `linear1`, `batchnorm0`, `threshold0`.
pub fn layer_labels(net: &Network) -> Vec<(usize, String)> {
    let mut counts = std::collections::HashMap::new();
    let mut out = Vec::new();
    for (i, layer) in net.encoder().iter().enumerate() {
        let name = layer.name();
        if matches!(name, "linear" | "batchnorm" | "threshold") {
            let c = counts.entry(name).or_insert(0usize);
            out.push((i, format!("{name}{c}")));
            *c += 1;
        }
    }
    out
}

impl GradientTrace {
    pub fn record(&mut self, iteration: usize, labels: &[(usize, String)], grads: &Gradients) {
        for (idx, label) in labels {
            let values: Vec<f64> = grads
                .tensors
                .iter()
                .filter(|t| t.layer == LayerRef::Encoder(*idx))
                .flat_map(|t| t.values.iter().copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            self.rows.push(TraceRow {
                iteration,
                layer: label.clone(),
                mean,
                std,
            });
        }
    }

    /// Distinct logged iterations.
    pub fn iteration_count(&self) -> usize {
        let mut its: Vec<usize> = self.rows.iter().map(|r| r.iteration).collect();
        its.dedup();
        its.len()
    }

    pub fn layers(&self) -> Vec<String> {
        let mut l: Vec<String> = self.rows.iter().map(|r| r.layer.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    /// Iterations non-decreasing across rows, strictly increasing per layer,
    /// one row per (iteration, layer).
    pub fn validate(&self) -> Result<()> {
        let mut last: std::collections::HashMap<&str, usize> = Default::default();
        let mut prev = 0;
        for row in &self.rows {
            if row.iteration < prev {
                return Err(Error::Format(format!(
                    "iteration {} out of order",
                    row.iteration
                )));
            }
            prev = row.iteration;
            if let Some(&p) = last.get(row.layer.as_str()) {
                if row.iteration <= p {
                    return Err(Error::Format(format!(
                        "duplicate row for layer {} at iteration {}",
                        row.layer, row.iteration
                    )));
                }
            }
            last.insert(&row.layer, row.iteration);
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(TRACE_HEADER)
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace CSV, checking the header and row ordering.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let header = r
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .clone();
        if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
            return Err(Error::Format(format!("unexpected trace header {header:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let trace = Self { rows };
        trace.validate()?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logging_schedule() {
        assert!(should_log(0) && should_log(999) && should_log(1000) && should_log(1100));
        assert!(!should_log(1001) && !should_log(1099));
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let trace = GradientTrace {
            rows: vec![
                TraceRow {
                    iteration: 0,
                    layer: "linear0".into(),
                    mean: 0.5,
                    std: 0.1,
                },
                TraceRow {
                    iteration: 0,
                    layer: "linear1".into(),
                    mean: -0.5,
                    std: 0.2,
                },
                TraceRow {
                    iteration: 1,
                    layer: "linear0".into(),
                    mean: 0.25,
                    std: 0.0,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        trace.write_csv(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,layer,mean,std\n"));
        assert_eq!(GradientTrace::read_csv(&p).unwrap(), trace);
        assert_eq!(trace.iteration_count(), 2);

        let mut bad = trace.clone();
        bad.rows.push(TraceRow {
            iteration: 1,
            layer: "linear0".into(),
            mean: 0.0,
            std: 0.0,
        });
        assert!(bad.validate().is_err());
    }
}
