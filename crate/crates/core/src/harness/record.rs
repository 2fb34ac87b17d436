use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::Permutation;

/// Scores of one trained model.
///
/// Metrics are `None` when unavailable: ground-truth errors without ground
/// truth, and every post-training metric once a run has diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment_id: u32,
    pub init_id: usize,
    pub run_id: usize,
    pub init_seed: u64,
    pub run_seed: u64,
    /// SHA-256 prefix over the initial parameters.
    pub init_checksum: String,
    pub iterations: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub recon_rmse: Option<f64>,
    pub recon_sad: Option<f64>,
    pub abundance_rmse: Option<f64>,
    pub endmember_sad: Option<f64>,
    pub abundance_rmse_per_endmember: Option<Vec<f64>>,
    pub permutation: Option<Permutation>,
    pub diverged: bool,
    pub trace_file: Option<String>,
    /// Kept out of the record lines; persisted in the metadata line.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn metric(&self, sel: MetricSelector) -> Option<f64> {
        match sel {
            MetricSelector::ReconRmse => self.recon_rmse,
            MetricSelector::ReconSad => self.recon_sad,
            MetricSelector::AbundanceRmse => self.abundance_rmse,
            MetricSelector::EndmemberSad => self.endmember_sad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSelector {
    #[default]
    ReconRmse,
    ReconSad,
    AbundanceRmse,
    EndmemberSad,
}

impl MetricSelector {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricSelector::ReconRmse => "recon_rmse",
            MetricSelector::ReconSad => "recon_sad",
            MetricSelector::AbundanceRmse => "abundance_rmse",
            MetricSelector::EndmemberSad => "endmember_sad",
        }
    }
}

impl fmt::Display for MetricSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon_rmse" => Ok(MetricSelector::ReconRmse),
            "recon_sad" => Ok(MetricSelector::ReconSad),
            "abundance_rmse" => Ok(MetricSelector::AbundanceRmse),
            "endmember_sad" => Ok(MetricSelector::EndmemberSad),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// First line of a record file. Everything nondeterministic (timestamp,
/// wall times) lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsMeta {
    pub kind: String,
    pub created_unix_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    #[serde(default)]
    pub wall_time_s: Vec<f64>,
}

impl RecordsMeta {
    pub fn new(config: Option<ExperimentConfig>, records: &[RunRecord]) -> Self {
        Self {
            kind: "meta".into(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config,
            wall_time_s: records.iter().map(|r| r.wall_time_s).collect(),
        }
    }
}

/// Writes a metadata line followed by one JSON record per line.
pub fn write_records(
    path: &Path,
    records: &[RunRecord],
    config: Option<&ExperimentConfig>,
) -> Result<()> {
    let meta = RecordsMeta::new(config.cloned(), records);
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &meta).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a record file; the metadata line is optional.
pub fn read_records(path: &Path) -> Result<(Option<RecordsMeta>, Vec<RunRecord>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut meta: Option<RecordsMeta> = None;
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 && line.contains("\"kind\":\"meta\"") {
            meta = Some(
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line 1: {e}")))?,
            );
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        records.push(rec);
    }
    if let Some(m) = &meta {
        if m.wall_time_s.len() == records.len() {
            for (r, t) in records.iter_mut().zip(&m.wall_time_s) {
                r.wall_time_s = *t;
            }
        }
    }
    Ok((meta, records))
}

#[cfg(test)]
pub(crate) fn fixture(init_id: usize, run_id: usize, value: f64) -> RunRecord {
    RunRecord {
        experiment_id: 0,
        init_id,
        run_id,
        init_seed: 0,
        run_seed: 0,
        init_checksum: String::new(),
        iterations: 0,
        initial_loss: None,
        final_loss: None,
        recon_rmse: Some(value),
        recon_sad: Some(value),
        abundance_rmse: Some(value),
        endmember_sad: Some(value),
        abundance_rmse_per_endmember: None,
        permutation: None,
        diverged: false,
        trace_file: None,
        wall_time_s: 0.0,
    }
}
