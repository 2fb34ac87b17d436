//! Network checkpoints: a TOML header (layer specs, dimensions, seeds) and a
//! little-endian `f64` payload holding the trainable parameters followed by
//! batch-norm running statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::lmm::io::sha256_hex;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    pub bands: usize,
    pub latent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_seed: Option<u64>,
    pub param_count: usize,
    pub running_stat_count: usize,
    pub payload: String,
    pub checksum: String,
    pub layers: Vec<LayerSpec>,
}

/// Writes `net` to `path` (header) and a sibling `.f64` payload.
pub fn save_checkpoint(
    net: &Network,
    path: &Path,
    architecture: Option<Architecture>,
    seeds: Option<(u64, u64)>,
) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad checkpoint path {}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let params = net.params_flat();
    let stats = net.running_stats_flat();
    let bytes: Vec<u8> = params
        .iter()
        .chain(&stats)
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let payload = format!("{stem}.params.f64");
    fs::write(dir.join(&payload), &bytes)?;
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        architecture,
        bands: net.bands(),
        latent: net.latent_dim(),
        init_seed: seeds.map(|s| s.0),
        run_seed: seeds.map(|s| s.1),
        param_count: params.len(),
        running_stat_count: stats.len(),
        payload,
        checksum: sha256_hex(&bytes),
        layers: net.layer_specs(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let text = fs::read_to_string(path)?;
    let header: CheckpointHeader =
        toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    let bytes = fs::read(dir.join(&header.payload))?;
    if sha256_hex(&bytes) != header.checksum {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let expected = 8 * (header.param_count + header.running_stat_count);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut net = Network::from_specs(&header.layers, header.bands)
        .map_err(|e| Error::Format(e.to_string()))?;
    if net.latent_dim() != header.latent || net.param_count() != header.param_count {
        return Err(Error::Format(
            "layer specs disagree with header dimensions".into(),
        ));
    }
    net.set_params_flat(&values[..header.param_count])?;
    net.set_running_stats_flat(&values[header.param_count..])?;
    Ok((net, header))
}
