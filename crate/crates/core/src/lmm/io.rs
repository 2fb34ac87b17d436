//! On-disk bundle format: a TOML header next to little-endian `f32` payloads.
//!
//! Payload layouts: pixels band-major (`b * M + m`), endmembers column-major
//! (`e * B + b`), abundances column-major (`m * E + e`).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GroundTruth, HsiBundle};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub format_version: u32,
    pub name: String,
    pub bands: usize,
    pub pixel_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmember_count: Option<usize>,
    pub payload_files: PayloadFiles,
    pub checksums: PayloadFiles,
}

/// One entry per payload; file names are relative to the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadFiles {
    pub pixels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmembers: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abundances: Option<String>,
}

/// Writes `bundle` as a header at `path` plus payload files beside it.
pub fn save_bundle(bundle: &HsiBundle, path: &Path) -> Result<()> {
    let dir = parent_dir(path);
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad bundle path {}", path.display())))?;
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }

    let pixel_bytes = encode_f32(bundle.pixels().iter().copied());
    let pixels_name = format!("{stem}.pixels.f32");
    fs::write(dir.join(&pixels_name), &pixel_bytes)?;
    let mut files = PayloadFiles {
        pixels: pixels_name,
        endmembers: None,
        abundances: None,
    };
    let mut sums = PayloadFiles {
        pixels: sha256_hex(&pixel_bytes),
        endmembers: None,
        abundances: None,
    };

    if let Some(gt) = bundle.ground_truth() {
        let em = encode_f32(gt.endmembers().t().iter().copied());
        let ab = encode_f32(gt.abundances().t().iter().copied());
        let em_name = format!("{stem}.endmembers.f32");
        let ab_name = format!("{stem}.abundances.f32");
        fs::write(dir.join(&em_name), &em)?;
        fs::write(dir.join(&ab_name), &ab)?;
        files.endmembers = Some(em_name);
        files.abundances = Some(ab_name);
        sums.endmembers = Some(sha256_hex(&em));
        sums.abundances = Some(sha256_hex(&ab));
    }

    let header = BundleHeader {
        format_version: FORMAT_VERSION,
        name: bundle.name().to_string(),
        bands: bundle.bands(),
        pixel_count: bundle.pixel_count(),
        width: bundle.width(),
        height: bundle.height(),
        endmember_count: bundle.ground_truth().map(GroundTruth::endmember_count),
        payload_files: files,
        checksums: sums,
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<HsiBundle> {
    let text = fs::read_to_string(path)?;
    let header: BundleHeader = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    let dir = parent_dir(path);
    let (b, m) = (header.bands, header.pixel_count);

    let pixels = read_payload(
        &dir,
        &header.payload_files.pixels,
        &header.checksums.pixels,
        b * m,
    )?;
    let pixels =
        Array2::from_shape_vec((b, m), pixels).map_err(|e| Error::Format(e.to_string()))?;
    let mut bundle = HsiBundle::new(pixels, header.name.clone())?;
    if let (Some(w), Some(h)) = (header.width, header.height) {
        bundle = bundle
            .with_spatial(w, h)
            .map_err(|e| Error::Format(e.to_string()))?;
    }

    let files = &header.payload_files;
    let sums = &header.checksums;
    match (&files.endmembers, &files.abundances, header.endmember_count) {
        (Some(em_file), Some(ab_file), Some(e)) => {
            let em_sum = sums.endmembers.as_deref().unwrap_or_default();
            let ab_sum = sums.abundances.as_deref().unwrap_or_default();
            let em = read_payload(&dir, em_file, em_sum, b * e)?;
            let ab = read_payload(&dir, ab_file, ab_sum, e * m)?;
            // column-major on disk: read as the transpose, then flip
            let em = Array2::from_shape_vec((e, b), em)
                .map_err(|err| Error::Format(err.to_string()))?
                .reversed_axes()
                .as_standard_layout()
                .to_owned();
            let ab = Array2::from_shape_vec((m, e), ab)
                .map_err(|err| Error::Format(err.to_string()))?
                .reversed_axes()
                .as_standard_layout()
                .to_owned();
            bundle = bundle.with_ground_truth(GroundTruth::new(em, ab)?)?;
        }
        (None, None, None) => {}
        _ => {
            return Err(Error::Format(
                "ground truth header fields are incomplete".into(),
            ))
        }
    }
    Ok(bundle)
}

/// Reads a plain-text CSV with one pixel per row into a `B x M` matrix.
/// A non-numeric first row is treated as a header and skipped.
pub fn read_pixel_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(Error::Format(format!("row {}: {e}", idx + 1))),
        }
    }
    let m = rows.len();
    let b = rows.first().map_or(0, Vec::len);
    if m == 0 || b == 0 {
        return Err(Error::Format("CSV holds no pixels".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != b) {
        return Err(Error::Format(format!(
            "pixel {} has {} bands, expected {b}",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(Array2::from_shape_fn((b, m), |(i, j)| rows[j][i]))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn encode_f32(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn read_payload(dir: &Path, name: &str, checksum: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(dir.join(name))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{name}: {} bytes, header implies {}",
            bytes.len(),
            expected * 4
        )));
    }
    if sha256_hex(&bytes) != checksum {
        return Err(Error::Format(format!("{name}: checksum mismatch")));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::{generate_endmembers, sample_abundances, synthesize, NoiseSpec};

    fn scene(b: usize, e: usize, w: usize, h: usize) -> HsiBundle {
        let em = generate_endmembers(b, e, 5, 1).unwrap();
        let ab = sample_abundances(e, w * h, &vec![1.0; e], 0.1, 2).unwrap();
        let mut x = synthesize(&em, &ab, NoiseSpec::new(0.01).unwrap(), 3)
            .unwrap()
            .with_spatial(w, h)
            .unwrap();
        x.set_name("scene");
        x
    }

    fn roundtrip(bundle: &HsiBundle) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.toml");
        save_bundle(bundle, &path).unwrap();
        let bytes = fs::read(dir.path().join("b.pixels.f32")).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded, bundle.to_f32_precision());

        let path2 = dir.path().join("c.toml");
        save_bundle(&loaded, &path2).unwrap();
        assert_eq!(bytes, fs::read(dir.path().join("c.pixels.f32")).unwrap());
        assert_eq!(load_bundle(&path2).unwrap(), loaded);
    }

    #[test]
    fn samson_shaped_roundtrip() {
        roundtrip(&scene(156, 3, 95, 95));
    }

    #[test]
    fn jasper_shaped_roundtrip() {
        roundtrip(&scene(198, 4, 100, 100));
    }

    #[test]
    fn no_ground_truth_roundtrip() {
        let x = HsiBundle::new(Array2::from_elem((4, 3), 0.25), "bare").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.toml");
        save_bundle(&x, &path).unwrap();
        let y = load_bundle(&path).unwrap();
        assert!(y.ground_truth().is_none());
        assert_eq!(y, x);
    }

    #[test]
    fn truncated_payload_rejected() {
        let x = scene(10, 2, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        save_bundle(&x, &path).unwrap();
        let p = dir.path().join("t.pixels.f32");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_bundle(&path), Err(Error::Format(_))));
    }

    #[test]
    fn corrupted_payload_rejected() {
        let x = scene(10, 2, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        save_bundle(&x, &path).unwrap();
        let p = dir.path().join("t.abundances.f32");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_bundle(&path), Err(Error::Format(_))));
    }

    #[test]
    fn header_shape_mismatch_rejected() {
        let x = scene(10, 2, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        save_bundle(&x, &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("bands = 10", "bands = 11");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_bundle(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_pixels_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("px.csv");
        fs::write(&p, "b1,b2,b3\n0.1,0.2,0.3\n0.4,0.5,0.6\n").unwrap();
        let x = read_pixel_csv(&p).unwrap();
        assert_eq!(x.dim(), (3, 2));
        assert_eq!(x[[2, 1]], 0.6);
        fs::write(&p, "0.1,0.2\n0.4\n").unwrap();
        assert!(read_pixel_csv(&p).is_err());
    }
}
