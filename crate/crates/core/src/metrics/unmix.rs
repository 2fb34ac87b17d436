use itertools::Itertools;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::harness::RunRecord;

/// Exhaustive matching is limited to this many endmembers (10! candidates).
pub const MAX_MATCH_ENDMEMBERS: usize = 10;

/// Spectral angle in radians between two spectra.
pub fn spectral_angle(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    ensure_dims(a.len() == b.len(), || {
        format!("spectra of length {} and {}", a.len(), b.len())
    })?;
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::DegenerateSpectrum("zero-norm spectrum".into()));
    }
    let cos = a.dot(&b) / (aa * bb).sqrt();
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Estimated endmember `mapping[j]` is matched to ground-truth endmember `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidInput(format!(
                    "{mapping:?} is not a permutation"
                )));
            }
        }
        Ok(Self(mapping))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, j: usize) -> usize {
        self.0[j]
    }

    /// Composition `self` after `other`: `j -> self[other[j]]`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(other.0.iter().map(|&k| self.0[k]).collect())
    }
}

/// Finds the permutation minimizing the summed SAD between estimated and
/// ground-truth endmembers. Ties go to the lexicographically smallest
/// permutation.
pub fn match_endmembers(estimated: &Array2<f64>, truth: &Array2<f64>) -> Result<Permutation> {
    ensure_dims(estimated.dim() == truth.dim(), || {
        format!("endmembers {:?} vs {:?}", estimated.dim(), truth.dim())
    })?;
    let e = truth.ncols();
    if e > MAX_MATCH_ENDMEMBERS {
        return Err(Error::InvalidInput(format!(
            "exhaustive matching supports at most {MAX_MATCH_ENDMEMBERS} endmembers, got {e}"
        )));
    }
    // cost[k][j]: estimated column k against truth column j
    let mut cost = vec![vec![0.0; e]; e];
    for (k, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = spectral_angle(estimated.column(k), truth.column(j))?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..e).permutations(e) {
        let total: f64 = perm.iter().enumerate().map(|(j, &k)| cost[k][j]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    Ok(Permutation(best.map(|(_, p)| p).unwrap_or_default()))
}

fn check_perm(perm: &Permutation, e: usize) -> Result<()> {
    ensure_dims(perm.len() == e, || {
        format!("permutation of length {} for {e} endmembers", perm.len())
    })
}

/// Pooled RMSE over all `E x M` abundance entries after reordering the rows
/// of `estimated` by `perm`.
pub fn rmse_abundances(
    truth: &Array2<f64>,
    estimated: &Array2<f64>,
    perm: &Permutation,
) -> Result<f64> {
    let per = squared_errors_per_row(truth, estimated, perm)?;
    let n = truth.len() as f64;
    Ok((per.iter().sum::<f64>() / n).sqrt())
}

/// RMSE of each ground-truth endmember's abundance map.
pub fn rmse_per_endmember(
    truth: &Array2<f64>,
    estimated: &Array2<f64>,
    perm: &Permutation,
) -> Result<Vec<f64>> {
    let m = truth.ncols() as f64;
    Ok(squared_errors_per_row(truth, estimated, perm)?
        .into_iter()
        .map(|s| (s / m).sqrt())
        .collect())
}

fn squared_errors_per_row(
    truth: &Array2<f64>,
    estimated: &Array2<f64>,
    perm: &Permutation,
) -> Result<Vec<f64>> {
    ensure_dims(truth.dim() == estimated.dim(), || {
        format!("abundances {:?} vs {:?}", truth.dim(), estimated.dim())
    })?;
    check_perm(perm, truth.nrows())?;
    Ok((0..truth.nrows())
        .map(|j| {
            truth
                .row(j)
                .iter()
                .zip(estimated.row(perm.get(j)).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        })
        .collect())
}

/// Mean SAD between each ground-truth endmember and its matched estimate.
pub fn sad_endmembers(
    truth: &Array2<f64>,
    estimated: &Array2<f64>,
    perm: &Permutation,
) -> Result<f64> {
    ensure_dims(truth.dim() == estimated.dim(), || {
        format!("endmembers {:?} vs {:?}", truth.dim(), estimated.dim())
    })?;
    let e = truth.ncols();
    check_perm(perm, e)?;
    let mut total = 0.0;
    for j in 0..e {
        total += spectral_angle(estimated.column(perm.get(j)), truth.column(j))?;
    }
    Ok(total / e as f64)
}

/// Mean and sample standard deviation of the ground-truth errors over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub abundance_mean: f64,
    pub abundance_std: f64,
    pub endmember_mean: f64,
    pub endmember_std: f64,
    pub count: usize,
}

impl ErrorSummary {
    /// `"0.07±0.1"`-style strings for abundances and endmembers.
    pub fn formatted(&self) -> (String, String) {
        (
            format_mean_std(self.abundance_mean, self.abundance_std),
            format_mean_std(self.endmember_mean, self.endmember_std),
        )
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.1}")
}

/// Averages `E^a` and `E^e` over every record that carries both. Diverged
/// records and records without ground-truth metrics are skipped.
pub fn aggregate_errors(records: &[RunRecord]) -> Result<ErrorSummary> {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.abundance_rmse?, r.endmember_sad?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::MissingData(
            "no records with ground-truth errors to aggregate".into(),
        ));
    }
    let (a, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (abundance_mean, abundance_std) = mean_std(&a);
    let (endmember_mean, endmember_std) = mean_std(&e);
    Ok(ErrorSummary {
        abundance_mean,
        abundance_std,
        endmember_mean,
        endmember_std,
        count: a.len(),
    })
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
