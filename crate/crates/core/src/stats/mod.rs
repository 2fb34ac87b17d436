//! Nonparametric verification of initialization effects and the retraining
//! planner.
//!
//! The pipeline is Levene (variance equality) → Kruskal-Wallis (location) →
//! Conover-Iman pairwise comparisons, the last only when Kruskal-Wallis
//! rejects at the configured `alpha`.

mod conover;
mod kruskal;
mod levene;
mod rank;
mod retry;
pub mod special;

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use conover::{conover_iman, conover_iman_permutation, holm, ph_ratio, Adjustment};
pub use kruskal::{kruskal_wallis, kruskal_wallis_permutation, KruskalResult, LOG_P_FLOOR};
pub use levene::{levene, LeveneResult};
pub use rank::midranks;
pub use retry::{estimate_success_prob, required_trials, RetryPlan};
pub use special::{chi2_sf, f_sf, t_sf};

use crate::error::{Error, Result};
use crate::harness::{MetricSelector, RunRecord};

/// One score vector per initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedScores {
    groups: Vec<Vec<f64>>,
}

impl GroupedScores {
    pub fn new(groups: Vec<Vec<f64>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 groups, got {}",
                groups.len()
            )));
        }
        if let Some(i) = groups.iter().position(Vec::is_empty) {
            return Err(Error::InvalidInput(format!("group {i} is empty")));
        }
        if groups.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        Ok(Self { groups })
    }

    /// Groups records by `init_id` (ascending). Records lacking the metric,
    /// e.g. diverged runs, are left out; their count is returned.
    pub fn from_records(records: &[RunRecord], metric: MetricSelector) -> Result<(Self, usize)> {
        let mut by_init: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        let mut excluded = 0;
        for r in records {
            match r.metric(metric).filter(|v| v.is_finite() && !r.diverged) {
                Some(v) => by_init.entry(r.init_id).or_default().push(v),
                None => excluded += 1,
            }
        }
        if by_init.is_empty() && excluded > 0 {
            return Err(Error::MissingData(format!("no record carries {metric}")));
        }
        Ok((Self::new(by_init.into_values().collect())?, excluded))
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub alpha: f64,
    pub adjustment: Adjustment,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            adjustment: Adjustment::None,
        }
    }
}

/// Outcome of the full test pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: f64,
    pub groups: usize,
    pub observations: usize,
    /// Absent when some group has fewer than two values.
    pub levene: Option<LeveneResult>,
    pub kruskal: KruskalResult,
    pub rejected: bool,
    pub adjustment: Adjustment,
    /// Present only when Kruskal-Wallis rejected.
    pub posthoc: Option<Vec<Vec<f64>>>,
    pub ph_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSelector>,
    #[serde(default)]
    pub excluded_records: usize,
}

/// Runs Levene, Kruskal-Wallis and, on rejection, Conover-Iman.
pub fn analyze(g: &GroupedScores, opts: AnalysisOptions) -> Result<StatReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    let levene = match levene(g) {
        Ok(l) => Some(l),
        Err(Error::InvalidInput(_)) => None,
        Err(e) => return Err(e),
    };
    let kruskal = kruskal_wallis(g)?;
    let rejected = kruskal.p < opts.alpha && g.total() > g.len();
    let posthoc = if rejected {
        Some(conover_iman(g, &kruskal, opts.alpha, opts.adjustment)?)
    } else {
        None
    };
    Ok(StatReport {
        alpha: opts.alpha,
        groups: g.len(),
        observations: g.total(),
        levene,
        kruskal,
        rejected,
        adjustment: opts.adjustment,
        ph_ratio: posthoc.as_ref().map_or(0.0, |p| ph_ratio(p, opts.alpha)),
        posthoc: posthoc.map(|p| p.rows().into_iter().map(|r| r.to_vec()).collect()),
        metric: None,
        excluded_records: 0,
    })
}

/// Analysis of a record set on the selected metric.
pub fn analyze_records(
    records: &[RunRecord],
    metric: MetricSelector,
    opts: AnalysisOptions,
) -> Result<StatReport> {
    let (g, excluded) = GroupedScores::from_records(records, metric)?;
    let mut report = analyze(&g, opts)?;
    report.metric = Some(metric);
    report.excluded_records = excluded;
    Ok(report)
}

pub const REPORT_FILE: &str = "stat_report.toml";
pub const MATRIX_FILE: &str = "posthoc_matrix.csv";
pub const LONG_FILE: &str = "posthoc_long.csv";

impl StatReport {
    pub fn posthoc_matrix(&self) -> Option<Array2<f64>> {
        let rows = self.posthoc.as_ref()?;
        let n = rows.len();
        Array2::from_shape_vec((n, n), rows.iter().flatten().copied().collect()).ok()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    /// Human-readable multi-line summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        if let Some(l) = &self.levene {
            s += &format!("levene: W = {:.6}, p = {:.6e}\n", l.stat, l.p);
        }
        s += &format!(
            "kruskal-wallis: H = {:.6}, p = {:.6e}, log p = {:.4}, df = {}\n",
            self.kruskal.h, self.kruskal.p, self.kruskal.log_p, self.kruskal.df
        );
        if self.rejected {
            s += &format!(
                "H0 rejected at alpha = {}; ph = {:.4}\n",
                self.alpha, self.ph_ratio
            );
        } else {
            s += &format!(
                "H0 not rejected at alpha = {}; no post-hoc comparisons\n",
                self.alpha
            );
        }
        s
    }

    /// Writes the TOML report and, when present, the post-hoc matrix CSV and
    /// the long `i,j,p,significant` CSV (1-based group indices).
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_FILE), self.to_toml())?;
        let Some(p) = self.posthoc_matrix() else {
            return Ok(());
        };
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_path(dir.join(MATRIX_FILE)).map_err(csv_err)?;
        let header: Vec<String> = std::iter::once("init".to_string())
            .chain((1..=p.nrows()).map(|i| i.to_string()))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in p.rows().into_iter().enumerate() {
            let fields: Vec<String> = std::iter::once((i + 1).to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(LONG_FILE)).map_err(csv_err)?;
        w.write_record(["i", "j", "p", "significant"])
            .map_err(csv_err)?;
        for ((i, j), v) in p.indexed_iter() {
            let sig = i != j && *v < self.alpha;
            w.write_record([
                (i + 1).to_string(),
                (j + 1).to_string(),
                v.to_string(),
                sig.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::fixture;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn separated() -> GroupedScores {
        GroupedScores::new(vec![
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(GroupedScores::new(vec![vec![1.0]]).is_err());
        assert!(GroupedScores::new(vec![vec![1.0], vec![]]).is_err());
        assert!(GroupedScores::new(vec![vec![1.0], vec![f64::NAN]]).is_err());
    }

    #[test]
    fn pipeline_on_separated_groups() {
        let r = analyze(&separated(), AnalysisOptions::default()).unwrap();
        assert!(r.rejected);
        assert!((r.kruskal.h - 7.2).abs() < 1e-9);
        let p = r.posthoc_matrix().unwrap();
        assert_eq!(p.dim(), (3, 3));
        assert!((0.0..=1.0).contains(&r.ph_ratio));
        let dir = tempfile::tempdir().unwrap();
        r.write_files(dir.path()).unwrap();
        let back: StatReport =
            toml::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(back, r);
        let long = fs::read_to_string(dir.path().join(LONG_FILE)).unwrap();
        assert!(long.starts_with("i,j,p,significant\n"));
        assert_eq!(long.lines().count(), 10);
    }

    #[test]
    fn no_posthoc_without_rejection() {
        let g = GroupedScores::new(vec![vec![1.0, 4.0, 5.0], vec![2.0, 3.0, 6.0]]).unwrap();
        let r = analyze(&g, AnalysisOptions::default()).unwrap();
        assert!(!r.rejected && r.posthoc.is_none() && r.ph_ratio == 0.0);
        let dir = tempfile::tempdir().unwrap();
        r.write_files(dir.path()).unwrap();
        assert!(!dir.path().join(MATRIX_FILE).exists());
    }

    #[test]
    fn records_group_by_init_and_skip_diverged() {
        let mut recs = Vec::new();
        for (i, vals) in [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
            .iter()
            .enumerate()
        {
            for (j, &v) in vals.iter().enumerate() {
                recs.push(fixture(i + 1, j + 1, v));
            }
        }
        let mut bad = fixture(2, 4, 100.0);
        bad.diverged = true;
        recs.push(bad);
        let r =
            analyze_records(&recs, MetricSelector::ReconRmse, AnalysisOptions::default()).unwrap();
        assert_eq!(r.excluded_records, 1);
        assert!((r.kruskal.h - 7.2).abs() < 1e-9);
    }

    fn random_groups(seed: u64, groups: usize, size: usize) -> GroupedScores {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        GroupedScores::new(
            (0..groups)
                .map(|_| (0..size).map(|_| d.sample(&mut rng)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn shift_leaves_outputs_unchanged() {
        for seed in 0..20 {
            let g = random_groups(seed, 4, 6);
            let shifted = GroupedScores::new(
                g.groups()
                    .iter()
                    .map(|v| v.iter().map(|x| x + 3.25).collect())
                    .collect(),
            )
            .unwrap();
            let opts = AnalysisOptions {
                alpha: 0.5,
                adjustment: Adjustment::None,
            };
            let (a, b) = (analyze(&g, opts).unwrap(), analyze(&shifted, opts).unwrap());
            assert_eq!(a.kruskal, b.kruskal);
            assert_eq!(a.posthoc, b.posthoc);
            let (la, lb) = (a.levene.unwrap(), b.levene.unwrap());
            assert!((la.stat - lb.stat).abs() < 1e-9 * la.stat.max(1.0));
            assert!((la.p - lb.p).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kruskal_is_rank_invariant(seed in 0u64..10_000) {
            let g = random_groups(seed, 3, 5);
            let t = GroupedScores::new(
                g.groups().iter().map(|v| v.iter().map(|x| x.exp() * 2.0 + 1.0).collect()).collect(),
            )
            .unwrap();
            prop_assert_eq!(kruskal_wallis(&g).unwrap(), kruskal_wallis(&t).unwrap());
        }
    }
}
