use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{MetricSelector, RunRecord};

/// Fraction of records whose metric is strictly below `threshold`. Records
/// without the metric (for instance diverged runs) count as failures.
pub fn estimate_success_prob(
    records: &[RunRecord],
    metric: MetricSelector,
    threshold: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::MissingData(
            "no records to estimate a success rate from".into(),
        ));
    }
    let hits = records
        .iter()
        .filter(|r| r.metric(metric).is_some_and(|v| v < threshold))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Trials needed so that at least one succeeds with probability `p_req`
/// when each succeeds independently with probability `p`:
/// `ceil(ln(1 - p_req) / ln(1 - p))`.
pub fn required_trials(p: f64, p_req: f64) -> Result<u64> {
    if !(p_req > 0.0 && p_req < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence must lie in (0, 1), got {p_req}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "success probability must lie in [0, 1], got {p}"
        )));
    }
    if p == 0.0 {
        return Err(Error::UnreachableThreshold);
    }
    if p == 1.0 {
        return Ok(1);
    }
    let ratio = (-p_req).ln_1p() / (-p).ln_1p();
    // Exact integer ratios must not be pushed up by rounding noise.
    Ok(((ratio - 1e-9).ceil() as u64).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPlan {
    pub threshold: f64,
    pub p_hat: f64,
    pub p_req: f64,
    pub n_req: u64,
}

impl RetryPlan {
    pub fn new(threshold: f64, p_hat: f64, p_req: f64) -> Result<Self> {
        Ok(Self {
            threshold,
            p_hat,
            p_req,
            n_req: required_trials(p_hat, p_req)?,
        })
    }

    pub fn from_records(
        records: &[RunRecord],
        metric: MetricSelector,
        threshold: f64,
        p_req: f64,
    ) -> Result<Self> {
        Self::new(
            threshold,
            estimate_success_prob(records, metric, threshold)?,
            p_req,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::fixture;

    #[test]
    fn formula_examples() {
        assert_eq!(required_trials(0.5, 0.95).unwrap(), 5);
        assert_eq!(required_trials(0.95, 0.95).unwrap(), 1);
        assert_eq!(required_trials(0.259, 0.95).unwrap(), 10);
        assert_eq!(required_trials(1.0, 0.99).unwrap(), 1);
        assert!(matches!(
            required_trials(0.0, 0.95),
            Err(Error::UnreachableThreshold)
        ));
        assert!(required_trials(0.5, 1.0).is_err());
    }

    #[test]
    fn monotone_over_grid() {
        let ps: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let reqs: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for &q in &reqs {
            for w in ps.windows(2) {
                assert!(required_trials(w[1], q).unwrap() <= required_trials(w[0], q).unwrap());
            }
        }
        for &p in &ps {
            for w in reqs.windows(2) {
                assert!(required_trials(p, w[1]).unwrap() >= required_trials(p, w[0]).unwrap());
            }
        }
    }

    #[test]
    fn success_rate() {
        let recs: Vec<_> = [0.1, 0.2, 0.3].iter().map(|&v| fixture(1, 1, v)).collect();
        let m = MetricSelector::ReconRmse;
        assert!((estimate_success_prob(&recs, m, 0.15).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(estimate_success_prob(&recs, m, 0.05).unwrap(), 0.0);
        assert_eq!(estimate_success_prob(&recs, m, 0.5).unwrap(), 1.0);
        assert!(estimate_success_prob(&[], m, 0.5).is_err());
        let plan = RetryPlan::from_records(&recs, m, 0.25, 0.95).unwrap();
        assert_eq!(plan.n_req, required_trials(2.0 / 3.0, 0.95).unwrap());
    }
}
