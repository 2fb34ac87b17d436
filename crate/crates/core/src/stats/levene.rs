use serde::{Deserialize, Serialize};

use super::special::f_sf;
use super::GroupedScores;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub stat: f64,
    pub p: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Levene's test for equal variances with mean centering. `p` from the F
/// distribution with `(N - 1, n - N)` degrees of freedom.
pub fn levene(g: &GroupedScores) -> Result<LeveneResult> {
    if g.groups().iter().any(|grp| grp.len() < 2) {
        return Err(Error::InvalidInput(
            "Levene's test needs at least 2 values per group".into(),
        ));
    }
    let z: Vec<Vec<f64>> = g
        .groups()
        .iter()
        .map(|grp| {
            let m = mean(grp);
            grp.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let k = z.len() as f64;
    let n = g.total() as f64;
    let group_means: Vec<f64> = z.iter().map(|zi| mean(zi)).collect();
    let grand = z.iter().flatten().sum::<f64>() / n;
    let between: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(zi, m)| zi.len() as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(zi, m)| zi.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let scale = grand.abs().max(f64::MIN_POSITIVE);
    // Relative cutoffs absorb rounding noise from the centering step.
    let between = if between <= 1e-24 * scale * scale * n {
        0.0
    } else {
        between
    };
    let stat = if within <= 1e-24 * scale * scale * n {
        if between == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (n - k) / (k - 1.0) * between / within
    };
    let p = f_sf(stat, k - 1.0, n - k)?;
    Ok(LeveneResult { stat, p })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[&[f64]]) -> GroupedScores {
        GroupedScores::new(v.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    #[test]
    fn shifted_groups_have_zero_statistic() {
        let r = levene(&g(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]])).unwrap();
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.p, 1.0);
        let r = levene(&g(&[&[0.3, 1.7, 2.2], &[0.3, 1.7, 2.2]])).unwrap();
        assert_eq!(r.stat, 0.0);
    }

    #[test]
    fn direct_formula() {
        // z = [5, 5], [1, 1]; zbar = [5, 1], grand 3; between = 2*4 + 2*4 = 16,
        // within = 0 -> statistic is unbounded.
        let r = levene(&g(&[&[0.0, 10.0], &[4.0, 6.0]])).unwrap();
        assert!(r.stat.is_infinite() && r.p == 0.0);
        // Unequal sizes: z = [1, 1] and [2, 2, 0]; group means 1 and 4/3,
        // grand mean 6/5.
        let r = levene(&g(&[&[0.0, 2.0], &[1.0, 5.0, 3.0]])).unwrap();
        let between = 2.0 * (1.0f64 - 1.2).powi(2) + 3.0 * (4.0f64 / 3.0 - 1.2).powi(2);
        let within = 2.0 * (2.0f64 - 4.0 / 3.0).powi(2) + (4.0f64 / 3.0).powi(2);
        assert!((r.stat - 3.0 * between / within).abs() < 1e-12);
    }

    #[test]
    fn needs_two_per_group() {
        assert!(levene(&g(&[&[1.0], &[1.0, 2.0]])).is_err());
    }
}
