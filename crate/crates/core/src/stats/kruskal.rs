use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rank::{midranks, tie_sum};
use super::special::chi2_sf;
use super::GroupedScores;
use crate::error::{Error, Result};

/// Natural-log p-values below this are reported as `-inf`.
pub const LOG_P_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalResult {
    pub h: f64,
    pub p: f64,
    pub log_p: f64,
    pub df: usize,
}

pub(crate) fn log_p(p: f64) -> f64 {
    let l = p.ln();
    if l < LOG_P_FLOOR {
        f64::NEG_INFINITY
    } else {
        l
    }
}

/// Pooled midranks plus the group label of each observation.
pub(crate) fn pooled_ranks(g: &GroupedScores) -> (Vec<f64>, Vec<usize>) {
    let values: Vec<f64> = g.groups().iter().flatten().copied().collect();
    let labels = g
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(i, grp)| std::iter::repeat_n(i, grp.len()))
        .collect();
    (midranks(&values), labels)
}

/// Tie-corrected H from ranks and labels. `tie_factor` is
/// `1 - sum(t^3 - t) / (n^3 - n)`; all-tied data yields 0.
pub(crate) fn h_statistic(
    ranks: &[f64],
    labels: &[usize],
    sizes: &[usize],
    tie_factor: f64,
) -> f64 {
    if tie_factor <= 0.0 {
        return 0.0;
    }
    let mut sums = vec![0.0; sizes.len()];
    for (r, &l) in ranks.iter().zip(labels) {
        sums[l] += r;
    }
    let n = ranks.len() as f64;
    let between: f64 = sums.iter().zip(sizes).map(|(s, &m)| s * s / m as f64).sum();
    let h = (12.0 / (n * (n + 1.0)) * between - 3.0 * (n + 1.0)) / tie_factor;
    h.max(0.0)
}

pub(crate) fn tie_factor(g: &GroupedScores) -> f64 {
    let values: Vec<f64> = g.groups().iter().flatten().copied().collect();
    let n = values.len() as f64;
    1.0 - tie_sum(&values) / (n * n * n - n)
}

/// Kruskal-Wallis H test with tie correction; `p` from the chi-square
/// distribution with `N - 1` degrees of freedom.
pub fn kruskal_wallis(g: &GroupedScores) -> Result<KruskalResult> {
    if g.total() < 3 {
        return Err(Error::InvalidInput(
            "Kruskal-Wallis needs at least 3 observations".into(),
        ));
    }
    let (ranks, labels) = pooled_ranks(g);
    let h = h_statistic(&ranks, &labels, &g.sizes(), tie_factor(g));
    let df = g.len() - 1;
    let p = if h == 0.0 {
        1.0
    } else {
        chi2_sf(h, df as f64)?
    };
    Ok(KruskalResult {
        h,
        p,
        log_p: log_p(p),
        df,
    })
}

/// Monte-Carlo permutation p-value for H: the fraction of `shuffles`
/// random relabelings (plus the observed one) with `H* >= H`.
pub fn kruskal_wallis_permutation(g: &GroupedScores, shuffles: usize, seed: u64) -> Result<f64> {
    let observed = kruskal_wallis(g)?.h;
    let (ranks, mut labels) = pooled_ranks(g);
    let sizes = g.sizes();
    let tf = tie_factor(g);
    let tol = 1e-9 * observed.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 1usize;
    for _ in 0..shuffles {
        labels.shuffle(&mut rng);
        if h_statistic(&ranks, &labels, &sizes, tf) >= observed - tol {
            hits += 1;
        }
    }
    Ok(hits as f64 / (shuffles + 1) as f64)
}
