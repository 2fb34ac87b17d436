use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kruskal::{h_statistic, pooled_ranks, tie_factor, KruskalResult};
use super::special::t_sf;
use super::GroupedScores;
use crate::error::{Error, Result};

/// Multiplicity handling for the pairwise p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    #[default]
    None,
    /// Holm's step-down procedure over the `N(N-1)/2` pairs.
    Holm,
}

/// Absolute pairwise Conover-Iman t statistics for given ranks and labels.
fn t_matrix(ranks: &[f64], labels: &[usize], sizes: &[usize], h: f64) -> Array2<f64> {
    let k = sizes.len();
    let n = ranks.len() as f64;
    let mut sums = vec![0.0; k];
    for (r, &l) in ranks.iter().zip(labels) {
        sums[l] += r;
    }
    let s2 = (ranks.iter().map(|r| r * r).sum::<f64>() - n * (n + 1.0).powi(2) / 4.0) / (n - 1.0);
    let common = s2 * (n - 1.0 - h) / (n - k as f64);
    let mut t = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let diff = (sums[i] / sizes[i] as f64 - sums[j] / sizes[j] as f64).abs();
            let se2 = common * (1.0 / sizes[i] as f64 + 1.0 / sizes[j] as f64);
            let v = if diff == 0.0 {
                0.0
            } else if se2 <= 0.0 {
                f64::INFINITY
            } else {
                diff / se2.sqrt()
            };
            t[[i, j]] = v;
            t[[j, i]] = v;
        }
    }
    t
}

fn check_gate(g: &GroupedScores, kw: &KruskalResult, alpha: f64) -> Result<()> {
    if kw.p >= alpha {
        return Err(Error::Precondition(format!(
            "post-hoc comparisons require a Kruskal-Wallis rejection (p = {:.4} >= alpha = {alpha})",
            kw.p
        )));
    }
    if g.total() <= g.len() {
        return Err(Error::InvalidInput(
            "Conover-Iman needs more observations than groups".into(),
        ));
    }
    Ok(())
}

/// Conover-Iman pairwise comparisons after a Kruskal-Wallis rejection.
/// Two-sided p-values from the t distribution with `n - N` degrees of
/// freedom; the matrix is symmetric with a unit diagonal.
pub fn conover_iman(
    g: &GroupedScores,
    kw: &KruskalResult,
    alpha: f64,
    adjust: Adjustment,
) -> Result<Array2<f64>> {
    check_gate(g, kw, alpha)?;
    let (ranks, labels) = pooled_ranks(g);
    let t = t_matrix(&ranks, &labels, &g.sizes(), kw.h);
    let df = (g.total() - g.len()) as f64;
    let mut p = Array2::ones(t.dim());
    for ((i, j), &tij) in t.indexed_iter() {
        if i != j {
            p[[i, j]] = (2.0 * t_sf(tij, df)?).min(1.0);
        }
    }
    Ok(match adjust {
        Adjustment::None => p,
        Adjustment::Holm => holm(&p),
    })
}

/// Monte-Carlo permutation counterpart of [`conover_iman`]: for each pair,
/// the fraction of random relabelings whose |t| reaches the observed one.
pub fn conover_iman_permutation(
    g: &GroupedScores,
    kw: &KruskalResult,
    alpha: f64,
    shuffles: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    check_gate(g, kw, alpha)?;
    let (ranks, mut labels) = pooled_ranks(g);
    let sizes = g.sizes();
    let observed = t_matrix(&ranks, &labels, &sizes, kw.h);
    let tf = tie_factor(g);
    let mut hits = Array2::<f64>::ones(observed.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..shuffles {
        labels.shuffle(&mut rng);
        let h = h_statistic(&ranks, &labels, &sizes, tf);
        let t = t_matrix(&ranks, &labels, &sizes, h);
        for ((idx, &ts), &to) in t.indexed_iter().zip(observed.iter()) {
            if ts >= to - 1e-9 * to.abs().max(1.0) {
                hits[idx] += 1.0;
            }
        }
    }
    let mut p = hits / (shuffles + 1) as f64;
    p.diag_mut().fill(1.0);
    Ok(p)
}

/// Holm step-down adjustment of the upper-triangle p-values, mirrored.
pub fn holm(p: &Array2<f64>) -> Array2<f64> {
    let k = p.nrows();
    let mut pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .collect();
    pairs.sort_by(|a, b| p[*a].total_cmp(&p[*b]));
    let m = pairs.len();
    let mut out = p.clone();
    let mut running = 0.0f64;
    for (rank, &(i, j)) in pairs.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[[i, j]]).min(1.0));
        out[[i, j]] = running;
        out[[j, i]] = running;
    }
    out
}

/// Fraction of the `N(N-1)/2` upper-triangle entries with `p < alpha`.
pub fn ph_ratio(p: &Array2<f64>, alpha: f64) -> f64 {
    let k = p.nrows();
    if k < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            if p[[i, j]] < alpha {
                hits += 1;
            }
        }
    }
    hits as f64 / (k * (k - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::kruskal_wallis;
    use ndarray::array;

    fn g(v: &[&[f64]]) -> GroupedScores {
        GroupedScores::new(v.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    #[test]
    fn gate_is_enforced() {
        let d = g(&[&[1.0, 5.0, 3.0], &[2.0, 4.0, 6.0]]);
        let kw = kruskal_wallis(&d).unwrap();
        assert!(matches!(
            conover_iman(&d, &kw, 0.05, Adjustment::None),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn symmetric_unit_diagonal_and_equal_means() {
        let d = g(&[
            &[1.0, 2.0, 3.0, 4.5],
            &[10.0, 11.0, 12.0, 13.0],
            &[0.5, 2.5, 3.5, 4.0],
            &[20.0, 21.0, 22.0, 23.0],
        ]);
        let kw = kruskal_wallis(&d).unwrap();
        let p = conover_iman(&d, &kw, 0.05, Adjustment::None).unwrap();
        for i in 0..4 {
            assert_eq!(p[[i, i]], 1.0);
            for j in 0..4 {
                assert_eq!(p[[i, j]], p[[j, i]]);
                assert!((0.0..=1.0).contains(&p[[i, j]]));
            }
        }
        // Groups 0 and 2 have identical rank means (2.5 each).
        assert_eq!(p[[0, 2]], 1.0);
        let adj = conover_iman(&d, &kw, 0.05, Adjustment::Holm).unwrap();
        assert!(adj.iter().zip(p.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn holm_hand_example() {
        let p = array![[1.0, 0.01, 0.04], [0.01, 1.0, 0.03], [0.04, 0.03, 1.0]];
        let h = holm(&p);
        assert!((h[[0, 1]] - 0.03).abs() < 1e-15);
        assert!((h[[1, 2]] - 0.06).abs() < 1e-15);
        assert!((h[[0, 2]] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn ratio_examples() {
        let all = |v: f64| {
            let mut m = Array2::from_elem((4, 4), v);
            m.diag_mut().fill(1.0);
            m
        };
        assert_eq!(ph_ratio(&all(0.01), 0.05), 1.0);
        assert_eq!(ph_ratio(&all(0.5), 0.05), 0.0);
        let mut half = all(0.5);
        for (i, j) in [(0, 1), (0, 2), (1, 3)] {
            half[[i, j]] = 0.01;
            half[[j, i]] = 0.01;
        }
        assert_eq!(ph_ratio(&half, 0.05), 0.5);
    }
}
