use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::{GroundTruth, HsiBundle, NoiseSpec};
use crate::error::{ensure_dims, Error, Result};
use crate::metrics::spectral_angle;

const MIN_PAIRWISE_SAD: f64 = 0.15;
const MAX_SEPARATION_RETRIES: usize = 100;
const REFLECTANCE_RANGE: (f64, f64) = (0.05, 0.95);

/// Mixes `endmembers` (`B x E`) with `abundances` (`E x M`) and adds seeded
/// Gaussian noise.
pub fn synthesize(
    endmembers: &Array2<f64>,
    abundances: &Array2<f64>,
    noise: NoiseSpec,
    seed: u64,
) -> Result<HsiBundle> {
    ensure_dims(endmembers.ncols() == abundances.nrows(), || {
        format!(
            "W is {}x{} but A is {}x{}",
            endmembers.nrows(),
            endmembers.ncols(),
            abundances.nrows(),
            abundances.ncols()
        )
    })?;
    let gt = GroundTruth::new(endmembers.clone(), abundances.clone())?;
    let mut pixels = endmembers.dot(abundances);
    if noise.sigma() > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.sigma()).expect("sigma validated");
        pixels
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    HsiBundle::new(pixels, "synthetic")?.with_ground_truth(gt)
}

/// Draws `M` Dirichlet(`concentration`) abundance columns; the first
/// `round(pure_fraction * M)` columns are replaced by unit vectors cycling
/// through the endmembers.
pub fn sample_abundances(
    endmembers: usize,
    pixels: usize,
    concentration: &[f64],
    pure_fraction: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if endmembers < 2 || pixels < 1 {
        return Err(Error::InvalidInput(format!(
            "need E >= 2 and M >= 1, got E={endmembers}, M={pixels}"
        )));
    }
    ensure_dims(concentration.len() == endmembers, || {
        format!(
            "concentration has {} entries, expected {endmembers}",
            concentration.len()
        )
    })?;
    if concentration.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidInput(
            "concentration entries must be > 0".into(),
        ));
    }
    if !(0.0..=1.0).contains(&pure_fraction) {
        return Err(Error::InvalidInput(format!(
            "pure_fraction must lie in [0, 1], got {pure_fraction}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<Gamma<f64>> = concentration
        .iter()
        .map(|&c| Gamma::new(c, 1.0).expect("shape validated"))
        .collect();
    let n_pure = (pure_fraction * pixels as f64).round() as usize;
    let mut a = Array2::zeros((endmembers, pixels));
    for (m, mut col) in a.axis_iter_mut(Axis(1)).enumerate() {
        if m < n_pure {
            col[m % endmembers] = 1.0;
            continue;
        }
        loop {
            for (v, g) in col.iter_mut().zip(&gammas) {
                *v = g.sample(&mut rng);
            }
            let s = col.sum();
            if s > 0.0 && s.is_finite() {
                col.mapv_inplace(|v| v / s);
                break;
            }
        }
    }
    Ok(a)
}

/// Random smooth endmember spectra in `[0.05, 0.95]` with pairwise SAD of at
/// least 0.15 rad.
pub fn generate_endmembers(
    bands: usize,
    endmembers: usize,
    smoothness: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if endmembers < 2 || bands <= endmembers {
        return Err(Error::InvalidInput(format!(
            "need B > E >= 2, got B={bands}, E={endmembers}"
        )));
    }
    if smoothness < 1 {
        return Err(Error::InvalidInput("smoothness window must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0;
    for _ in 0..MAX_SEPARATION_RETRIES {
        let mut w = Array2::zeros((bands, endmembers));
        for mut col in w.axis_iter_mut(Axis(1)) {
            let raw: Vec<f64> = (0..bands).map(|_| rng.random::<f64>()).collect();
            let curve = rescale(&moving_average(&raw, smoothness), REFLECTANCE_RANGE);
            col.iter_mut().zip(curve).for_each(|(d, s)| *d = s);
        }
        let min_sad = min_pairwise_sad(&w);
        if min_sad >= MIN_PAIRWISE_SAD {
            return Ok(w);
        }
        best = f64::max(best, min_sad);
    }
    Err(Error::Separation {
        retries: MAX_SEPARATION_RETRIES,
        best,
    })
}

fn min_pairwise_sad(w: &Array2<f64>) -> f64 {
    let e = w.ncols();
    let mut min = f64::INFINITY;
    for i in 0..e {
        for j in i + 1..e {
            let sad = spectral_angle(w.column(i), w.column(j)).unwrap_or(0.0);
            min = min.min(sad);
        }
    }
    min
}

/// Centered moving average, truncated at the edges.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    (0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(half_lo);
            let hi = (k + half_hi).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn rescale(x: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![(lo + hi) / 2.0; x.len()];
    }
    x.iter()
        .map(|&v| (lo + (v - min) / (max - min) * (hi - lo)).clamp(lo, hi))
        .collect()
}
