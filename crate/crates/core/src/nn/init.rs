use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight initialization families.
///
/// `HeUniform` follows the common deep-learning framework default rather than
/// the original He recipe: weights use bound `sqrt(6 / ((1 + 5) * fan_in))`
/// (Kaiming-uniform with `a = sqrt(5)`) and biases are drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. All other families zero the biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitScheme {
    #[serde(rename = "KHN")]
    HeNormal,
    #[serde(rename = "KHU")]
    HeUniform,
    #[serde(rename = "XGN")]
    GlorotNormal,
    #[serde(rename = "XGU")]
    GlorotUniform,
}

impl InitScheme {
    pub const ALL: [InitScheme; 4] = [
        InitScheme::HeNormal,
        InitScheme::HeUniform,
        InitScheme::GlorotNormal,
        InitScheme::GlorotUniform,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            InitScheme::HeNormal => "KHN",
            InitScheme::HeUniform => "KHU",
            InitScheme::GlorotNormal => "XGN",
            InitScheme::GlorotUniform => "XGU",
        }
    }

    /// Standard deviation of the weight distribution.
    pub fn weight_std(self, fan_in: usize, fan_out: usize) -> f64 {
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        match self {
            InitScheme::HeNormal => (2.0 / fi).sqrt(),
            InitScheme::GlorotNormal => (2.0 / (fi + fo)).sqrt(),
            InitScheme::HeUniform | InitScheme::GlorotUniform => {
                self.uniform_bound(fan_in, fan_out) / 3f64.sqrt()
            }
        }
    }

    /// Half-width of the uniform weight distribution; `NaN` for normal schemes.
    pub fn uniform_bound(self, fan_in: usize, fan_out: usize) -> f64 {
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        match self {
            InitScheme::GlorotUniform => (6.0 / (fi + fo)).sqrt(),
            InitScheme::HeUniform => (6.0 / ((1.0 + 5.0) * fi)).sqrt(),
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "khn" | "he_normal" | "henormal" => Ok(InitScheme::HeNormal),
            "khu" | "he_uniform" | "heuniform" => Ok(InitScheme::HeUniform),
            "xgn" | "glorot_normal" | "glorotnormal" => Ok(InitScheme::GlorotNormal),
            "xgu" | "glorot_uniform" | "glorotuniform" => Ok(InitScheme::GlorotUniform),
            _ => Err(Error::Config(format!("unknown init scheme {s:?}"))),
        }
    }
}

/// Draws a `fan_out x fan_in` weight matrix and a `fan_out` bias vector.
pub fn init_weights(
    scheme: InitScheme,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_weights_with(scheme, fan_in, fan_out, &mut rng)
}

pub(crate) fn init_weights_with<R: Rng + ?Sized>(
    scheme: InitScheme,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidInput(format!(
            "fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}"
        )));
    }
    let weights = match scheme {
        InitScheme::HeNormal | InitScheme::GlorotNormal => {
            let d = Normal::new(0.0, scheme.weight_std(fan_in, fan_out)).expect("finite std");
            Array2::from_shape_simple_fn((fan_out, fan_in), || d.sample(rng))
        }
        InitScheme::HeUniform | InitScheme::GlorotUniform => {
            let a = scheme.uniform_bound(fan_in, fan_out);
            let d = Uniform::new(-a, a).expect("positive bound");
            Array2::from_shape_simple_fn((fan_out, fan_in), || d.sample(rng))
        }
    };
    let bias = if scheme == InitScheme::HeUniform {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let d = Uniform::new(-bound, bound).expect("positive bound");
        Array1::from_shape_simple_fn(fan_out, || d.sample(rng))
    } else {
        Array1::zeros(fan_out)
    };
    Ok((weights, bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn glorot_uniform_bound() {
        let a = InitScheme::GlorotUniform.uniform_bound(156, 27);
        assert!((a - 0.18107).abs() < 1e-5);
        let (w, _) = init_weights(InitScheme::GlorotUniform, 156, 27, 3).unwrap();
        assert_eq!(w.dim(), (27, 156));
        assert!(w.iter().all(|v| v.abs() < a));
    }

    #[test]
    fn he_normal_std() {
        let (w, _) = init_weights(InitScheme::HeNormal, 156, 1_000_000 / 156 + 1, 4).unwrap();
        let (_, var) = moments(w.iter().copied());
        let target = (2.0f64 / 156.0).sqrt();
        assert!((target - 0.11323).abs() < 1e-5);
        assert!((var.sqrt() / target - 1.0).abs() < 0.01);
    }

    #[test]
    fn biases_zero_except_he_uniform() {
        for scheme in InitScheme::ALL {
            let (_, b) = init_weights(scheme, 20, 30, 9).unwrap();
            if scheme == InitScheme::HeUniform {
                let bound = 1.0 / 20f64.sqrt();
                assert!(b.iter().all(|v| v.abs() <= bound));
                assert!(b.iter().any(|&v| v != 0.0));
            } else {
                assert!(b.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn closed_form_moments_over_a_million_draws() {
        let (fan_in, fan_out) = (50, 20_000);
        for scheme in InitScheme::ALL {
            let (w, _) = init_weights(scheme, fan_in, fan_out, 11).unwrap();
            assert!(w.len() >= 1_000_000);
            let (mean, var) = moments(w.iter().copied());
            let target = scheme.weight_std(fan_in, fan_out).powi(2);
            assert!(mean.abs() < 1e-3, "{scheme}: mean {mean}");
            assert!(
                (var / target - 1.0).abs() < 0.01,
                "{scheme}: var {var} vs {target}"
            );
        }
    }

    #[test]
    fn deterministic_and_rejects_zero_fan() {
        let a = init_weights(InitScheme::GlorotNormal, 5, 4, 1).unwrap();
        let b = init_weights(InitScheme::GlorotNormal, 5, 4, 1).unwrap();
        assert_eq!(a, b);
        assert!(init_weights(InitScheme::HeNormal, 0, 4, 1).is_err());
    }

    #[test]
    fn parses_abbreviations() {
        for s in InitScheme::ALL {
            assert_eq!(s.abbreviation().parse::<InitScheme>().unwrap(), s);
        }
        assert!("lecun".parse::<InitScheme>().is_err());
    }
}
