use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};

/// The gradient of the spectral angle is zeroed where the cosine similarity
/// lies within `COS_CLAMP` of +-1, which bounds the `acos` derivative.
pub const COS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Loss {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "SAD")]
    Sad,
}

impl Loss {
    /// Loss value and gradient with respect to the reconstruction.
    pub fn evaluate(self, x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        match self {
            Loss::Mse => mse_loss(x, x_hat),
            Loss::Sad => sad_loss(x, x_hat),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Mse => "MSE",
            Loss::Sad => "SAD",
        })
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MSE" => Ok(Loss::Mse),
            "SAD" => Ok(Loss::Sad),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

/// Mean squared error over all entries.
pub fn mse_loss(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    ensure_dims(x.dim() == x_hat.dim(), || {
        format!("MSE operands {:?} vs {:?}", x.dim(), x_hat.dim())
    })?;
    let n = x.len() as f64;
    let diff = x_hat - x;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff * (2.0 / n);
    Ok((value, grad))
}

/// Mean spectral angle between corresponding columns.
pub fn sad_loss(x: &Array2<f64>, x_hat: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    ensure_dims(x.dim() == x_hat.dim(), || {
        format!("SAD operands {:?} vs {:?}", x.dim(), x_hat.dim())
    })?;
    let cols = x.ncols() as f64;
    let mut grad = Array2::zeros(x.dim());
    let mut total = 0.0;
    for ((xc, yc), mut gc) in x
        .axis_iter(Axis(1))
        .zip(x_hat.axis_iter(Axis(1)))
        .zip(grad.axis_iter_mut(Axis(1)))
    {
        let nx = xc.dot(&xc).sqrt();
        let ny = yc.dot(&yc).sqrt();
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::DegenerateSpectrum(
                "zero-norm column in SAD loss".into(),
            ));
        }
        // sqrt of the product keeps identical columns at exactly cos = 1
        let cos = xc.dot(&yc) / (xc.dot(&xc) * yc.dot(&yc)).sqrt();
        let lim = 1.0 - COS_CLAMP;
        total += cos.clamp(-1.0, 1.0).acos();
        if cos.abs() < lim {
            // d acos(c)/dc * dc/dy, with dc/dy = x/(|x||y|) - c y/|y|^2
            let scale = -1.0 / (1.0 - cos * cos).sqrt() / cols;
            Zip::from(&mut gc).and(&xc).and(&yc).for_each(|g, &a, &b| {
                *g = scale * (a / (nx * ny) - cos * b / (ny * ny));
            });
        }
    }
    Ok((total / cols, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.1..1.0))
    }

    fn fd_check(f: impl Fn(&Array2<f64>) -> f64, y: &Array2<f64>, grad: &Array2<f64>, tol: f64) {
        let h = 1e-6;
        for idx in 0..y.len() {
            let (r, c) = (idx / y.ncols(), idx % y.ncols());
            let mut plus = y.clone();
            plus[[r, c]] += h;
            let mut minus = y.clone();
            minus[[r, c]] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let analytic = grad[[r, c]];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12);
            assert!(rel < tol, "entry ({r},{c}): {analytic} vs {numeric}");
        }
    }

    #[test]
    fn mse_values() {
        let x = random(5, 3, 1);
        assert_eq!(mse_loss(&x, &x).unwrap().0, 0.0);
        let z = Array2::zeros((4, 2));
        let o = Array2::ones((4, 2));
        assert_eq!(mse_loss(&z, &o).unwrap().0, 1.0);
        assert!(mse_loss(&z, &random(3, 2, 0)).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let x = random(5, 3, 2);
        let y = random(5, 3, 3);
        let (_, g) = mse_loss(&x, &y).unwrap();
        fd_check(|y| mse_loss(&x, y).unwrap().0, &y, &g, 1e-8);
    }

    #[test]
    fn sad_values() {
        let x = array![[1.0], [0.0]];
        let y = array![[0.0], [1.0]];
        assert!((sad_loss(&x, &y).unwrap().0 - FRAC_PI_2).abs() < 1e-12);
        let x = array![[1.0], [1.0]];
        let y = array![[2.0], [2.0]];
        assert_eq!(sad_loss(&x, &y).unwrap().0, 0.0);
        let x = random(6, 4, 5);
        let (v, g) = sad_loss(&x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(
            g.iter().all(|&v| v == 0.0),
            "clamped region has zero gradient"
        );
    }

    #[test]
    fn sad_zero_column_rejected() {
        let x = array![[1.0, 0.0], [1.0, 0.0]];
        let y = array![[1.0, 1.0], [0.5, 1.0]];
        assert!(matches!(
            sad_loss(&x, &y),
            Err(Error::DegenerateSpectrum(_))
        ));
        assert!(matches!(
            sad_loss(&y, &x),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn sad_gradient_matches_finite_differences() {
        let x = random(6, 4, 7);
        let y = random(6, 4, 8);
        let (_, g) = sad_loss(&x, &y).unwrap();
        fd_check(|y| sad_loss(&x, y).unwrap().0, &y, &g, 1e-6);
    }

    #[test]
    fn sad_is_scale_invariant() {
        let x = random(6, 4, 9);
        let y = random(6, 4, 10);
        let a = sad_loss(&x, &y).unwrap().0;
        let b = sad_loss(&x, &(&y * 3.7)).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }
}
