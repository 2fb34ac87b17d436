//! Linear mixing model: `X = W A + N`.
//!
//! Pixels are stored band-major as a `B x M` matrix; endmembers are the
//! columns of a `B x E` matrix and abundances the columns of an `E x M`
//! matrix.

pub(crate) mod io;
mod synth;

pub use io::{load_bundle, read_pixel_csv, save_bundle, BundleHeader, FORMAT_VERSION};
pub use synth::{generate_endmembers, sample_abundances, synthesize};

use ndarray::{Array2, Axis};

use crate::error::{ensure_dims, Error, Result};

/// Tolerance on abundance column sums accepted by [`GroundTruth::new`].
pub const SUM_TO_ONE_TOL: f64 = 1e-6;

/// Ground-truth endmembers (`B x E`) and abundances (`E x M`).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    endmembers: Array2<f64>,
    abundances: Array2<f64>,
}

impl GroundTruth {
    pub fn new(endmembers: Array2<f64>, abundances: Array2<f64>) -> Result<Self> {
        let e = endmembers.ncols();
        ensure_dims(abundances.nrows() == e, || {
            format!(
                "endmembers have {} columns but abundances have {} rows",
                e,
                abundances.nrows()
            )
        })?;
        if e < 2 {
            return Err(Error::InvalidInput(format!(
                "at least 2 endmembers required, got {e}"
            )));
        }
        if endmembers
            .iter()
            .chain(abundances.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite ground truth entry".into()));
        }
        check_simplex_columns(&abundances, SUM_TO_ONE_TOL)?;
        Ok(Self {
            endmembers,
            abundances,
        })
    }

    pub fn endmembers(&self) -> &Array2<f64> {
        &self.endmembers
    }

    pub fn abundances(&self) -> &Array2<f64> {
        &self.abundances
    }

    pub fn endmember_count(&self) -> usize {
        self.endmembers.ncols()
    }
}

/// Checks nonnegativity and sum-to-one of every column.
pub fn check_simplex_columns(a: &Array2<f64>, tol: f64) -> Result<()> {
    for (m, col) in a.axis_iter(Axis(1)).enumerate() {
        if col.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "abundance column {m} has a negative entry"
            )));
        }
        let s: f64 = col.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "abundance column {m} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Additive noise model. Entries of `N` are i.i.d. `N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn none() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// A hyperspectral image with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiBundle {
    pixels: Array2<f64>,
    width: Option<usize>,
    height: Option<usize>,
    ground_truth: Option<GroundTruth>,
    name: String,
}

impl HsiBundle {
    pub fn new(pixels: Array2<f64>, name: impl Into<String>) -> Result<Self> {
        let (b, m) = pixels.dim();
        if b == 0 || m == 0 {
            return Err(Error::InvalidInput(format!(
                "bundle needs at least one band and one pixel, got {b}x{m}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pixel value".into()));
        }
        Ok(Self {
            pixels,
            width: None,
            height: None,
            ground_truth: None,
            name: name.into(),
        })
    }

    pub fn with_spatial(mut self, width: usize, height: usize) -> Result<Self> {
        ensure_dims(width * height == self.pixel_count(), || {
            format!(
                "spatial dims {width}x{height} do not match {} pixels",
                self.pixel_count()
            )
        })?;
        self.width = Some(width);
        self.height = Some(height);
        Ok(self)
    }

    pub fn with_ground_truth(mut self, gt: GroundTruth) -> Result<Self> {
        ensure_dims(gt.endmembers.nrows() == self.bands(), || {
            format!(
                "ground truth has {} bands, image has {}",
                gt.endmembers.nrows(),
                self.bands()
            )
        })?;
        ensure_dims(gt.abundances.ncols() == self.pixel_count(), || {
            format!(
                "ground truth has {} pixels, image has {}",
                gt.abundances.ncols(),
                self.pixel_count()
            )
        })?;
        self.ground_truth = Some(gt);
        Ok(self)
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn bands(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn height(&self) -> Option<usize> {
        self.height
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    /// Rounds every stored value to 32-bit precision, which is what the
    /// on-disk payload holds.
    pub fn to_f32_precision(&self) -> Self {
        let q = |a: &Array2<f64>| a.mapv(|v| v as f32 as f64);
        Self {
            pixels: q(&self.pixels),
            width: self.width,
            height: self.height,
            ground_truth: self.ground_truth.as_ref().map(|gt| GroundTruth {
                endmembers: q(&gt.endmembers),
                abundances: q(&gt.abundances),
            }),
            name: self.name.clone(),
        }
    }

    /// Global min-max scaling of the pixels into `[0, 1]`.
    ///
    /// Abundance columns sum to one, so the affine map carries over to the
    /// endmembers and the scaled bundle still obeys the mixing model.
    pub fn min_max_scaled(&self) -> Self {
        let lo = self.pixels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let f = |v: f64| (v - lo) / span;
        Self {
            pixels: self.pixels.mapv(f),
            width: self.width,
            height: self.height,
            ground_truth: self.ground_truth.as_ref().map(|gt| GroundTruth {
                endmembers: gt.endmembers.mapv(f),
                abundances: gt.abundances.clone(),
            }),
            name: self.name.clone(),
        }
    }
}
