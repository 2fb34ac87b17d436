//! Individual layer kinds with their forward and backward rules. All
//! activations are `features x batch` matrices.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Column sums at or below this value map to the uniform abundance vector.
pub const SUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Sigmoid,
    Relu,
    BatchNorm {
        features: usize,
    },
    SoftThreshold {
        features: usize,
    },
    SumToOne,
    GaussianDropout {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `outputs x inputs`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: bias.then(|| Array1::zeros(outputs)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = self.weight.dot(x);
        if let Some(b) = &self.bias {
            y += &b.view().insert_axis(Axis(1));
        }
        y
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Option<Array1<f64>>) {
        let dw = dy.dot(&x.t());
        let db = self.bias.as_ref().map(|_| dy.sum_axis(Axis(1)));
        let dx = self.weight.t().dot(dy);
        (dx, dw, db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftThreshold {
    pub alpha: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Sigmoid,
    Relu,
    BatchNorm(BatchNorm),
    SoftThreshold(SoftThreshold),
    SumToOne,
    GaussianDropout { rate: f64 },
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Linear {
                inputs,
                outputs,
                bias,
            } => Layer::Linear(Linear::zeros(inputs, outputs, bias)),
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::BatchNorm { features } => Layer::BatchNorm(BatchNorm::new(features)),
            LayerSpec::SoftThreshold { features } => Layer::SoftThreshold(SoftThreshold {
                alpha: Array1::zeros(features),
            }),
            LayerSpec::SumToOne => Layer::SumToOne,
            LayerSpec::GaussianDropout { rate } => Layer::GaussianDropout { rate },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Linear(l) => LayerSpec::Linear {
                inputs: l.weight.ncols(),
                outputs: l.weight.nrows(),
                bias: l.bias.is_some(),
            },
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Relu => LayerSpec::Relu,
            Layer::BatchNorm(bn) => LayerSpec::BatchNorm {
                features: bn.gamma.len(),
            },
            Layer::SoftThreshold(st) => LayerSpec::SoftThreshold {
                features: st.alpha.len(),
            },
            Layer::SumToOne => LayerSpec::SumToOne,
            Layer::GaussianDropout { rate } => LayerSpec::GaussianDropout { rate: *rate },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Sigmoid => "sigmoid",
            Layer::Relu => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::SoftThreshold(_) => "threshold",
            Layer::SumToOne => "sum_to_one",
            Layer::GaussianDropout { .. } => "dropout",
        }
    }
}

/// Per-layer values saved by the forward pass for backward.
#[derive(Debug, Clone)]
pub(crate) enum Aux {
    None,
    BatchNorm {
        x_hat: Array2<f64>,
        inv_std: Array1<f64>,
        /// Unbiased batch variance, for the running estimate.
        mean: Array1<f64>,
        var_unbiased: Array1<f64>,
    },
    SumToOne {
        /// Column sums; `None` where the uniform fallback fired.
        sums: Vec<Option<f64>>,
    },
    Dropout {
        noise: Option<Array2<f64>>,
    },
}

pub(crate) fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub(crate) fn batch_norm_train(bn: &BatchNorm, x: &Array2<f64>) -> (Array2<f64>, Aux) {
    let n = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty batch");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let x_hat = &centered * &inv_std.view().insert_axis(Axis(1));
    let y = &x_hat * &bn.gamma.view().insert_axis(Axis(1)) + bn.beta.view().insert_axis(Axis(1));
    let var_unbiased = &var * (n / (n - 1.0));
    (
        y,
        Aux::BatchNorm {
            x_hat,
            inv_std,
            mean,
            var_unbiased,
        },
    )
}

pub(crate) fn batch_norm_eval(bn: &BatchNorm, x: &Array2<f64>) -> Array2<f64> {
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let scale = &bn.gamma * &inv_std;
    let shift = &bn.beta - &(&bn.running_mean * &scale);
    x * &scale.view().insert_axis(Axis(1)) + shift.view().insert_axis(Axis(1))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward(
    bn: &BatchNorm,
    x_hat: &Array2<f64>,
    inv_std: &Array1<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.ncols() as f64;
    let dbeta = dy.sum_axis(Axis(1));
    let dgamma = (dy * x_hat).sum_axis(Axis(1));
    let dx_hat = dy * &bn.gamma.view().insert_axis(Axis(1));
    let sum_dxh = dx_hat.sum_axis(Axis(1));
    let sum_dxh_xh = (&dx_hat * x_hat).sum_axis(Axis(1));
    let mut dx = Array2::zeros(dy.dim());
    Zip::indexed(&mut dx).for_each(|(f, c), d| {
        *d = inv_std[f] / n * (n * dx_hat[[f, c]] - sum_dxh[f] - x_hat[[f, c]] * sum_dxh_xh[f]);
    });
    (dx, dgamma, dbeta)
}

pub(crate) fn soft_threshold(st: &SoftThreshold, x: &Array2<f64>) -> Array2<f64> {
    let mut y = x - &st.alpha.view().insert_axis(Axis(1));
    y.mapv_inplace(|v| v.max(0.0));
    y
}

/// Returns `(dx, dalpha)`. The subgradient at the kink is 0.
pub(crate) fn soft_threshold_backward(
    st: &SoftThreshold,
    x: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let mut dx = Array2::zeros(dy.dim());
    let mut dalpha = Array1::zeros(st.alpha.len());
    Zip::indexed(&mut dx).for_each(|(f, c), d| {
        if x[[f, c]] - st.alpha[f] > 0.0 {
            *d = dy[[f, c]];
            dalpha[f] -= dy[[f, c]];
        }
    });
    (dx, dalpha)
}

pub(crate) fn sum_to_one(x: &Array2<f64>) -> (Array2<f64>, Aux) {
    let e = x.nrows() as f64;
    let mut y = x.clone();
    let mut sums = Vec::with_capacity(x.ncols());
    for mut col in y.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        if s > SUM_FLOOR {
            col.mapv_inplace(|v| v / s);
            sums.push(Some(s));
        } else {
            col.fill(1.0 / e);
            sums.push(None);
        }
    }
    (y, Aux::SumToOne { sums })
}

pub(crate) fn sum_to_one_backward(
    y: &Array2<f64>,
    sums: &[Option<f64>],
    dy: &Array2<f64>,
) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.dim());
    for (c, s) in sums.iter().enumerate() {
        let Some(s) = s else { continue };
        let dot = dy.column(c).dot(&y.column(c));
        Zip::from(dx.column_mut(c))
            .and(dy.column(c))
            .for_each(|d, &g| *d = (g - dot) / s);
    }
    dx
}

pub(crate) fn gaussian_dropout<R: RngCore + ?Sized>(
    rate: f64,
    x: &Array2<f64>,
    rng: Option<&mut R>,
) -> (Array2<f64>, Aux) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let std = (rate / (1.0 - rate)).sqrt();
            let normal = Normal::new(1.0, std).expect("rate in [0, 1)");
            let noise = Array2::from_shape_simple_fn(x.dim(), || normal.sample(rng));
            (x * &noise, Aux::Dropout { noise: Some(noise) })
        }
        _ => (x.clone(), Aux::Dropout { noise: None }),
    }
}
