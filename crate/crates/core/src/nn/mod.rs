//! Dense autoencoder for unmixing: an encoder mapping `B`-band spectra to
//! `E` abundances and a single bias-free linear decoder whose weight columns
//! are the endmembers.

mod adam;
mod checkpoint;
mod init;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use init::{init_weights, InitScheme};
pub use layers::{
    BatchNorm, Layer, LayerSpec, Linear, SoftThreshold, BN_EPS, BN_MOMENTUM, SUM_FLOOR,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use layers::Aux;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Four sigmoid linear layers (9E, 6E, 3E, E), batch norm, soft
    /// thresholding, sum-to-one and Gaussian dropout.
    Original,
    /// Two ReLU linear layers (n1*E, E) and sum-to-one.
    Basic,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Original => "original",
            Architecture::Basic => "basic",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Architecture::Original),
            "basic" => Ok(Architecture::Basic),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Identifies which part of the network a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerRef {
    Encoder(usize),
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradTensor {
    pub layer: LayerRef,
    pub name: &'static str,
    pub values: Vec<f64>,
}

/// Gradients for every trainable tensor, in [`Network::param_slices_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<GradTensor>,
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }
}

/// Saved intermediates of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    widths: Vec<usize>,
    mode: Mode,
    /// `acts[l]` is the input of encoder layer `l`; the last entry feeds the decoder.
    acts: Vec<Array2<f64>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub reconstruction: Array2<f64>,
    pub abundances: Array2<f64>,
    pub cache: ForwardCache,
}

/// Layer inputs, per-layer auxiliaries, reconstruction and the index of the
/// abundance activation in the first vector.
type RunOutput = (Vec<Array2<f64>>, Vec<Aux>, Array2<f64>, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    encoder: Vec<Layer>,
    decoder: Linear,
    bands: usize,
    latent: usize,
    /// Bumped on every parameter mutation so stale caches are detected.
    version: u64,
}

/// Builds one of the two reference architectures with zero weights,
/// `alpha = 0`, `gamma = 1` and `beta = 0`. Call [`Network::initialize`]
/// before training.
pub fn build_network(
    arch: Architecture,
    bands: usize,
    endmembers: usize,
    n1: usize,
    gd_rate: f64,
) -> Result<Network> {
    if endmembers < 2 || bands <= endmembers {
        return Err(Error::InvalidInput(format!(
            "need B > E >= 2, got B={bands}, E={endmembers}"
        )));
    }
    let e = endmembers;
    let lin = |inputs, outputs| LayerSpec::Linear {
        inputs,
        outputs,
        bias: true,
    };
    let specs = match arch {
        Architecture::Original => vec![
            lin(bands, 9 * e),
            LayerSpec::Sigmoid,
            lin(9 * e, 6 * e),
            LayerSpec::Sigmoid,
            lin(6 * e, 3 * e),
            LayerSpec::Sigmoid,
            lin(3 * e, e),
            LayerSpec::Sigmoid,
            LayerSpec::BatchNorm { features: e },
            LayerSpec::SoftThreshold { features: e },
            LayerSpec::SumToOne,
            LayerSpec::GaussianDropout { rate: gd_rate },
        ],
        Architecture::Basic => {
            if n1 < 1 {
                return Err(Error::InvalidInput("n1 must be >= 1".into()));
            }
            vec![
                lin(bands, n1 * e),
                LayerSpec::Relu,
                lin(n1 * e, e),
                LayerSpec::Relu,
                LayerSpec::SumToOne,
            ]
        }
    };
    Network::from_specs(&specs, bands)
}

impl Network {
    /// Builds a network from an explicit encoder layer list. The decoder is
    /// always a bias-free `Linear(E, B)`.
    pub fn from_specs(specs: &[LayerSpec], bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidInput("bands must be >= 1".into()));
        }
        let mut width = bands;
        let mut sum_to_one_at = None;
        for (i, spec) in specs.iter().enumerate() {
            let bad = |msg: String| Err(Error::InvalidInput(format!("layer {i}: {msg}")));
            match *spec {
                LayerSpec::Linear {
                    inputs, outputs, ..
                } => {
                    if inputs == 0 || outputs == 0 {
                        return bad("linear widths must be >= 1".into());
                    }
                    if inputs != width {
                        return bad(format!("expects {inputs} inputs, previous width {width}"));
                    }
                    width = outputs;
                }
                LayerSpec::BatchNorm { features } | LayerSpec::SoftThreshold { features } => {
                    if features != width {
                        return bad(format!("{features} features, previous width {width}"));
                    }
                }
                LayerSpec::GaussianDropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return bad(format!("dropout rate {rate} outside [0, 1)"));
                    }
                }
                LayerSpec::SumToOne => {
                    if sum_to_one_at.is_some() {
                        return bad("sum-to-one may appear only once".into());
                    }
                    let nonneg = matches!(
                        i.checked_sub(1).map(|p| &specs[p]),
                        Some(
                            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::SoftThreshold { .. }
                        )
                    );
                    if !nonneg {
                        return bad("sum-to-one must follow a nonnegative activation".into());
                    }
                    sum_to_one_at = Some(i);
                }
                LayerSpec::Sigmoid | LayerSpec::Relu => {}
            }
        }
        if let Some(at) = sum_to_one_at {
            if specs[at + 1..]
                .iter()
                .any(|s| !matches!(s, LayerSpec::GaussianDropout { .. }))
            {
                return Err(Error::InvalidInput(
                    "sum-to-one must close the encoder (only dropout may follow)".into(),
                ));
            }
        }
        Ok(Self {
            encoder: specs.iter().map(Layer::from_spec).collect(),
            decoder: Linear::zeros(width, bands, false),
            bands,
            latent: width,
            version: 0,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn encoder(&self) -> &[Layer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &Linear {
        &self.decoder
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.encoder.iter().map(Layer::spec).collect()
    }

    /// Widths of the encoder linear layers, starting with the input width.
    pub fn linear_widths(&self) -> Vec<usize> {
        let mut w = vec![self.bands];
        for layer in &self.encoder {
            if let Layer::Linear(l) = layer {
                w.push(l.weight.nrows());
            }
        }
        w
    }

    /// Draws every linear layer (encoder in order, then decoder) from one
    /// stream seeded by `seed`.
    pub fn initialize(&mut self, scheme: InitScheme, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.encoder {
            if let Layer::Linear(l) = layer {
                let (w, b) =
                    init::init_weights_with(scheme, l.weight.ncols(), l.weight.nrows(), &mut rng)?;
                l.weight = w;
                if let Some(bias) = &mut l.bias {
                    *bias = b;
                }
            }
        }
        let (w, _) = init::init_weights_with(scheme, self.latent, self.bands, &mut rng)?;
        self.decoder.weight = w;
        self.version += 1;
        Ok(())
    }

    /// Mutable access to encoder layers; invalidates outstanding caches.
    pub fn encoder_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.encoder
    }

    /// Replaces the decoder weights (`B x E`), i.e. the endmember estimate.
    pub fn set_decoder_weights(&mut self, w: Array2<f64>) -> Result<()> {
        ensure_dims(w.dim() == self.decoder.weight.dim(), || {
            format!(
                "decoder is {:?}, got {:?}",
                self.decoder.weight.dim(),
                w.dim()
            )
        })?;
        self.decoder.weight = w;
        self.version += 1;
        Ok(())
    }

    /// Trainable tensors as flat slices: per encoder layer (weight, bias,
    /// gamma, beta, alpha as present), then the decoder weight.
    pub fn param_slices_mut(&mut self) -> Vec<(LayerRef, &'static str, &mut [f64])> {
        self.version += 1;
        let mut out: Vec<(LayerRef, &'static str, &mut [f64])> = Vec::new();
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let r = LayerRef::Encoder(i);
            match layer {
                Layer::Linear(l) => {
                    out.push((
                        r,
                        "weight",
                        l.weight.as_slice_mut().expect("standard layout"),
                    ));
                    if let Some(b) = &mut l.bias {
                        out.push((r, "bias", b.as_slice_mut().expect("contiguous")));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((r, "gamma", bn.gamma.as_slice_mut().expect("contiguous")));
                    out.push((r, "beta", bn.beta.as_slice_mut().expect("contiguous")));
                }
                Layer::SoftThreshold(st) => {
                    out.push((r, "alpha", st.alpha.as_slice_mut().expect("contiguous")));
                }
                _ => {}
            }
        }
        out.push((
            LayerRef::Decoder,
            "weight",
            self.decoder.weight.as_slice_mut().expect("standard layout"),
        ));
        out
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut clone = self.clone();
        clone
            .param_slices_mut()
            .into_iter()
            .flat_map(|(_, _, s)| s.to_vec())
            .collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.param_count();
        ensure_dims(values.len() == total, || {
            format!("{} parameter values for {total} parameters", values.len())
        })?;
        let mut offset = 0;
        for (_, _, s) in self.param_slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.decoder.weight.len();
        for layer in &self.encoder {
            n += match layer {
                Layer::Linear(l) => l.weight.len() + l.bias.as_ref().map_or(0, Array1::len),
                Layer::BatchNorm(bn) => 2 * bn.gamma.len(),
                Layer::SoftThreshold(st) => st.alpha.len(),
                _ => 0,
            };
        }
        n
    }

    /// Batch-norm running statistics, flattened (mean then var per layer).
    pub(crate) fn running_stats_flat(&self) -> Vec<f64> {
        self.encoder
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(
                    bn.running_mean
                        .iter()
                        .chain(bn.running_var.iter())
                        .copied()
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub(crate) fn set_running_stats_flat(&mut self, values: &[f64]) -> Result<()> {
        let mut offset = 0;
        for layer in &mut self.encoder {
            if let Layer::BatchNorm(bn) = layer {
                let f = bn.gamma.len();
                if values.len() < offset + 2 * f {
                    return Err(Error::Format("running statistics truncated".into()));
                }
                bn.running_mean
                    .assign(&Array1::from(values[offset..offset + f].to_vec()));
                bn.running_var
                    .assign(&Array1::from(values[offset + f..offset + 2 * f].to_vec()));
                offset += 2 * f;
            }
        }
        ensure_dims(offset == values.len(), || {
            format!("{} running statistics for {offset} slots", values.len())
        })
    }

    fn widths(&self) -> Vec<usize> {
        self.linear_widths()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        ensure_dims(x.nrows() == self.bands, || {
            format!(
                "input has {} bands, network expects {}",
                x.nrows(),
                self.bands
            )
        })?;
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        Ok(())
    }

    /// Shared forward path. In train mode batch norm uses batch statistics
    /// and dropout draws from `rng`.
    fn run(
        &self,
        x: &Array2<f64>,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<RunOutput> {
        self.check_input(x)?;
        if mode == Mode::Train
            && x.ncols() < 2
            && self
                .encoder
                .iter()
                .any(|l| matches!(l, Layer::BatchNorm(_)))
        {
            return Err(Error::InvalidInput(
                "train-mode batch norm needs a batch of at least 2".into(),
            ));
        }
        let mut acts = Vec::with_capacity(self.encoder.len() + 1);
        let mut aux = Vec::with_capacity(self.encoder.len());
        acts.push(x.clone());
        let mut abundance_idx = self.encoder.len();
        for (i, layer) in self.encoder.iter().enumerate() {
            let input = acts.last().expect("non-empty");
            let (y, a) = match layer {
                Layer::Linear(l) => (l.forward(input), Aux::None),
                Layer::Sigmoid => (layers::sigmoid(input), Aux::None),
                Layer::Relu => (layers::relu(input), Aux::None),
                Layer::BatchNorm(bn) => match mode {
                    Mode::Train => layers::batch_norm_train(bn, input),
                    Mode::Eval => (layers::batch_norm_eval(bn, input), Aux::None),
                },
                Layer::SoftThreshold(st) => (layers::soft_threshold(st, input), Aux::None),
                Layer::SumToOne => {
                    abundance_idx = i + 1;
                    layers::sum_to_one(input)
                }
                Layer::GaussianDropout { rate } => {
                    let r = if mode == Mode::Train {
                        rng.as_deref_mut()
                    } else {
                        None
                    };
                    layers::gaussian_dropout(*rate, input, r)
                }
            };
            acts.push(y);
            aux.push(a);
        }
        let recon = self.decoder.forward(acts.last().expect("non-empty"));
        Ok((acts, aux, recon, abundance_idx))
    }

    /// Full forward pass. Train mode updates batch-norm running statistics
    /// (momentum 0.1) and returns a cache for [`Network::backward`].
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput> {
        let (acts, aux, reconstruction, ab_idx) = self.run(x, mode, Some(rng))?;
        if mode == Mode::Train {
            for (layer, a) in self.encoder.iter_mut().zip(&aux) {
                if let (
                    Layer::BatchNorm(bn),
                    Aux::BatchNorm {
                        mean, var_unbiased, ..
                    },
                ) = (layer, a)
                {
                    bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                    bn.running_var =
                        &bn.running_var * (1.0 - BN_MOMENTUM) + var_unbiased * BN_MOMENTUM;
                }
            }
        }
        let abundances = acts[ab_idx].clone();
        Ok(ForwardOutput {
            reconstruction,
            abundances,
            cache: ForwardCache {
                version: self.version,
                widths: self.widths(),
                mode,
                acts,
                aux,
            },
        })
    }

    /// Eval-mode forward without side effects: `(reconstruction, abundances)`.
    pub fn predict(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (mut acts, _, recon, ab_idx) = self.run(x, Mode::Eval, None)?;
        Ok((recon, acts.swap_remove(ab_idx)))
    }

    /// Gradients of the loss with respect to every trainable parameter, given
    /// the loss gradient with respect to the reconstruction.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Array2<f64>) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::StaleCache(
                "cache comes from an eval-mode pass".into(),
            ));
        }
        if cache.version != self.version || cache.widths != self.widths() {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        let batch = cache.acts[0].ncols();
        ensure_dims(loss_grad.dim() == (self.bands, batch), || {
            format!(
                "loss gradient is {:?}, reconstruction is {:?}",
                loss_grad.dim(),
                (self.bands, batch)
            )
        })?;

        let latent = cache.acts.last().expect("non-empty");
        let (mut delta, dw_dec, _) = self.decoder.backward(latent, loss_grad);
        let mut per_layer: Vec<Vec<GradTensor>> = vec![Vec::new(); self.encoder.len()];

        for (i, layer) in self.encoder.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            let r = LayerRef::Encoder(i);
            delta = match (layer, &cache.aux[i]) {
                (Layer::Linear(l), _) => {
                    let (dx, dw, db) = l.backward(input, &delta);
                    per_layer[i].push(tensor(r, "weight", dw));
                    if let Some(db) = db {
                        per_layer[i].push(tensor1(r, "bias", db));
                    }
                    dx
                }
                (Layer::Sigmoid, _) => &delta * &output.mapv(|y| y * (1.0 - y)),
                (Layer::Relu, _) => {
                    let mut d = delta;
                    ndarray::Zip::from(&mut d).and(input).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    d
                }
                (Layer::BatchNorm(bn), Aux::BatchNorm { x_hat, inv_std, .. }) => {
                    let (dx, dgamma, dbeta) =
                        layers::batch_norm_backward(bn, x_hat, inv_std, &delta);
                    per_layer[i].push(tensor1(r, "gamma", dgamma));
                    per_layer[i].push(tensor1(r, "beta", dbeta));
                    dx
                }
                (Layer::SoftThreshold(st), _) => {
                    let (dx, dalpha) = layers::soft_threshold_backward(st, input, &delta);
                    per_layer[i].push(tensor1(r, "alpha", dalpha));
                    dx
                }
                (Layer::SumToOne, Aux::SumToOne { sums }) => {
                    layers::sum_to_one_backward(output, sums, &delta)
                }
                (Layer::GaussianDropout { .. }, Aux::Dropout { noise }) => match noise {
                    Some(n) => &delta * n,
                    None => delta,
                },
                _ => return Err(Error::StaleCache(format!("cache mismatch at layer {i}"))),
            };
        }

        let mut tensors: Vec<GradTensor> = per_layer.into_iter().flatten().collect();
        tensors.push(tensor(LayerRef::Decoder, "weight", dw_dec));
        Ok(Gradients { tensors })
    }
}

fn tensor(layer: LayerRef, name: &'static str, a: Array2<f64>) -> GradTensor {
    let values = if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    };
    GradTensor {
        layer,
        name,
        values,
    }
}

fn tensor1(layer: LayerRef, name: &'static str, a: Array1<f64>) -> GradTensor {
    GradTensor {
        layer,
        name,
        values: a.to_vec(),
    }
}
