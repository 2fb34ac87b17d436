use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::RunRecord;
use super::trace::{layer_labels, should_log, GradientTrace};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::lmm::HsiBundle;
use crate::metrics::{
    match_endmembers, rmse_abundances, rmse_per_endmember, sad_endmembers, sad_loss,
};
use crate::nn::{build_network, Architecture, Mode, Network};
use crate::nn::{AdamConfig, AdamState};

/// Applies the dataset preprocessing selected by the config.
pub fn prepare_data(config: &ExperimentConfig, data: &HsiBundle) -> HsiBundle {
    if config.scaling {
        data.min_max_scaled()
    } else {
        data.clone()
    }
}

/// Endmember count from the config, else from the ground truth.
pub fn endmember_count(config: &ExperimentConfig, data: &HsiBundle) -> Result<usize> {
    config
        .endmembers
        .or_else(|| data.ground_truth().map(|g| g.endmember_count()))
        .ok_or_else(|| Error::Config("endmember count unknown: set `endmembers`".into()))
}

/// Builds and initializes the network for one initialization seed.
pub fn initial_network(
    config: &ExperimentConfig,
    bands: usize,
    endmembers: usize,
    init_seed: u64,
) -> Result<Network> {
    let mut net = build_network(
        config.architecture,
        bands,
        endmembers,
        config.n1(),
        config.gd_rate(),
    )?;
    net.initialize(config.init, init_seed)?;
    Ok(net)
}

/// Hex prefix of the SHA-256 digest over the parameters' little-endian bytes.
pub fn param_checksum(net: &Network) -> String {
    let bytes: Vec<u8> = net
        .params_flat()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    crate::lmm::io::sha256_hex(&bytes)[..16].to_string()
}

/// Mini-batch column index sets for one epoch. With the original
/// architecture a trailing single-pixel batch is merged into the previous
/// one, since batch norm needs at least two samples.
pub fn epoch_batches(order: &[usize], batch_size: usize, arch: Architecture) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if arch == Architecture::Original
        && batches.len() > 1
        && batches.last().is_some_and(|b| b.len() == 1)
    {
        batches.pop();
        let start = (batches.len() - 1) * batch_size;
        *batches.last_mut().expect("non-empty") = &order[start..];
    }
    batches
}

/// Endmember estimate: the decoder weights (`B x E`).
pub fn extract_endmembers(net: &Network) -> Array2<f64> {
    net.decoder().weight.clone()
}

/// Abundance estimate for every pixel (`E x M`), eval mode.
pub fn extract_abundances(net: &Network, pixels: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(net.predict(pixels)?.1)
}

/// Trains one model: weights from `init_seed`, batch order and dropout
/// noise from `run_seed`. `data` should already be prepared with
/// [`prepare_data`]. A diverged run is reported in the record rather than
/// as an error.
pub fn train_once(
    config: &ExperimentConfig,
    data: &HsiBundle,
    init_seed: u64,
    run_seed: u64,
) -> Result<(Network, RunRecord, GradientTrace)> {
    config.validate()?;
    let start = Instant::now();
    let x = data.pixels();
    let e = endmember_count(config, data)?;
    let mut net = initial_network(config, data.bands(), e, init_seed)?;
    let init_checksum = param_checksum(&net);
    let initial_loss = config
        .loss
        .evaluate(x, &net.predict(x)?.0)
        .ok()
        .map(|(l, _)| l);

    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut adam = AdamState::for_network(AdamConfig::new(config.learning_rate), &net)?;
    let labels = layer_labels(&net);
    let mut trace = GradientTrace::default();
    let mut order: Vec<usize> = (0..data.pixel_count()).collect();
    let mut iteration = 0usize;
    let mut diverged = false;

    'epochs: for _ in 0..config.epochs() {
        order.shuffle(&mut rng);
        for batch in epoch_batches(&order, config.batch_size, config.architecture) {
            let xb = x.select(Axis(1), batch);
            let out = net.forward(&xb, Mode::Train, &mut rng)?;
            let step = config
                .loss
                .evaluate(&xb, &out.reconstruction)
                .and_then(|(loss, grad)| {
                    if !loss.is_finite() {
                        return Err(Error::Divergence {
                            iteration,
                            reason: "non-finite loss".into(),
                        });
                    }
                    net.backward(&out.cache, &grad)
                });
            let grads = match step {
                Ok(g) => g,
                Err(Error::Divergence { .. } | Error::DegenerateSpectrum(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(other) => return Err(other),
            };
            if should_log(iteration) {
                trace.record(iteration, &labels, &grads);
            }
            match adam.step_network(&mut net, &grads) {
                Ok(()) => {}
                Err(Error::Divergence { .. }) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
            iteration += 1;
        }
    }

    let mut record = RunRecord {
        experiment_id: config.experiment_id,
        init_id: 0,
        run_id: 0,
        init_seed,
        run_seed,
        init_checksum,
        iterations: iteration,
        initial_loss,
        final_loss: None,
        recon_rmse: None,
        recon_sad: None,
        abundance_rmse: None,
        endmember_sad: None,
        abundance_rmse_per_endmember: None,
        permutation: None,
        diverged,
        trace_file: None,
        wall_time_s: 0.0,
    };
    if !diverged {
        if let Err(err) = evaluate_into(config, data, &net, &mut record) {
            match err {
                Error::DegenerateSpectrum(_) => record.diverged = true,
                other => return Err(other),
            }
        }
        if record.recon_rmse.is_some_and(|v| !v.is_finite()) {
            record.diverged = true;
        }
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok((net, record, trace))
}

/// Full-image evaluation metrics, plus ground-truth errors when available.
fn evaluate_into(
    config: &ExperimentConfig,
    data: &HsiBundle,
    net: &Network,
    rec: &mut RunRecord,
) -> Result<()> {
    let x = data.pixels();
    let (recon, abundances) = net.predict(x)?;
    rec.final_loss = Some(config.loss.evaluate(x, &recon)?.0);
    let n = x.len() as f64;
    rec.recon_rmse = Some(((x - &recon).mapv(|d| d * d).sum() / n).sqrt());
    rec.recon_sad = Some(sad_loss(x, &recon)?.0);
    if let Some(gt) = data.ground_truth() {
        let est = extract_endmembers(net);
        let perm = match_endmembers(&est, gt.endmembers())?;
        rec.abundance_rmse = Some(rmse_abundances(gt.abundances(), &abundances, &perm)?);
        rec.abundance_rmse_per_endmember =
            Some(rmse_per_endmember(gt.abundances(), &abundances, &perm)?);
        rec.endmember_sad = Some(sad_endmembers(gt.endmembers(), &est, &perm)?);
        rec.permutation = Some(perm);
    }
    Ok(())
}
