//! Regression of embedding cosine similarity onto ground-truth SSIM.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    build_pair_set, forward_graph, Checkpoint, Dataset, Encoder, EncoderConfig, PairCache,
    TrainConfig, TrainingPair,
};
use crate::image::{apply_augmentation_with, sample_augmentation, AugmentationRanges, Image};
use crate::rng;
use crate::tensor::{AdamWConfig, AdamWState, Tape, Tensor};
use crate::{Error, Result};

/// Everything produced by a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation-MAE parameters and the optimizer state at that epoch.
    pub checkpoint: Checkpoint,
    pub train_pairs: Vec<TrainingPair>,
    pub val_pairs: Vec<TrainingPair>,
    /// Validation MAE of the freshly initialized encoder.
    pub initial_val_mae: f64,
    /// Per-epoch, per-batch training losses.
    pub batch_losses: Vec<Vec<f64>>,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    dot / (na.sqrt() * nb.sqrt()).max(1e-12)
}

/// Mean squared difference between embedding cosine and target, without
/// augmentation. Inputs are standardized internally.
pub fn loss_batch(pairs: &[(Image, Image, f64)], encoder: &Encoder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::validation("loss_batch needs at least one pair"));
    }
    let cfg = encoder.config();
    let a: Vec<Image> = pairs.iter().map(|p| p.0.standardized(cfg.input_size)).collect::<Result<_>>()?;
    let b: Vec<Image> = pairs.iter().map(|p| p.1.standardized(cfg.input_size)).collect::<Result<_>>()?;
    let targets: Vec<f32> = pairs.iter().map(|p| p.2 as f32).collect();
    let (loss, _) = batch_loss(encoder, &a.iter().collect::<Vec<_>>(), &b.iter().collect::<Vec<_>>(), &targets, false)?;
    Ok(loss)
}

/// Loss on one batch; with `with_grad`, also the per-parameter gradients
/// (`None` for frozen parameters).
fn batch_loss(
    encoder: &Encoder,
    a: &[&Image],
    b: &[&Image],
    targets: &[f32],
    with_grad: bool,
) -> Result<(f64, Vec<Option<Vec<f32>>>)> {
    let mut tape = Tape::new();
    let params = encoder.push_params(&mut tape, with_grad);
    let xa = tape.leaf(encoder.batch_tensor(a)?);
    let xb = tape.leaf(encoder.batch_tensor(b)?);
    let va = forward_graph(&mut tape, &params, xa)?;
    let vb = forward_graph(&mut tape, &params, xb)?;
    let cos = tape.cosine_similarity(va, vb)?;
    let target = tape.leaf(Tensor::vector(targets.to_vec()));
    let loss = tape.mse_scalar(cos, target)?;
    let value = tape.value(loss).item().unwrap_or(f32::NAN) as f64;
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, &v)| (!encoder.is_frozen(i)).then(|| tape.grad(v).map(<[f32]>::to_vec)).flatten())
        .collect();
    Ok((value, grads))
}

/// Mean |cosine − s| over `pairs` (indices into `ds`), no augmentation.
pub fn validate_mae(pairs: &[TrainingPair], ds: &Dataset, encoder: &Encoder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::validation("validation needs at least one pair"));
    }
    let needed: Vec<usize> = pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let embs: Vec<(usize, Vec<f32>)> = needed
        .par_iter()
        .map(|&i| Ok((i, encoder.embed(&ds.images[i])?)))
        .collect::<Result<_>>()?;
    let lookup: std::collections::HashMap<usize, &Vec<f32>> = embs.iter().map(|(i, e)| (*i, e)).collect();
    // summed in sorted order so the result does not depend on pair order
    let mut residuals: Vec<f64> = pairs
        .iter()
        .map(|p| (cosine(lookup[&p.a], lookup[&p.b]) - p.ssim).abs())
        .collect();
    residuals.sort_by(f64::total_cmp);
    Ok(residuals.iter().sum::<f64>() / pairs.len() as f64)
}

fn augmented(img: &Image, seed: u64, ranges: &AugmentationRanges) -> Result<Image> {
    let mut r = rng::stream(seed, 0);
    let spec = sample_augmentation(&mut r, ranges);
    apply_augmentation_with(img, &spec, ranges)
}

/// Samples training and validation pair sets, then trains.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    tc: &TrainConfig,
    ec: &EncoderConfig,
    cache: &mut PairCache,
) -> Result<TrainOutcome> {
    tc.validate()?;
    ec.validate()?;
    let t0 = Instant::now();
    let train_pairs = build_pair_set(
        train_set,
        rng::child_seed(tc.seed, 1),
        tc.pairs_per_epoch,
        tc.ssim_stratification_bins,
        tc.candidate_pool_factor,
        cache,
    )?;
    let val_pairs = build_pair_set(
        val_set,
        rng::child_seed(tc.seed, 2),
        tc.val_pairs,
        tc.ssim_stratification_bins,
        tc.candidate_pool_factor,
        cache,
    )?;
    log::info!(
        "pair sets ready: {} train, {} val ({:.1}s)",
        train_pairs.len(),
        val_pairs.len(),
        t0.elapsed().as_secs_f64()
    );
    train_on_pairs(train_set, train_pairs, val_set, val_pairs, tc, ec)
}

/// Trains on precomputed pair sets.
///
/// Each epoch shuffles the training pairs, draws independent augmentations
/// for both sides of every pair, and takes one AdamW step per batch. The
/// returned checkpoint holds the epoch with the lowest validation MAE.
pub fn train_on_pairs(
    train_set: &Dataset,
    train_pairs: Vec<TrainingPair>,
    val_set: &Dataset,
    val_pairs: Vec<TrainingPair>,
    tc: &TrainConfig,
    ec: &EncoderConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::validation("training needs non-empty train and validation pair sets"));
    }
    let std_train: Vec<Image> = train_set
        .images
        .par_iter()
        .map(|img| img.standardized(ec.input_size))
        .collect::<Result<_>>()?;

    let mut encoder = Encoder::new(ec.clone(), rng::child_seed(tc.seed, 3))?;
    let adam_cfg = AdamWConfig {
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..AdamWConfig::default()
    };
    let mut adam = AdamWState::new(adam_cfg, encoder.params());
    let names = encoder.names().to_vec();

    let initial_val_mae = validate_mae(&val_pairs, val_set, &encoder)?;
    log::info!("initial validation MAE {initial_val_mae:.4}");
    let mut best = (f64::INFINITY, encoder.clone(), adam.clone(), 0usize);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut batch_losses = Vec::with_capacity(tc.epochs);

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 1..=tc.epochs {
        let t0 = Instant::now();
        let epoch_seed = rng::child_seed(tc.seed, 1000 + epoch as u64);
        order.shuffle(&mut rng::stream(epoch_seed, 0));
        let mut losses = Vec::with_capacity(order.len().div_ceil(tc.batch_size));
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let views: Vec<(Image, Image)> = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &pi)| {
                    let p = &train_pairs[pi];
                    let s = rng::child_seed(epoch_seed, (bi * tc.batch_size + k) as u64 + 1);
                    Ok((
                        augmented(&std_train[p.a], rng::child_seed(s, 0), &tc.augmentation)?,
                        augmented(&std_train[p.b], rng::child_seed(s, 1), &tc.augmentation)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let a: Vec<&Image> = views.iter().map(|v| &v.0).collect();
            let b: Vec<&Image> = views.iter().map(|v| &v.1).collect();
            let targets: Vec<f32> = chunk.iter().map(|&pi| train_pairs[pi].ssim as f32).collect();

            let (loss, grads) = batch_loss(&encoder, &a, &b, &targets, true)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            adam.step(encoder.params_mut(), &grad_refs, &names).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            losses.push(loss);
        }
        let mae = validate_mae(&val_pairs, val_set, &encoder)?;
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        log::info!(
            "epoch {epoch}/{}: train loss {mean_loss:.5}, val MAE {mae:.4} ({:.1}s)",
            tc.epochs,
            t0.elapsed().as_secs_f64()
        );
        history.push(mae);
        batch_losses.push(losses);
        if mae < best.0 {
            best = (mae, encoder.clone(), adam.clone(), epoch);
        }
    }

    let (_, best_encoder, best_adam, best_epoch) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            encoder: best_encoder,
            optimizer: Some(best_adam),
            epoch: best_epoch,
            val_mae_history: history,
            train_config: Some(tc.clone()),
        },
        train_pairs,
        val_pairs,
        initial_val_mae,
        batch_losses,
    })
}
