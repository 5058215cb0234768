//! The training loop: Adam on the dual encoders, driven by the configured
//! negative-sampling strategy, with reduce-on-plateau learning-rate decay,
//! early stopping, and a feature-collapse monitor.
//!
//! One run is fully determined by its config (including the seed): batch
//! shuffles, negative draws, and parameter initialization all come from
//! fixed derived streams, and every accumulation runs in a fixed order, so
//! repeated runs produce bit-identical histories and parameters.
//!
//! Validation negatives are drawn once from their own stream (keyed by
//! batch index only) and reused every epoch, so the validation loss is
//! comparable across epochs instead of moving with a fresh draw.

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, PairedDataset};
use crate::encoder::{
    backprop_audio, backprop_text, encode_audio, encode_text, init_parameters, Embedding,
    ModelParameters, ParamGrads,
};
use crate::error::{Error, Result};
use crate::loss::{full_batch_loss, triplet_loss, LossConfig, LossResult};
use crate::matrix::Matrix;
use crate::relevance::{
    cross_modality_matrix, score_matrix_backward, within_modality_matrix, Modality, ScoreFn,
};
use crate::rng::{stream, SplitMix64};
use crate::sampling::{select_negatives, NegativeSelection, Strategy};
use crate::scalar::{l2_norm, Scalar};

/// Hyperparameters of one training run. Defaults follow the standard
/// recipe: batch 32, Adam at 1e-3, plateau factor 0.1 with patience 5,
/// early stopping at patience 10, at most 120 epochs, margin 1.0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub score_fn: ScoreFn,
    pub seed: u64,
    pub embed_dim: usize,
    pub relu: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub margin: f64,
    pub collapse_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Random,
            score_fn: ScoreFn::Dot,
            seed: 1,
            embed_dim: 32,
            relu: false,
            batch_size: 32,
            max_epochs: 120,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_factor: 0.1,
            plateau_patience: 5,
            early_stop_patience: 10,
            margin: 1.0,
            collapse_threshold: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim must be at least 2"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive and finite"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau_factor must lie in (0, 1)"));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::config("patience values must be at least 1"));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::config("margin must be non-negative and finite"));
        }
        if !(self.collapse_threshold > 0.0) {
            return Err(Error::config("collapse_threshold must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates for both parameter matrices, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: ParamGrads<S>,
    pub v: ParamGrads<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParameters<S>) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            step: 0,
        }
    }
}

/// One Adam update with bias correction:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParameters<S>,
    grads: &ParamGrads<S>,
    state: &mut AdamState<S>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.token_table.n_rows() != grads.token_table.n_rows()
        || params.token_table.n_cols() != grads.token_table.n_cols()
        || params.audio_proj.n_rows() != grads.audio_proj.n_rows()
        || params.audio_proj.n_cols() != grads.audio_proj.n_cols()
    {
        return Err(Error::shape("gradient shapes do not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = S::from_f64_lossy(lr);
    let b1 = S::from_f64_lossy(beta1);
    let b2 = S::from_f64_lossy(beta2);
    let eps = S::from_f64_lossy(eps);
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let update = |p: &mut Matrix<S>, g: &Matrix<S>, m: &mut Matrix<S>, v: &mut Matrix<S>| {
        let (p, g, m, v) = (
            p.as_mut_slice(),
            g.as_slice(),
            m.as_mut_slice(),
            v.as_mut_slice(),
        );
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (S::one() - b1) * g[i];
            v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    update(
        &mut params.token_table,
        &grads.token_table,
        &mut state.m.token_table,
        &mut state.v.token_table,
    );
    update(
        &mut params.audio_proj,
        &grads.audio_proj,
        &mut state.m.audio_proj,
        &mut state.v.audio_proj,
    );
    Ok(())
}

/// Reduce-on-plateau: multiply the rate by `factor` after `patience`
/// consecutive observations without strict improvement over the best seen.
/// The best value persists across reductions.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one validation loss; returns `true` when this observation
    /// triggered a reduction.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
            return true;
        }
        false
    }
}

/// Early stopping with its own counter, independent of the scheduler:
/// stop after `patience` consecutive observations without strict
/// improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Feeds one validation loss; returns `true` when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        self.stale >= self.patience
    }
}

/// Mean pooled-embedding norms of a batch of encoded items, and whether
/// either modality fell below the collapse threshold (strictly).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub mean_audio_norm: f64,
    pub mean_text_norm: f64,
    pub flagged: bool,
}

/// Checks for feature collapse: embeddings contracting toward the zero
/// vector on either side.
pub fn collapse_check<S: Scalar>(
    audio: &[Embedding<S>],
    text: &[Embedding<S>],
    threshold: f64,
) -> CollapseReport {
    let mean_norm = |embs: &[Embedding<S>]| -> f64 {
        if embs.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for e in embs {
            acc += l2_norm(&e.pooled).as_f64();
        }
        acc / embs.len() as f64
    };
    let mean_audio_norm = mean_norm(audio);
    let mean_text_norm = mean_norm(text);
    CollapseReport {
        mean_audio_norm,
        mean_text_norm,
        flagged: mean_audio_norm < threshold || mean_text_norm < threshold,
    }
}

/// One epoch's log line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Anchor-weighted mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Anchor-weighted mean validation loss under the fixed validation
    /// negatives.
    pub val_loss: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    /// Collapse monitor verdict on this epoch's validation embeddings.
    pub collapse: bool,
}

/// Full record of a run. `best_epoch` is the epoch whose parameters are
/// returned (first strict minimum of the validation loss).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn any_collapse(&self) -> bool {
        self.epochs.iter().any(|e| e.collapse)
    }
}

/// Trained parameters (from the best-validation epoch) plus the history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<S> {
    pub params: ModelParameters<S>,
    pub history: TrainingHistory,
}

/// Positions of each pair's clip and caption inside the dataset arrays.
fn pair_positions<S: Scalar>(ds: &PairedDataset<S>) -> Result<Vec<(usize, usize)>> {
    let clip_pos = ds.clip_positions();
    let cap_pos = ds.caption_positions();
    ds.pairs
        .iter()
        .map(|(clip_id, caption_id)| {
            let c = *clip_pos
                .get(clip_id)
                .ok_or_else(|| Error::config(format!("pair references missing clip {clip_id}")))?;
            let t = *cap_pos.get(caption_id).ok_or_else(|| {
                Error::config(format!("pair references missing caption {caption_id}"))
            })?;
            Ok((c, t))
        })
        .collect()
}

/// Scores one batch and evaluates its loss under the configured strategy.
fn batch_loss<S: Scalar>(
    cfg: &TrainConfig,
    audio: &[Embedding<S>],
    text: &[Embedding<S>],
    select_rng: &SplitMix64,
) -> Result<LossResult<S>> {
    let s = cross_modality_matrix(cfg.score_fn, audio, text)?;
    let loss_cfg = LossConfig::new(S::from_f64_lossy(cfg.margin))?;
    if cfg.strategy == Strategy::FullMiniBatch {
        return full_batch_loss(&s, loss_cfg);
    }
    let w_text = if cfg.strategy.needs_text_matrix() {
        Some(within_modality_matrix(cfg.score_fn, text, Modality::Text)?)
    } else {
        None
    };
    let w_audio = if cfg.strategy.needs_audio_matrix() {
        Some(within_modality_matrix(
            cfg.score_fn,
            audio,
            Modality::Audio,
        )?)
    } else {
        None
    };
    let sel = select_negatives(
        cfg.strategy,
        &s,
        w_text.as_ref(),
        w_audio.as_ref(),
        Some(select_rng),
    )?;
    triplet_loss(&s, &sel, loss_cfg)
}

/// Runs training and returns the best-validation parameters with the full
/// history. Deterministic for a fixed config and datasets.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    dev: &PairedDataset<S>,
    val: &PairedDataset<S>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    dev.validate()?;
    val.validate()?;
    if dev.d_in != val.d_in || dev.vocab_size != val.vocab_size {
        return Err(Error::config(
            "dev and val splits disagree on d_in or vocab_size",
        ));
    }
    if dev.n_pairs() < 2 || val.n_pairs() < 2 {
        return Err(Error::config(
            "training needs at least 2 pairs in both dev and val",
        ));
    }

    let mut params = init_parameters::<S>(cfg.embed_dim, dev.d_in, dev.vocab_size, cfg.seed)?;
    params.relu = cfg.relu;
    let mut adam = AdamState::new(&params);
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);

    let dev_positions = pair_positions(dev)?;
    let val_positions = pair_positions(val)?;
    let root = SplitMix64::new(cfg.seed);

    // Validation batches walk the pairs in order; their random negatives are
    // drawn once, keyed by batch index, and reused every epoch.
    let val_batches: Vec<Vec<usize>> = (0..val.n_pairs())
        .collect::<Vec<_>>()
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect();
    let val_rng = root.derive(stream::VAL_SELECT);
    let val_selections: Vec<NegativeSelection> = val_batches
        .iter()
        .enumerate()
        .map(|(b, batch)| {
            // Only the batch size matters for a random selection; build a
            // placeholder score matrix of the right shape.
            let s = crate::relevance::ScoreMatrix {
                values: Matrix::<S>::zeros(batch.len(), batch.len()),
                collapse_suspect: false,
            };
            select_negatives(
                Strategy::Random,
                &s,
                None,
                None,
                Some(&val_rng.derive(b as u64)),
            )
        })
        .collect::<Result<_>>()?;

    let train_rng = root.derive(stream::TRAIN_SELECT);
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        stopped_epoch: 0,
        best_epoch: None,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();

    for epoch in 1..=cfg.max_epochs {
        let lr_epoch = scheduler.lr();
        let batches = make_batches(dev, cfg.batch_size, cfg.seed, epoch as u64)?;
        let epoch_rng = train_rng.derive(epoch as u64);

        let mut loss_sum = 0.0;
        let mut anchor_count = 0usize;
        for (b_idx, batch) in batches.iter().enumerate() {
            let mut audio = Vec::with_capacity(batch.len());
            let mut text = Vec::with_capacity(batch.len());
            for &p in &batch.pair_indices {
                let (c, t) = dev_positions[p];
                audio.push(encode_audio(&params, &dev.clips[c].frames)?);
                text.push(encode_text(&params, &dev.captions[t].tokens)?);
            }
            let batch_rng = epoch_rng.derive(b_idx as u64);
            let loss = batch_loss(cfg, &audio, &text, &batch_rng)?;
            loss_sum += loss.value.as_f64() * batch.len() as f64;
            anchor_count += batch.len();

            let (grad_audio, grad_text) =
                score_matrix_backward(cfg.score_fn, &audio, &text, &loss.grad_scores)?;
            let mut grads = ParamGrads::zeros_like(&params);
            for (i, &p) in batch.pair_indices.iter().enumerate() {
                let (c, t) = dev_positions[p];
                backprop_audio(&params, &dev.clips[c].frames, &grad_audio[i], &mut grads)?;
                backprop_text(&params, &dev.captions[t].tokens, &grad_text[i], &mut grads)?;
            }
            adam_step(
                &mut params,
                &grads,
                &mut adam,
                lr_epoch,
                cfg.beta1,
                cfg.beta2,
                cfg.eps,
            )?;
        }
        let train_loss = loss_sum / anchor_count.max(1) as f64;

        // Encode the validation split once per epoch; reuse for the loss
        // batches and the collapse monitor.
        let val_audio: Vec<Embedding<S>> = val
            .clips
            .iter()
            .map(|c| encode_audio(&params, &c.frames))
            .collect::<Result<_>>()?;
        let val_text: Vec<Embedding<S>> = val
            .captions
            .iter()
            .map(|c| encode_text(&params, &c.tokens))
            .collect::<Result<_>>()?;
        let mut val_sum = 0.0;
        let mut val_anchors = 0usize;
        for (batch, selection) in val_batches.iter().zip(&val_selections) {
            let mut audio = Vec::with_capacity(batch.len());
            let mut text = Vec::with_capacity(batch.len());
            for &p in batch {
                let (c, t) = val_positions[p];
                audio.push(val_audio[c].clone());
                text.push(val_text[t].clone());
            }
            // Validation always scores the fixed random negatives so epochs
            // stay comparable, whatever the training strategy.
            let s = cross_modality_matrix(cfg.score_fn, &audio, &text)?;
            let loss = triplet_loss(
                &s,
                selection,
                LossConfig::new(S::from_f64_lossy(cfg.margin))?,
            )?;
            val_sum += loss.value.as_f64() * batch.len() as f64;
            val_anchors += batch.len();
        }
        let val_loss = val_sum / val_anchors.max(1) as f64;
        let collapse = collapse_check(&val_audio, &val_text, cfg.collapse_threshold).flagged;

        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_epoch,
            collapse,
        });
        history.stopped_epoch = epoch;

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            history.best_epoch = Some(epoch);
        }

        scheduler.observe(val_loss);
        if stopper.observe(val_loss) {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
    })
}
