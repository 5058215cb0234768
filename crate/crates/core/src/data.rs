//! Paired audio-text datasets: domain types, the synthetic generator, clip-level
//! splitting, and epoch batching.
//!
//! A dataset pairs audio clips (frame-feature matrices) with captions (token-id
//! sequences). The synthetic generator mirrors the shape of a captioning corpus:
//! a configurable number of clips, five captions per clip by default, and a
//! latent-topic structure that makes the pairing learnable at desk scale.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::quantize_sig9;
use crate::matrix::Matrix;
use crate::rng::{stream, SplitMix64};
use crate::scalar::Scalar;

/// Which split a dataset belongs to. `Full` marks an unsplit dataset as it
/// comes out of the generator or a feature file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Dev,
    Val,
    Eval,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitTag::Full => "full",
            SplitTag::Dev => "dev",
            SplitTag::Val => "val",
            SplitTag::Eval => "eval",
        };
        f.write_str(s)
    }
}

/// An audio clip as a T × D_in matrix of frame features, T ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip<S> {
    pub clip_id: u64,
    pub frames: Matrix<S>,
}

/// A caption: token ids from a fixed vocabulary, owned by one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub caption_id: u64,
    pub clip_id: u64,
    pub tokens: Vec<u32>,
}

/// Clips, captions and the positive pairing between them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset<S> {
    pub clips: Vec<Clip<S>>,
    pub captions: Vec<Caption>,
    /// (clip_id, caption_id); each caption appears in exactly one pair.
    pub pairs: Vec<(u64, u64)>,
    pub split_tag: SplitTag,
    pub d_in: usize,
    pub vocab_size: usize,
}

impl<S: Scalar> PairedDataset<S> {
    pub fn n_clips(&self) -> usize {
        self.clips.len()
    }

    pub fn n_captions(&self) -> usize {
        self.captions.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// clip_id → position in `clips`.
    pub fn clip_positions(&self) -> HashMap<u64, usize> {
        self.clips
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clip_id, i))
            .collect()
    }

    /// caption_id → position in `captions`.
    pub fn caption_positions(&self) -> HashMap<u64, usize> {
        self.captions
            .iter()
            .enumerate()
            .map(|(i, c)| (c.caption_id, i))
            .collect()
    }

    /// Checks referential integrity and shape invariants.
    pub fn validate(&self) -> Result<()> {
        let clip_pos = self.clip_positions();
        let cap_pos = self.caption_positions();
        for clip in &self.clips {
            if clip.frames.n_rows() == 0 {
                return Err(Error::shape(format!("clip {} has no frames", clip.clip_id)));
            }
            if clip.frames.n_cols() != self.d_in {
                return Err(Error::shape(format!(
                    "clip {} frame dimension {} != d_in {}",
                    clip.clip_id,
                    clip.frames.n_cols(),
                    self.d_in
                )));
            }
        }
        for cap in &self.captions {
            if cap.tokens.is_empty() {
                return Err(Error::shape(format!("caption {} is empty", cap.caption_id)));
            }
            if let Some(&t) = cap.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
                return Err(Error::Index(format!(
                    "caption {} token {} outside vocabulary of size {}",
                    cap.caption_id, t, self.vocab_size
                )));
            }
            if !clip_pos.contains_key(&cap.clip_id) {
                return Err(Error::config(format!(
                    "caption {} references missing clip {}",
                    cap.caption_id, cap.clip_id
                )));
            }
        }
        let mut seen = HashSet::new();
        for &(clip_id, caption_id) in &self.pairs {
            if !clip_pos.contains_key(&clip_id) || !cap_pos.contains_key(&caption_id) {
                return Err(Error::config(format!(
                    "pair ({clip_id}, {caption_id}) references a missing item"
                )));
            }
            if !seen.insert(caption_id) {
                return Err(Error::config(format!(
                    "caption {caption_id} appears in more than one pair"
                )));
            }
        }
        if seen.len() != self.captions.len() {
            return Err(Error::config("some captions are unpaired".to_string()));
        }
        Ok(())
    }
}

/// A mini-batch of N ≥ 2 distinct pair indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub pair_indices: Vec<usize>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.pair_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_indices.is_empty()
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub captions_per_clip: usize,
    pub n_topics: usize,
    pub d_in: usize,
    pub vocab_size: usize,
    /// Inclusive range of frames per clip.
    pub frames_range: (usize, usize),
    /// Inclusive range of tokens per caption.
    pub tokens_range: (usize, usize),
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 200,
            captions_per_clip: 5,
            n_topics: 40,
            d_in: 8,
            vocab_size: 240,
            frames_range: (2, 4),
            tokens_range: (3, 8),
            noise_scale: 0.3,
        }
    }
}

/// Fraction of caption tokens drawn from the clip's topic pool; the remainder
/// comes from the shared pool.
const TOPIC_TOKEN_FRACTION: f64 = 0.8;

/// Share of the frame-noise variance carried by a per-clip offset that all
/// frames of one clip have in common (the recording's identity); the rest is
/// drawn independently per frame entry. The two parts add up so each frame's
/// total noise is still Gaussian with standard deviation `noise_scale`.
const CLIP_NOISE_SHARE: f64 = 0.5;

/// Fraction of a topic pool that one clip's captions draw their topic tokens
/// from. Captions describing the same recording reuse its particular wording,
/// so each clip keeps a random subset of its topic pool.
const CLIP_FOCUS_FRACTION: f64 = 0.5;

/// Selects a clip's focus tokens: a random `CLIP_FOCUS_FRACTION` of its topic
/// pool (at least one token), drawn without replacement.
fn sample_focus(pool: &std::ops::Range<u32>, rng: &mut SplitMix64) -> Vec<u32> {
    let n = pool.len();
    let k = ((n as f64 * CLIP_FOCUS_FRACTION).ceil() as usize).clamp(1, n);
    let mut offsets: Vec<u32> = (0..n as u32).collect();
    for j in 0..k {
        let pick = j + rng.next_index(n - j);
        offsets.swap(j, pick);
    }
    offsets.truncate(k);
    offsets.iter().map(|&o| pool.start + o).collect()
}

/// Contiguous token-id pools: one shared pool followed by one pool per topic.
struct VocabPools {
    shared: std::ops::Range<u32>,
    topics: Vec<std::ops::Range<u32>>,
}

fn partition_vocab(vocab_size: usize, n_topics: usize) -> Result<VocabPools> {
    if vocab_size < n_topics + 1 {
        return Err(Error::config(format!(
            "vocabulary of size {vocab_size} cannot be partitioned into {n_topics} topic pools plus a shared pool"
        )));
    }
    let shared_len = vocab_size / (n_topics + 1);
    let remaining = vocab_size - shared_len;
    let base = remaining / n_topics;
    let extra = remaining % n_topics;
    let mut topics = Vec::with_capacity(n_topics);
    let mut next = shared_len as u32;
    for t in 0..n_topics {
        let len = base + usize::from(t < extra);
        topics.push(next..next + len as u32);
        next += len as u32;
    }
    Ok(VocabPools {
        shared: 0..shared_len as u32,
        topics,
    })
}

/// Generates a paired dataset with latent topic structure.
///
/// Each clip is assigned a topic in round-robin order (`clip i` → topic
/// `i mod n_topics`). Its frames are the topic prototype plus Gaussian noise
/// at scale `noise_scale`; half of the noise variance is a per-clip offset
/// shared by all of the clip's frames, so recordings of one topic are similar
/// but individually recognizable. Its captions draw 80% of their tokens from
/// the topic's pool — restricted to the clip's own focus subset, since five
/// descriptions of one recording reuse its wording — and 20% from the shared
/// pool. Frame values are rounded to the feature-file precision (9
/// significant digits) so a written dataset reads back equal. Deterministic
/// for a fixed seed.
pub fn generate_synthetic<S: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<PairedDataset<S>> {
    if cfg.n_clips == 0 {
        return Err(Error::config("n_clips must be at least 1"));
    }
    if cfg.captions_per_clip == 0 {
        return Err(Error::config("captions_per_clip must be at least 1"));
    }
    if cfg.n_topics == 0 {
        return Err(Error::config("n_topics must be at least 1"));
    }
    if cfg.d_in == 0 {
        return Err(Error::config("d_in must be at least 1"));
    }
    if cfg.vocab_size == 0 {
        return Err(Error::config("vocabulary must be nonempty"));
    }
    let (f_lo, f_hi) = cfg.frames_range;
    let (t_lo, t_hi) = cfg.tokens_range;
    if f_lo < 1 || f_lo > f_hi {
        return Err(Error::config(format!(
            "invalid frames_range ({f_lo}, {f_hi})"
        )));
    }
    if t_lo < 1 || t_lo > t_hi {
        return Err(Error::config(format!(
            "invalid tokens_range ({t_lo}, {t_hi})"
        )));
    }
    if !cfg.noise_scale.is_finite() || cfg.noise_scale < 0.0 {
        return Err(Error::config("noise_scale must be finite and non-negative"));
    }
    let pools = partition_vocab(cfg.vocab_size, cfg.n_topics)?;

    let root = SplitMix64::new(seed);
    let mut topics_rng = root.derive(stream::SYNTH_TOPICS);
    let mut clips_rng = root.derive(stream::SYNTH_CLIPS);
    let mut captions_rng = root.derive(stream::SYNTH_CAPTIONS);

    // Topic prototypes: unit Gaussian, drawn once per dataset.
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_topics)
        .map(|_| (0..cfg.d_in).map(|_| topics_rng.next_gaussian()).collect())
        .collect();

    let mut clips = Vec::with_capacity(cfg.n_clips);
    let mut captions = Vec::with_capacity(cfg.n_clips * cfg.captions_per_clip);
    let mut pairs = Vec::with_capacity(cfg.n_clips * cfg.captions_per_clip);

    let offset_std = cfg.noise_scale * CLIP_NOISE_SHARE.sqrt();
    let frame_std = cfg.noise_scale * (1.0 - CLIP_NOISE_SHARE).sqrt();
    for i in 0..cfg.n_clips {
        let topic = i % cfg.n_topics;
        let proto = &prototypes[topic];
        let n_frames = f_lo + clips_rng.next_index(f_hi - f_lo + 1);
        let offset: Vec<f64> = (0..cfg.d_in)
            .map(|_| offset_std * clips_rng.next_gaussian())
            .collect();
        let frames = Matrix::from_fn(n_frames, cfg.d_in, |_, d| {
            let v = proto[d] + offset[d] + frame_std * clips_rng.next_gaussian();
            S::from_f64_lossy(quantize_sig9(v))
        });
        let clip_id = i as u64;
        clips.push(Clip { clip_id, frames });

        let focus = sample_focus(&pools.topics[topic], &mut clips_rng);
        for c in 0..cfg.captions_per_clip {
            let caption_id = (i * cfg.captions_per_clip + c) as u64;
            let len = t_lo + captions_rng.next_index(t_hi - t_lo + 1);
            let tokens = (0..len)
                .map(|_| {
                    if captions_rng.next_f64() < TOPIC_TOKEN_FRACTION {
                        focus[captions_rng.next_index(focus.len())]
                    } else {
                        pools.shared.start + captions_rng.next_index(pools.shared.len()) as u32
                    }
                })
                .collect();
            captions.push(Caption {
                caption_id,
                clip_id,
                tokens,
            });
            pairs.push((clip_id, caption_id));
        }
    }

    Ok(PairedDataset {
        clips,
        captions,
        pairs,
        split_tag: SplitTag::Full,
        d_in: cfg.d_in,
        vocab_size: cfg.vocab_size,
    })
}

/// Splits a dataset into dev/val/eval by clip, so every caption follows its
/// clip. Fractions must be positive and sum to 1; clip counts are apportioned
/// by largest remainder. Deterministic per seed.
pub fn split_dataset<S: Scalar>(
    ds: &PairedDataset<S>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(PairedDataset<S>, PairedDataset<S>, PairedDataset<S>)> {
    let fracs = [fractions.0, fractions.1, fractions.2];
    if fracs.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::config("split fractions must all be positive"));
    }
    let sum: f64 = fracs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    let n = ds.n_clips();
    let counts = apportion(n, &fracs);
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::config(format!(
            "each split needs at least 1 clip; got {counts:?} from {n} clips"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed)
        .derive(stream::SPLIT)
        .shuffle(&mut order);

    let tags = [SplitTag::Dev, SplitTag::Val, SplitTag::Eval];
    let mut out = Vec::with_capacity(3);
    let mut offset = 0;
    for (count, tag) in counts.into_iter().zip(tags) {
        let mut positions: Vec<usize> = order[offset..offset + count].to_vec();
        offset += count;
        positions.sort_unstable(); // keep parent order inside each split
        out.push(subset_by_clip_positions(ds, &positions, tag));
    }
    let eval = out.pop().expect("three splits");
    let val = out.pop().expect("three splits");
    let dev = out.pop().expect("three splits");
    Ok((dev, val, eval))
}

/// Largest-remainder apportionment of `n` items across `fracs`.
fn apportion(n: usize, fracs: &[f64]) -> Vec<usize> {
    let targets: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|&t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut leftover = n - assigned;
    // Hand out the remainder to the largest fractional parts, lowest index first on ties.
    let mut rema: Vec<(usize, f64)> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, t - t.floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut k = 0;
    while leftover > 0 {
        counts[rema[k % rema.len()].0] += 1;
        leftover -= 1;
        k += 1;
    }
    counts
}

fn subset_by_clip_positions<S: Scalar>(
    ds: &PairedDataset<S>,
    positions: &[usize],
    tag: SplitTag,
) -> PairedDataset<S> {
    let clips: Vec<Clip<S>> = positions.iter().map(|&p| ds.clips[p].clone()).collect();
    let keep: HashSet<u64> = clips.iter().map(|c| c.clip_id).collect();
    let captions: Vec<Caption> = ds
        .captions
        .iter()
        .filter(|c| keep.contains(&c.clip_id))
        .cloned()
        .collect();
    let pairs: Vec<(u64, u64)> = ds
        .pairs
        .iter()
        .filter(|(clip_id, _)| keep.contains(clip_id))
        .cloned()
        .collect();
    PairedDataset {
        clips,
        captions,
        pairs,
        split_tag: tag,
        d_in: ds.d_in,
        vocab_size: ds.vocab_size,
    }
}

/// Shuffles the dataset's pairs with the stream keyed by (seed, epoch) and
/// chunks them into batches. A trailing batch of size 1 is dropped because a
/// single pair has no in-batch negative; sizes 2..batch_size are kept.
pub fn make_batches<S: Scalar>(
    ds: &PairedDataset<S>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<MiniBatch>> {
    if batch_size < 2 {
        return Err(Error::config(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    if ds.n_pairs() < 2 {
        return Err(Error::config(format!(
            "dataset has {} pairs; batching needs at least 2",
            ds.n_pairs()
        )));
    }
    let mut order: Vec<usize> = (0..ds.n_pairs()).collect();
    SplitMix64::new(seed)
        .derive(stream::BATCH_SHUFFLE)
        .derive(epoch)
        .shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| MiniBatch {
            pair_indices: c.to_vec(),
        })
        .collect())
}
