//! Retrieval metrics: average precision and two recall@k conventions, plus
//! the end-to-end evaluation of a trained model over an eval split.
//!
//! Queries run in both directions. Text-to-audio treats each caption as a
//! query with exactly one relevant clip; audio-to-text treats each clip as
//! a query whose relevant set is its captions (five, under the standard
//! pairing). Candidates are ranked by descending score with ties broken by
//! ascending item id, so rankings are total orders and results are
//! reproducible.
//!
//! `recall_at_k` follows the convention where the per-query value is
//! `|relevant ∩ top-k| / |relevant|` (a multi-relevant query can score
//! fractionally even when one of its items is found); `recall_at_k_query`
//! counts a query as 1 only if at least one relevant item appears in the
//! top `k`. Both are reported so the two conventions can be compared
//! directly.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PairedDataset;
use crate::encoder::{encode_audio, encode_text, Embedding, ModelParameters};
use crate::error::{Error, Result};
use crate::relevance::{score_pair_checked, ScoreFn};
use crate::scalar::Scalar;

/// Retrieval direction: which modality queries and which is retrieved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TextToAudio,
    AudioToText,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::TextToAudio, Direction::AudioToText];

    pub fn name(self) -> &'static str {
        match self {
            Direction::TextToAudio => "text_to_audio",
            Direction::AudioToText => "audio_to_text",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_to_audio" => Ok(Direction::TextToAudio),
            "audio_to_text" => Ok(Direction::AudioToText),
            other => Err(Error::config(format!(
                "unknown direction {other:?}; valid: text_to_audio, audio_to_text"
            ))),
        }
    }
}

/// The cutoffs reported by the experiment grid.
pub const RECALL_CUTOFFS: [usize; 2] = [5, 10];

/// Mean metrics over all queries of one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// Mean average precision.
    pub map: f64,
    /// Mean fraction of each query's relevant set found in the top k.
    pub r_at: BTreeMap<usize, f64>,
    /// Fraction of queries with at least one relevant item in the top k.
    pub r_at_query: BTreeMap<usize, f64>,
}

/// Average precision of one ranked list: mean of precision-at-rank over the
/// positions holding relevant items, divided by `total_relevant` (so
/// relevant items missing from the ranking count as unrecovered).
pub fn average_precision(
    ranked: &[u64],
    relevant: &HashSet<u64>,
    total_relevant: usize,
) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::config(
            "average precision needs a non-empty relevant set",
        ));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (pos, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            acc += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(acc / total_relevant as f64)
}

/// Recall@k as a fraction of the relevant set: `|relevant ∩ top-k| / |relevant|`.
pub fn recall_at_k(ranked: &[u64], relevant: &HashSet<u64>, k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::config("recall needs a non-empty relevant set"));
    }
    if k == 0 {
        return Err(Error::config("recall cutoff must be positive"));
    }
    let top = ranked.iter().take(k);
    let found = top.filter(|id| relevant.contains(id)).count();
    Ok(found as f64 / relevant.len() as f64)
}

/// Hit-based recall@k over a set of queries: the fraction of queries whose
/// top `k` contains at least one relevant item.
pub fn recall_at_k_query(
    rankings: &[Vec<u64>],
    relevant: &[HashSet<u64>],
    k: usize,
) -> Result<f64> {
    if rankings.len() != relevant.len() {
        return Err(Error::shape("one relevant set per ranking required"));
    }
    if rankings.is_empty() {
        return Err(Error::config("recall needs at least one query"));
    }
    if k == 0 {
        return Err(Error::config("recall cutoff must be positive"));
    }
    let mut hits = 0usize;
    for (ranked, rel) in rankings.iter().zip(relevant) {
        if rel.is_empty() {
            return Err(Error::config("recall needs non-empty relevant sets"));
        }
        if ranked.iter().take(k).any(|id| rel.contains(id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Sorts candidate `(id, score)` pairs into a ranking: descending score,
/// ascending id on exact ties.
pub fn rank_candidates<S: Scalar>(mut scored: Vec<(u64, S)>) -> Vec<u64> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are comparable")
            .then(a.0.cmp(&b.0))
    });
    scored.into_iter().map(|(id, _)| id).collect()
}

/// Encodes the eval split once and runs every query of `direction`,
/// averaging AP and both recall conventions (cutoffs 5 and 10) over
/// queries in ascending id order.
pub fn evaluate_retrieval<S: Scalar>(
    params: &ModelParameters<S>,
    eval: &PairedDataset<S>,
    score_fn: ScoreFn,
    direction: Direction,
) -> Result<RetrievalMetrics> {
    if eval.n_clips() == 0 || eval.n_captions() == 0 {
        return Err(Error::config("evaluation split is empty"));
    }
    let audio: Vec<(u64, Embedding<S>)> = eval
        .clips
        .iter()
        .map(|c| Ok((c.clip_id, encode_audio(params, &c.frames)?)))
        .collect::<Result<_>>()?;
    let text: Vec<(u64, Embedding<S>)> = eval
        .captions
        .iter()
        .map(|c| Ok((c.caption_id, encode_text(params, &c.tokens)?)))
        .collect::<Result<_>>()?;

    // caption -> its clip, clip -> its captions.
    let mut clip_of: BTreeMap<u64, u64> = BTreeMap::new();
    let mut captions_of: BTreeMap<u64, HashSet<u64>> = BTreeMap::new();
    for &(clip_id, caption_id) in &eval.pairs {
        clip_of.insert(caption_id, clip_id);
        captions_of.entry(clip_id).or_default().insert(caption_id);
    }

    let mut rankings: Vec<Vec<u64>> = Vec::new();
    let mut relevant_sets: Vec<HashSet<u64>> = Vec::new();
    match direction {
        Direction::TextToAudio => {
            for (caption_id, q) in &text {
                let scored: Vec<(u64, S)> = audio
                    .iter()
                    .map(|(clip_id, a)| (*clip_id, score_pair_checked(score_fn, a, q).0))
                    .collect();
                rankings.push(rank_candidates(scored));
                let clip = clip_of.get(caption_id).ok_or_else(|| {
                    Error::config(format!("caption {caption_id} has no paired clip"))
                })?;
                relevant_sets.push(HashSet::from([*clip]));
            }
        }
        Direction::AudioToText => {
            for (clip_id, q) in &audio {
                let scored: Vec<(u64, S)> = text
                    .iter()
                    .map(|(caption_id, t)| (*caption_id, score_pair_checked(score_fn, q, t).0))
                    .collect();
                rankings.push(rank_candidates(scored));
                let caps = captions_of.get(clip_id).ok_or_else(|| {
                    Error::config(format!("clip {clip_id} has no paired captions"))
                })?;
                relevant_sets.push(caps.clone());
            }
        }
    }

    let n_q = rankings.len() as f64;
    let mut map = 0.0;
    for (ranked, rel) in rankings.iter().zip(&relevant_sets) {
        map += average_precision(ranked, rel, rel.len())?;
    }
    map /= n_q;

    let mut r_at = BTreeMap::new();
    let mut r_at_query = BTreeMap::new();
    for k in RECALL_CUTOFFS {
        let mut mean = 0.0;
        for (ranked, rel) in rankings.iter().zip(&relevant_sets) {
            mean += recall_at_k(ranked, rel, k)?;
        }
        r_at.insert(k, mean / n_q);
        r_at_query.insert(k, recall_at_k_query(&rankings, &relevant_sets, k)?);
    }
    Ok(RetrievalMetrics {
        map,
        r_at,
        r_at_query,
    })
}
