//! Negative-example selection: the eight strategies that pick, for each
//! anchor pair in a mini-batch, which caption and which clip serve as its
//! negatives.
//!
//! Strategies fall into three groups. `random` draws uniformly from the
//! other batch members; `full_mini_batch` keeps every other member (the
//! loss then averages their scores); the six score-based strategies read
//! either the cross-modality matrix (`cross_hard`, `cross_semi_hard`) or a
//! within-modality similarity matrix (`text_*`, `audio_*`). All argmax/
//! argmin scans run in ascending index order and keep the first extremum,
//! so ties resolve to the lowest index, and an anchor is never selected as
//! its own negative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::{ScoreMatrix, WithinModalityMatrix};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// The eight negative-sampling strategies, named exactly as the CLI spells
/// them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    FullMiniBatch,
    TextHard,
    TextEasy,
    AudioHard,
    AudioEasy,
    CrossHard,
    CrossSemiHard,
}

/// Whether a within-modality strategy keeps the most similar or the least
/// similar other item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityMode {
    Hard,
    Easy,
}

impl Strategy {
    /// Every strategy, in the order the summary report lists them: the two
    /// baseline selections first, then the score-based family.
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::FullMiniBatch,
        Strategy::CrossSemiHard,
        Strategy::CrossHard,
        Strategy::TextHard,
        Strategy::TextEasy,
        Strategy::AudioHard,
        Strategy::AudioEasy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::FullMiniBatch => "full_mini_batch",
            Strategy::TextHard => "text_hard",
            Strategy::TextEasy => "text_easy",
            Strategy::AudioHard => "audio_hard",
            Strategy::AudioEasy => "audio_easy",
            Strategy::CrossHard => "cross_hard",
            Strategy::CrossSemiHard => "cross_semi_hard",
        }
    }

    /// Report grouping: `random` and `full_mini_batch` are the baselines,
    /// everything else consults scores.
    pub fn category(self) -> &'static str {
        match self {
            Strategy::Random | Strategy::FullMiniBatch => "Basic",
            _ => "Score-based",
        }
    }

    pub fn needs_text_matrix(self) -> bool {
        matches!(self, Strategy::TextHard | Strategy::TextEasy)
    }

    pub fn needs_audio_matrix(self) -> bool {
        matches!(self, Strategy::AudioHard | Strategy::AudioEasy)
    }

    pub fn needs_rng(self) -> bool {
        matches!(self, Strategy::Random)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        for strat in Strategy::ALL {
            if s == strat.name() {
                return Ok(strat);
            }
        }
        let valid = Strategy::ALL.map(Strategy::name).join(", ");
        Err(Error::config(format!(
            "unknown strategy {s:?}; valid strategies: {valid}"
        )))
    }
}

/// The negatives chosen for each anchor: caption indices whose score should
/// fall, and clip indices likewise. Singleton lists except under
/// `full_mini_batch`, where every other batch member appears.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSelection {
    pub text_negatives: Vec<Vec<usize>>,
    pub audio_negatives: Vec<Vec<usize>>,
}

impl NegativeSelection {
    pub fn n_anchors(&self) -> usize {
        self.text_negatives.len()
    }

    /// The single (caption, clip) negative pair for anchor `i`; a contract
    /// error if the selection holds more than one per side (use the
    /// full-batch loss for those).
    pub fn singleton(&self, i: usize) -> Result<(usize, usize)> {
        let t = &self.text_negatives[i];
        let a = &self.audio_negatives[i];
        if t.len() != 1 || a.len() != 1 {
            return Err(Error::Contract(format!(
                "anchor {i} carries {} text / {} audio negatives; \
                 multi-negative selections must go through the full-batch loss",
                t.len(),
                a.len()
            )));
        }
        Ok((t[0], a[0]))
    }

    /// True when every anchor has exactly one negative per side.
    pub fn is_singleton(&self) -> bool {
        self.text_negatives.iter().all(|v| v.len() == 1)
            && self.audio_negatives.iter().all(|v| v.len() == 1)
    }
}

/// Hardest cross-modality negatives for anchor `i`: the caption `j != i`
/// with the highest `S[i][j]` and the clip `k != i` with the highest
/// `S[k][i]`.
pub fn cross_hard<S: Scalar>(i: usize, s: &ScoreMatrix<S>) -> (usize, usize) {
    let n = s.values.n_rows();
    let mut j_best = usize::MAX;
    let mut j_val = S::neg_infinity();
    let mut k_best = usize::MAX;
    let mut k_val = S::neg_infinity();
    for c in 0..n {
        if c == i {
            continue;
        }
        let sj = s.values.get(i, c);
        if sj > j_val {
            j_val = sj;
            j_best = c;
        }
        let sk = s.values.get(c, i);
        if sk > k_val {
            k_val = sk;
            k_best = c;
        }
    }
    (j_best, k_best)
}

/// Semi-hard cross-modality negatives: the off-diagonal entries closest in
/// value to the anchor's own score `S[i][i]`, measured by absolute
/// difference, on each side.
pub fn cross_semi_hard<S: Scalar>(i: usize, s: &ScoreMatrix<S>) -> (usize, usize) {
    let n = s.values.n_rows();
    let own = s.values.get(i, i);
    let mut j_best = usize::MAX;
    let mut j_val = S::infinity();
    let mut k_best = usize::MAX;
    let mut k_val = S::infinity();
    for c in 0..n {
        if c == i {
            continue;
        }
        let dj = (s.values.get(i, c) - own).abs();
        if dj < j_val {
            j_val = dj;
            j_best = c;
        }
        let dk = (s.values.get(c, i) - own).abs();
        if dk < k_val {
            k_val = dk;
            k_best = c;
        }
    }
    (j_best, k_best)
}

/// Within-modality negative for anchor `i`: the other item most similar
/// (`Hard`) or least similar (`Easy`) to item `i` in `w`. The same batch
/// position serves as both the caption and the clip negative, since the
/// matched pair shares an index.
pub fn within_modality<S: Scalar>(
    i: usize,
    w: &WithinModalityMatrix<S>,
    mode: SimilarityMode,
) -> (usize, usize) {
    let n = w.values.n_rows();
    let mut best = usize::MAX;
    let mut best_val = match mode {
        SimilarityMode::Hard => S::neg_infinity(),
        SimilarityMode::Easy => S::infinity(),
    };
    for c in 0..n {
        if c == i {
            continue;
        }
        let v = w.values.get(i, c);
        let better = match mode {
            SimilarityMode::Hard => v > best_val,
            SimilarityMode::Easy => v < best_val,
        };
        if better {
            best_val = v;
            best = c;
        }
    }
    (best, best)
}

/// Uniform negatives for anchor `i`: two independent draws (caption first,
/// then clip) from the `n - 1` other positions.
pub fn random_pair(i: usize, n: usize, rng: &mut SplitMix64) -> (usize, usize) {
    let draw = |rng: &mut SplitMix64| {
        let r = rng.next_index(n - 1);
        if r >= i {
            r + 1
        } else {
            r
        }
    };
    let j = draw(rng);
    let k = draw(rng);
    (j, k)
}

/// Selects negatives for every anchor in the batch under `strategy`.
///
/// `w_text` / `w_audio` must be supplied for the within-modality
/// strategies, and `rng` for `random`; requirements that are not met raise
/// a configuration error. The random strategy derives one child stream per
/// anchor index from `rng`, so selections are independent of batch
/// traversal order.
pub fn select_negatives<S: Scalar>(
    strategy: Strategy,
    s: &ScoreMatrix<S>,
    w_text: Option<&WithinModalityMatrix<S>>,
    w_audio: Option<&WithinModalityMatrix<S>>,
    rng: Option<&SplitMix64>,
) -> Result<NegativeSelection> {
    let n = s.values.n_rows();
    if n < 2 {
        return Err(Error::shape(format!(
            "negative selection needs a batch of at least 2, got {n}"
        )));
    }
    let check_w = |w: Option<&WithinModalityMatrix<S>>, what: &str| -> Result<()> {
        match w {
            None => Err(Error::config(format!(
                "strategy {strategy} requires the {what} within-modality matrix"
            ))),
            Some(m) if m.values.n_rows() != n => Err(Error::shape(format!(
                "{what} matrix is {}x{}, batch is {n}",
                m.values.n_rows(),
                m.values.n_cols()
            ))),
            Some(_) => Ok(()),
        }
    };
    if strategy.needs_text_matrix() {
        check_w(w_text, "text")?;
    }
    if strategy.needs_audio_matrix() {
        check_w(w_audio, "audio")?;
    }
    if strategy.needs_rng() && rng.is_none() {
        return Err(Error::config(format!(
            "strategy {strategy} requires a random stream"
        )));
    }

    let mut text_negatives = Vec::with_capacity(n);
    let mut audio_negatives = Vec::with_capacity(n);
    for i in 0..n {
        let (js, ks): (Vec<usize>, Vec<usize>) = match strategy {
            Strategy::Random => {
                let mut anchor_rng = rng.unwrap().derive(i as u64);
                let (j, k) = random_pair(i, n, &mut anchor_rng);
                (vec![j], vec![k])
            }
            Strategy::FullMiniBatch => {
                let others: Vec<usize> = (0..n).filter(|&c| c != i).collect();
                (others.clone(), others)
            }
            Strategy::TextHard => {
                singletons(within_modality(i, w_text.unwrap(), SimilarityMode::Hard))
            }
            Strategy::TextEasy => {
                singletons(within_modality(i, w_text.unwrap(), SimilarityMode::Easy))
            }
            Strategy::AudioHard => {
                singletons(within_modality(i, w_audio.unwrap(), SimilarityMode::Hard))
            }
            Strategy::AudioEasy => {
                singletons(within_modality(i, w_audio.unwrap(), SimilarityMode::Easy))
            }
            Strategy::CrossHard => singletons(cross_hard(i, s)),
            Strategy::CrossSemiHard => singletons(cross_semi_hard(i, s)),
        };
        debug_assert!(js.iter().all(|&j| j != i && j < n));
        debug_assert!(ks.iter().all(|&k| k != i && k < n));
        text_negatives.push(js);
        audio_negatives.push(ks);
    }
    Ok(NegativeSelection {
        text_negatives,
        audio_negatives,
    })
}

fn singletons((j, k): (usize, usize)) -> (Vec<usize>, Vec<usize>) {
    (vec![j], vec![k])
}
