//! Relevance functions between encoded clips and captions, the score
//! matrices built from them, and their exact gradients.
//!
//! Three interchangeable functions are supported: dot product of the pooled
//! embeddings, cosine of the pooled embeddings, and a mean-max alignment
//! that averages, over caption tokens, the best-matching audio frame score.
//! Cross-modality matrices hold `S[i][j] = score(audio_i, text_j)`;
//! within-modality matrices score one side against itself and drive the
//! text/audio-based sampling strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{Embedding, EmbeddingGrad};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, l2_norm, Scalar};

/// Relevance function choices. `Dot` is the training default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    #[default]
    Dot,
    Cosine,
    MeanMaxAlign,
}

impl ScoreFn {
    pub const ALL: [ScoreFn; 3] = [ScoreFn::Dot, ScoreFn::Cosine, ScoreFn::MeanMaxAlign];

    pub fn name(self) -> &'static str {
        match self {
            ScoreFn::Dot => "dot",
            ScoreFn::Cosine => "cosine",
            ScoreFn::MeanMaxAlign => "mean_max_align",
        }
    }

    /// Whether gradients attach to the pooled vector (`true`) or to
    /// individual sequence rows (`false`).
    pub fn uses_pooled(self) -> bool {
        !matches!(self, ScoreFn::MeanMaxAlign)
    }
}

impl fmt::Display for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ScoreFn::Dot),
            "cosine" => Ok(ScoreFn::Cosine),
            "mean_max_align" => Ok(ScoreFn::MeanMaxAlign),
            other => Err(Error::config(format!(
                "unknown relevance function {other:?}; valid: dot, cosine, mean_max_align"
            ))),
        }
    }
}

/// Which side of the retrieval pair a within-modality matrix scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Text,
}

/// Cross-modality score matrix: rows index clips, columns captions.
/// `collapse_suspect` is set when any cosine score hit a zero-norm
/// embedding (the score is reported as 0 rather than raising).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<S> {
    pub values: Matrix<S>,
    pub collapse_suspect: bool,
}

/// Within-modality score matrix over one side's embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct WithinModalityMatrix<S> {
    pub values: Matrix<S>,
    pub modality: Modality,
    pub collapse_suspect: bool,
}

/// Scores one (audio, text) embedding pair. The boolean is the degeneracy
/// flag: `true` when cosine saw a zero-norm vector and returned 0.
pub fn score_pair_checked<S: Scalar>(
    f: ScoreFn,
    audio: &Embedding<S>,
    text: &Embedding<S>,
) -> (S, bool) {
    match f {
        ScoreFn::Dot => (dot(&audio.pooled, &text.pooled), false),
        ScoreFn::Cosine => {
            let na = l2_norm(&audio.pooled);
            let nt = l2_norm(&text.pooled);
            if na == S::zero() || nt == S::zero() {
                (S::zero(), true)
            } else {
                (dot(&audio.pooled, &text.pooled) / (na * nt), false)
            }
        }
        ScoreFn::MeanMaxAlign => (mean_max_align(&audio.seq, &text.seq), false),
    }
}

/// Scores one (audio, text) embedding pair, discarding the degeneracy flag.
pub fn score_pair<S: Scalar>(f: ScoreFn, audio: &Embedding<S>, text: &Embedding<S>) -> S {
    score_pair_checked(f, audio, text).0
}

/// Mean over token rows of the maximum frame-token dot product.
fn mean_max_align<S: Scalar>(frames: &Matrix<S>, tokens: &Matrix<S>) -> S {
    debug_assert_eq!(frames.n_cols(), tokens.n_cols());
    let mut acc = S::zero();
    for w in 0..tokens.n_rows() {
        let word = tokens.row(w);
        let mut best = S::neg_infinity();
        for t in 0..frames.n_rows() {
            let s = dot(frames.row(t), word);
            if s > best {
                best = s;
            }
        }
        acc = acc + best;
    }
    acc / S::from_usize_lossy(tokens.n_rows())
}

/// Index of the best-aligned frame for one token row; ties keep the lowest
/// frame index.
fn argmax_frame<S: Scalar>(frames: &Matrix<S>, word: &[S]) -> usize {
    let mut best_idx = 0;
    let mut best = S::neg_infinity();
    for t in 0..frames.n_rows() {
        let s = dot(frames.row(t), word);
        if s > best {
            best = s;
            best_idx = t;
        }
    }
    best_idx
}

fn check_batch<S: Scalar>(embs: &[Embedding<S>], what: &str) -> Result<()> {
    if embs.len() < 2 {
        return Err(Error::shape(format!(
            "{what} needs at least 2 embeddings, got {}",
            embs.len()
        )));
    }
    let d = embs[0].pooled.len();
    if embs.iter().any(|e| e.pooled.len() != d) {
        return Err(Error::shape(format!("{what} has mixed embedding widths")));
    }
    Ok(())
}

/// Builds the full `N x N` cross-modality matrix for aligned batches of
/// audio and text embeddings (entry `[i][j]` scores clip `i` against
/// caption `j`).
pub fn cross_modality_matrix<S: Scalar>(
    f: ScoreFn,
    audio: &[Embedding<S>],
    text: &[Embedding<S>],
) -> Result<ScoreMatrix<S>> {
    if audio.len() != text.len() {
        return Err(Error::shape(format!(
            "batch sides differ: {} clips vs {} captions",
            audio.len(),
            text.len()
        )));
    }
    check_batch(audio, "cross-modality matrix")?;
    check_batch(text, "cross-modality matrix")?;
    let n = audio.len();
    let mut values = Matrix::zeros(n, n);
    let mut suspect = false;
    for i in 0..n {
        for j in 0..n {
            let (s, flag) = score_pair_checked(f, &audio[i], &text[j]);
            suspect |= flag;
            values.set(i, j, s);
        }
    }
    Ok(ScoreMatrix {
        values,
        collapse_suspect: suspect,
    })
}

/// Builds the `N x N` matrix of one modality against itself.
pub fn within_modality_matrix<S: Scalar>(
    f: ScoreFn,
    embs: &[Embedding<S>],
    modality: Modality,
) -> Result<WithinModalityMatrix<S>> {
    check_batch(embs, "within-modality matrix")?;
    let n = embs.len();
    let mut values = Matrix::zeros(n, n);
    let mut suspect = false;
    for i in 0..n {
        for j in 0..n {
            // Row = query item; for text the "audio" slot is simply the
            // first argument. Dot and cosine are symmetric in their inputs;
            // mean-max-align aligns the column item's rows against the row
            // item's rows.
            let (s, flag) = score_pair_checked(f, &embs[i], &embs[j]);
            suspect |= flag;
            values.set(i, j, s);
        }
    }
    Ok(WithinModalityMatrix {
        values,
        modality,
        collapse_suspect: suspect,
    })
}

/// Adds `upstream * d(score)/d(embedding)` for one scored pair into the two
/// embedding gradients. The gradient representation must match
/// `f.uses_pooled()`; a zero-norm cosine input receives subgradient zero.
pub fn score_pair_backward<S: Scalar>(
    f: ScoreFn,
    audio: &Embedding<S>,
    text: &Embedding<S>,
    upstream: S,
    grad_audio: &mut EmbeddingGrad<S>,
    grad_text: &mut EmbeddingGrad<S>,
) -> Result<()> {
    match f {
        ScoreFn::Dot => {
            let (ga, gt) = expect_pooled(grad_audio, grad_text)?;
            for (g, &v) in ga.iter_mut().zip(&text.pooled) {
                *g += upstream * v;
            }
            for (g, &v) in gt.iter_mut().zip(&audio.pooled) {
                *g += upstream * v;
            }
        }
        ScoreFn::Cosine => {
            let na = l2_norm(&audio.pooled);
            let nt = l2_norm(&text.pooled);
            if na == S::zero() || nt == S::zero() {
                return Ok(());
            }
            let (ga, gt) = expect_pooled(grad_audio, grad_text)?;
            let d = dot(&audio.pooled, &text.pooled);
            let cos = d / (na * nt);
            let inv = S::one() / (na * nt);
            for i in 0..ga.len() {
                ga[i] += upstream * (text.pooled[i] * inv - cos * audio.pooled[i] / (na * na));
            }
            for i in 0..gt.len() {
                gt[i] += upstream * (audio.pooled[i] * inv - cos * text.pooled[i] / (nt * nt));
            }
        }
        ScoreFn::MeanMaxAlign => {
            let (ga, gt) = match (grad_audio, grad_text) {
                (EmbeddingGrad::Seq(a), EmbeddingGrad::Seq(t)) => (a, t),
                _ => {
                    return Err(Error::shape(
                        "mean_max_align gradients must be sequence-shaped",
                    ))
                }
            };
            let l = text.seq.n_rows();
            let share = upstream / S::from_usize_lossy(l);
            for w in 0..l {
                let word = text.seq.row(w);
                let t_star = argmax_frame(&audio.seq, word);
                for (g, &v) in ga.row_mut(t_star).iter_mut().zip(word.iter()) {
                    *g += share * v;
                }
                let frame = audio.seq.row(t_star);
                for (g, &v) in gt.row_mut(w).iter_mut().zip(frame.iter()) {
                    *g += share * v;
                }
            }
        }
    }
    Ok(())
}

fn expect_pooled<'a, S: Scalar>(
    a: &'a mut EmbeddingGrad<S>,
    b: &'a mut EmbeddingGrad<S>,
) -> Result<(&'a mut Vec<S>, &'a mut Vec<S>)> {
    match (a, b) {
        (EmbeddingGrad::Pooled(x), EmbeddingGrad::Pooled(y)) => Ok((x, y)),
        _ => Err(Error::shape("dot/cosine gradients must be pooled-shaped")),
    }
}

/// Propagates a dense gradient over the cross-modality matrix back to
/// per-item embedding gradients (one per clip, one per caption). Zero
/// entries are skipped, so sparse loss gradients stay cheap.
pub fn score_matrix_backward<S: Scalar>(
    f: ScoreFn,
    audio: &[Embedding<S>],
    text: &[Embedding<S>],
    grad_scores: &Matrix<S>,
) -> Result<(Vec<EmbeddingGrad<S>>, Vec<EmbeddingGrad<S>>)> {
    let n = audio.len();
    if text.len() != n || grad_scores.n_rows() != n || grad_scores.n_cols() != n {
        return Err(Error::shape("score-matrix gradient shape mismatch"));
    }
    let pooled = f.uses_pooled();
    let mut ga: Vec<EmbeddingGrad<S>> = audio
        .iter()
        .map(|e| EmbeddingGrad::zeros_like(e, pooled))
        .collect();
    let mut gt: Vec<EmbeddingGrad<S>> = text
        .iter()
        .map(|e| EmbeddingGrad::zeros_like(e, pooled))
        .collect();
    for i in 0..n {
        for j in 0..n {
            let u = grad_scores.get(i, j);
            if u == S::zero() {
                continue;
            }
            score_pair_backward(f, &audio[i], &text[j], u, &mut ga[i], &mut gt[j])?;
        }
    }
    Ok((ga, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_audio, encode_text, init_parameters};
    use crate::rng::SplitMix64;

    fn emb(seq: Vec<Vec<f64>>) -> Embedding<f64> {
        let seq = Matrix::from_rows(seq);
        let pooled = seq.mean_row();
        Embedding { seq, pooled }
    }

    #[test]
    fn dot_worked_example() {
        let a = emb(vec![vec![1.0, 2.0]]);
        let t = emb(vec![vec![3.0, 4.0]]);
        assert_eq!(score_pair(ScoreFn::Dot, &a, &t), 11.0);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        let a = emb(vec![vec![1.0, 0.0]]);
        let t = emb(vec![vec![0.0, 1.0]]);
        assert_eq!(score_pair(ScoreFn::Cosine, &a, &t), 0.0);
        let (s, flag) = score_pair_checked(ScoreFn::Cosine, &a, &t);
        assert_eq!((s, flag), (0.0, false));
    }

    #[test]
    fn cosine_zero_vector_flags_degeneracy() {
        let a = emb(vec![vec![0.0, 0.0]]);
        let t = emb(vec![vec![1.0, 1.0]]);
        let (s, flag) = score_pair_checked(ScoreFn::Cosine, &a, &t);
        assert_eq!(s, 0.0);
        assert!(flag);
    }

    #[test]
    fn cosine_stays_in_unit_interval() {
        let mut r = SplitMix64::new(3);
        for _ in 0..200 {
            let a = emb(vec![(0..4).map(|_| r.next_gaussian()).collect()]);
            let t = emb(vec![(0..4).map(|_| r.next_gaussian()).collect()]);
            let s = score_pair(ScoreFn::Cosine, &a, &t);
            assert!(s.abs() <= 1.0 + 1e-12, "cosine {s} out of range");
        }
    }

    #[test]
    fn mean_max_align_worked_example() {
        // frames {e1, e2}, single word e1: max alignment 1, mean 1.
        let a = emb(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = emb(vec![vec![1.0, 0.0]]);
        assert_eq!(score_pair(ScoreFn::MeanMaxAlign, &a, &t), 1.0);
        // two words along each axis: each finds its own frame.
        let t2 = emb(vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(score_pair(ScoreFn::MeanMaxAlign, &a, &t2), 2.5);
    }

    #[test]
    fn matrix_matches_pairwise_scores_exactly() {
        let p = init_parameters::<f64>(4, 3, 8, 11).unwrap();
        let mut r = SplitMix64::new(5);
        let audio: Vec<_> = (0..4)
            .map(|_| {
                let frames = Matrix::from_fn(3, 3, |_, _| r.next_gaussian());
                encode_audio(&p, &frames).unwrap()
            })
            .collect();
        let text: Vec<_> = (0..4)
            .map(|_| {
                let tokens: Vec<u32> = (0..5).map(|_| r.next_index(8) as u32).collect();
                encode_text(&p, &tokens).unwrap()
            })
            .collect();
        for f in ScoreFn::ALL {
            let m = cross_modality_matrix(f, &audio, &text).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    // Bit-identical, not approximately equal.
                    assert_eq!(m.values.get(i, j), score_pair(f, &audio[i], &text[j]));
                }
            }
        }
    }

    #[test]
    fn within_modality_dot_is_symmetric() {
        let items: Vec<_> = (0..3)
            .map(|i| emb(vec![vec![i as f64, 1.0 - i as f64]]))
            .collect();
        let m = within_modality_matrix(ScoreFn::Dot, &items, Modality::Text).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.values.get(i, j), m.values.get(j, i));
            }
        }
    }

    #[test]
    fn mismatched_batches_are_shape_errors() {
        let a = vec![emb(vec![vec![1.0, 0.0]]); 3];
        let t = vec![emb(vec![vec![1.0, 0.0]]); 2];
        assert!(cross_modality_matrix(ScoreFn::Dot, &a, &t).is_err());
        let one = vec![emb(vec![vec![1.0, 0.0]])];
        assert!(within_modality_matrix(ScoreFn::Dot, &one, Modality::Audio).is_err());
    }

    fn fd_check(f: ScoreFn, seed: u64) {
        let a0 = {
            let mut r = SplitMix64::new(seed);
            Matrix::from_fn(3, 4, |_, _| r.next_gaussian())
        };
        let t0 = {
            let mut r = SplitMix64::new(seed + 1);
            Matrix::from_fn(2, 4, |_, _| r.next_gaussian())
        };
        let score =
            |am: &Matrix<f64>, tm: &Matrix<f64>| score_pair(f, &emb_from(am), &emb_from(tm));
        let a = emb_from(&a0);
        let t = emb_from(&t0);
        let pooled = f.uses_pooled();
        let mut ga = EmbeddingGrad::zeros_like(&a, pooled);
        let mut gt = EmbeddingGrad::zeros_like(&t, pooled);
        score_pair_backward(f, &a, &t, 1.0, &mut ga, &mut gt).unwrap();

        // Perturb raw sequence entries; pooled gradients are mapped back
        // through the mean, seq gradients apply directly.
        let h = 1e-6;
        for (m0, other, grad, is_audio) in [(&a0, &t0, &ga, true), (&t0, &a0, &gt, false)] {
            for r in 0..m0.n_rows() {
                for c in 0..m0.n_cols() {
                    let mut plus = m0.clone();
                    plus.set(r, c, plus.get(r, c) + h);
                    let mut minus = m0.clone();
                    minus.set(r, c, minus.get(r, c) - h);
                    let fd = if is_audio {
                        (score(&plus, other) - score(&minus, other)) / (2.0 * h)
                    } else {
                        (score(other, &plus) - score(other, &minus)) / (2.0 * h)
                    };
                    let an = match grad {
                        EmbeddingGrad::Pooled(g) => g[c] / m0.n_rows() as f64,
                        EmbeddingGrad::Seq(g) => g.get(r, c),
                    };
                    assert!(
                        (fd - an).abs() <= 1e-5 * fd.abs().max(1.0),
                        "{f} at ({r},{c}): fd={fd} analytic={an}"
                    );
                }
            }
        }
    }

    fn emb_from(m: &Matrix<f64>) -> Embedding<f64> {
        Embedding {
            seq: m.clone(),
            pooled: m.mean_row(),
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        fd_check(ScoreFn::Dot, 31);
        fd_check(ScoreFn::Cosine, 32);
        fd_check(ScoreFn::MeanMaxAlign, 33);
    }

    #[test]
    fn matrix_backward_sums_pair_gradients() {
        let audio: Vec<_> = (0..3)
            .map(|i| emb(vec![vec![0.3 * i as f64 + 0.1, -0.2 * i as f64 + 0.5]]))
            .collect();
        let text: Vec<_> = (0..3)
            .map(|i| emb(vec![vec![0.7 - 0.1 * i as f64, 0.4 * i as f64 - 0.3]]))
            .collect();
        let mut g = Matrix::zeros(3, 3);
        g.set(0, 1, 0.5);
        g.set(2, 2, -0.25);
        let (ga, gt) = score_matrix_backward(ScoreFn::Dot, &audio, &text, &g).unwrap();
        // audio 0 only sees text 1 scaled by 0.5.
        match &ga[0] {
            EmbeddingGrad::Pooled(v) => {
                assert_eq!(v[0], 0.5 * text[1].pooled[0]);
                assert_eq!(v[1], 0.5 * text[1].pooled[1]);
            }
            _ => panic!("expected pooled"),
        }
        assert!(ga[1].is_zero());
        assert!(gt[0].is_zero());
        match &gt[2] {
            EmbeddingGrad::Pooled(v) => {
                assert_eq!(v[0], -0.25 * audio[2].pooled[0]);
            }
            _ => panic!("expected pooled"),
        }
    }
}
