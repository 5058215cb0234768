//! Triplet ranking losses over a batch score matrix, with exact
//! (sub)gradients with respect to every score entry.
//!
//! For each anchor pair `i` the loss takes two hinges: one pushing the
//! selected negative caption below the matched caption, one pushing the
//! selected negative clip below the matched clip:
//!
//! ```text
//! L = (1/N) * sum_i [ max(0, S[i][j_i] - S[i][i] + m)
//!                   + max(0, S[k_i][i] - S[i][i] + m) ]
//! ```
//!
//! The full-mini-batch variant replaces each selected score by the mean of
//! all `N - 1` off-diagonal scores on that side before the hinge is
//! applied. At a hinge kink (argument exactly zero) the subgradient is
//! taken as zero, matching the strict `> 0` activation test.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::relevance::ScoreMatrix;
use crate::sampling::NegativeSelection;
use crate::scalar::Scalar;

/// Loss hyperparameters. The margin defaults to 1.0 and must be
/// non-negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig<S> {
    pub margin: S,
}

impl<S: Scalar> Default for LossConfig<S> {
    fn default() -> Self {
        LossConfig { margin: S::one() }
    }
}

impl<S: Scalar> LossConfig<S> {
    pub fn new(margin: S) -> Result<Self> {
        if !(margin >= S::zero()) {
            return Err(Error::config(format!(
                "margin must be non-negative, got {margin}"
            )));
        }
        Ok(LossConfig { margin })
    }
}

/// Loss value plus its dense gradient with respect to the score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<S> {
    pub value: S,
    pub grad_scores: Matrix<S>,
}

/// Instance-based triplet loss: one selected caption negative and one
/// selected clip negative per anchor. Anchors are accumulated in ascending
/// index order.
pub fn triplet_loss<S: Scalar>(
    s: &ScoreMatrix<S>,
    selection: &NegativeSelection,
    cfg: LossConfig<S>,
) -> Result<LossResult<S>> {
    let cfg = LossConfig::new(cfg.margin)?;
    let n = s.values.n_rows();
    if n < 2 {
        return Err(Error::shape("triplet loss needs a batch of at least 2"));
    }
    if selection.n_anchors() != n {
        return Err(Error::shape(format!(
            "selection covers {} anchors, batch has {n}",
            selection.n_anchors()
        )));
    }
    let inv_n = S::one() / S::from_usize_lossy(n);
    let mut total = S::zero();
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let (j, k) = selection.singleton(i)?;
        if j == i || k == i || j >= n || k >= n {
            return Err(Error::Contract(format!(
                "anchor {i} received negative indices ({j}, {k})"
            )));
        }
        let own = s.values.get(i, i);
        let text_hinge = s.values.get(i, j) - own + cfg.margin;
        if text_hinge > S::zero() {
            total = total + text_hinge;
            grad.add_at(i, j, inv_n);
            grad.add_at(i, i, -inv_n);
        }
        let audio_hinge = s.values.get(k, i) - own + cfg.margin;
        if audio_hinge > S::zero() {
            total = total + audio_hinge;
            grad.add_at(k, i, inv_n);
            grad.add_at(i, i, -inv_n);
        }
    }
    Ok(LossResult {
        value: total * inv_n,
        grad_scores: grad,
    })
}

/// Full-mini-batch loss: every other batch member is a negative, and the
/// hinge compares the matched score against the mean of the `N - 1`
/// off-diagonal scores on each side.
pub fn full_batch_loss<S: Scalar>(s: &ScoreMatrix<S>, cfg: LossConfig<S>) -> Result<LossResult<S>> {
    let cfg = LossConfig::new(cfg.margin)?;
    let n = s.values.n_rows();
    if n < 2 {
        return Err(Error::shape("full-batch loss needs a batch of at least 2"));
    }
    let inv_n = S::one() / S::from_usize_lossy(n);
    let n_others = S::from_usize_lossy(n - 1);
    let share = inv_n / n_others;
    let mut total = S::zero();
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let own = s.values.get(i, i);

        let mut text_sum = S::zero();
        for j in 0..n {
            if j != i {
                text_sum = text_sum + s.values.get(i, j);
            }
        }
        let text_hinge = text_sum / n_others - own + cfg.margin;
        if text_hinge > S::zero() {
            total = total + text_hinge;
            for j in 0..n {
                if j != i {
                    grad.add_at(i, j, share);
                }
            }
            grad.add_at(i, i, -inv_n);
        }

        let mut audio_sum = S::zero();
        for k in 0..n {
            if k != i {
                audio_sum = audio_sum + s.values.get(k, i);
            }
        }
        let audio_hinge = audio_sum / n_others - own + cfg.margin;
        if audio_hinge > S::zero() {
            total = total + audio_hinge;
            for k in 0..n {
                if k != i {
                    grad.add_at(k, i, share);
                }
            }
            grad.add_at(i, i, -inv_n);
        }
    }
    Ok(LossResult {
        value: total * inv_n,
        grad_scores: grad,
    })
}
