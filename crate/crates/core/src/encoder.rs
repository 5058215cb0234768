//! Linear dual encoders with mean pooling and exact analytic gradients.
//!
//! The audio encoder maps each input frame through a shared projection matrix
//! (optionally followed by elementwise ReLU); the text encoder looks up one
//! learned row per token (same optional ReLU). Both expose the per-element
//! sequence and its mean-pooled vector, and both back-propagate upstream
//! gradients — given either against the pooled vector or against every
//! sequence row — into dense parameter gradients.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, SplitMix64};
use crate::scalar::Scalar;

/// Half-width of the uniform initialization interval (-0.05, 0.05).
pub const INIT_SCALE: f64 = 0.05;

/// Learned parameters: a token embedding table (`vocab_size x d`) and an
/// audio frame projection (`d_in x d`), plus the ReLU toggle (off by
/// default).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<S> {
    pub token_table: Matrix<S>,
    pub audio_proj: Matrix<S>,
    pub relu: bool,
}

impl<S: Scalar> ModelParameters<S> {
    pub fn embed_dim(&self) -> usize {
        self.audio_proj.n_cols()
    }

    pub fn d_in(&self) -> usize {
        self.audio_proj.n_rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.n_rows()
    }
}

/// One encoded item: the row-per-element sequence (`T x d` frames or
/// `L x d` tokens) and its mean over rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<S> {
    pub seq: Matrix<S>,
    pub pooled: Vec<S>,
}

/// Gradient flowing back into one embedding, matching how the relevance
/// function consumed it: `Pooled` for functions of the mean vector, `Seq`
/// for functions of individual sequence rows.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingGrad<S> {
    Pooled(Vec<S>),
    Seq(Matrix<S>),
}

impl<S: Scalar> EmbeddingGrad<S> {
    /// A zero gradient shaped for `emb` under the given pooling mode.
    pub fn zeros_like(emb: &Embedding<S>, pooled: bool) -> Self {
        if pooled {
            EmbeddingGrad::Pooled(vec![S::zero(); emb.pooled.len()])
        } else {
            EmbeddingGrad::Seq(Matrix::zeros(emb.seq.n_rows(), emb.seq.n_cols()))
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            EmbeddingGrad::Pooled(v) => v.iter().all(|x| *x == S::zero()),
            EmbeddingGrad::Seq(m) => m.as_slice().iter().all(|x| *x == S::zero()),
        }
    }
}

/// Dense parameter gradients, same shapes as [`ModelParameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<S> {
    pub token_table: Matrix<S>,
    pub audio_proj: Matrix<S>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn zeros_like(params: &ModelParameters<S>) -> Self {
        ParamGrads {
            token_table: Matrix::zeros(params.token_table.n_rows(), params.token_table.n_cols()),
            audio_proj: Matrix::zeros(params.audio_proj.n_rows(), params.audio_proj.n_cols()),
        }
    }
}

/// Draws fresh parameters with every entry uniform in (-0.05, 0.05), from
/// the run's parameter-init stream. The token table is filled first, then
/// the projection, both row-major, so layouts are reproducible byte for
/// byte. ReLU starts disabled.
pub fn init_parameters<S: Scalar>(
    embed_dim: usize,
    d_in: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<ModelParameters<S>> {
    if embed_dim < 2 {
        return Err(Error::config(format!(
            "embedding dimension must be at least 2, got {embed_dim}"
        )));
    }
    if d_in == 0 || vocab_size == 0 {
        return Err(Error::config(
            "input dimension and vocabulary size must be positive",
        ));
    }
    let mut rng = SplitMix64::new(seed).derive(stream::PARAM_INIT);
    let mut draw = |m: &mut Matrix<S>| {
        for v in m.as_mut_slice() {
            *v = S::from_f64_lossy((rng.next_f64() * 2.0 - 1.0) * INIT_SCALE);
        }
    };
    let mut token_table = Matrix::zeros(vocab_size, embed_dim);
    let mut audio_proj = Matrix::zeros(d_in, embed_dim);
    draw(&mut token_table);
    draw(&mut audio_proj);
    Ok(ModelParameters {
        token_table,
        audio_proj,
        relu: false,
    })
}

/// Encodes one clip: each frame times the projection matrix (then ReLU if
/// enabled), pooled by the mean over frames.
pub fn encode_audio<S: Scalar>(
    params: &ModelParameters<S>,
    frames: &Matrix<S>,
) -> Result<Embedding<S>> {
    if frames.n_cols() != params.d_in() {
        return Err(Error::shape(format!(
            "frames have dimension {}, projection expects {}",
            frames.n_cols(),
            params.d_in()
        )));
    }
    if frames.n_rows() == 0 {
        return Err(Error::shape("cannot encode a clip with zero frames"));
    }
    let d = params.embed_dim();
    let mut seq = Matrix::zeros(frames.n_rows(), d);
    for (t, frame) in frames.rows_iter().enumerate() {
        let mut row = params.audio_proj.vecmat(frame);
        if params.relu {
            for v in &mut row {
                if *v < S::zero() {
                    *v = S::zero();
                }
            }
        }
        seq.row_mut(t).copy_from_slice(&row);
    }
    let pooled = seq.mean_row();
    Ok(Embedding { seq, pooled })
}

/// Encodes one caption: one table row per token (then ReLU if enabled),
/// pooled by the mean over tokens. Repeated tokens repeat their row.
pub fn encode_text<S: Scalar>(params: &ModelParameters<S>, tokens: &[u32]) -> Result<Embedding<S>> {
    if tokens.is_empty() {
        return Err(Error::shape("cannot encode a caption with zero tokens"));
    }
    let vocab = params.vocab_size();
    let d = params.embed_dim();
    let mut seq = Matrix::zeros(tokens.len(), d);
    for (w, &tok) in tokens.iter().enumerate() {
        if tok as usize >= vocab {
            return Err(Error::index(format!(
                "token {tok} outside vocabulary of size {vocab}"
            )));
        }
        let row = seq.row_mut(w);
        row.copy_from_slice(params.token_table.row(tok as usize));
        if params.relu {
            for v in row {
                if *v < S::zero() {
                    *v = S::zero();
                }
            }
        }
    }
    let pooled = seq.mean_row();
    Ok(Embedding { seq, pooled })
}

/// Accumulates the gradient of one encoded clip into `grads.audio_proj`.
/// `Pooled` upstream is spread as `g/T` to every frame row; `Seq` upstream
/// applies row by row. With ReLU enabled, entries whose pre-activation was
/// not strictly positive are masked out.
pub fn backprop_audio<S: Scalar>(
    params: &ModelParameters<S>,
    frames: &Matrix<S>,
    upstream: &EmbeddingGrad<S>,
    grads: &mut ParamGrads<S>,
) -> Result<()> {
    let d = params.embed_dim();
    if frames.n_cols() != params.d_in() {
        return Err(Error::shape("frame dimension mismatch in backprop"));
    }
    let t_total = frames.n_rows();
    let inv_t = S::one() / S::from_usize_lossy(t_total);
    match upstream {
        EmbeddingGrad::Pooled(g) if g.len() != d => {
            return Err(Error::shape("pooled gradient length mismatch"));
        }
        EmbeddingGrad::Seq(g) if g.n_rows() != t_total || g.n_cols() != d => {
            return Err(Error::shape("sequence gradient shape mismatch"));
        }
        _ => {}
    }
    let mut masked = vec![S::zero(); d];
    for (t, frame) in frames.rows_iter().enumerate() {
        match upstream {
            EmbeddingGrad::Pooled(g) => {
                for (dst, src) in masked.iter_mut().zip(g) {
                    *dst = *src * inv_t;
                }
            }
            EmbeddingGrad::Seq(g) => masked.copy_from_slice(g.row(t)),
        }
        if params.relu {
            let pre = params.audio_proj.vecmat(frame);
            for (v, p) in masked.iter_mut().zip(&pre) {
                if *p <= S::zero() {
                    *v = S::zero();
                }
            }
        }
        for (a, &x) in frame.iter().enumerate() {
            if x == S::zero() {
                continue;
            }
            let dst = grads.audio_proj.row_mut(a);
            for (g_out, &g) in dst.iter_mut().zip(masked.iter()) {
                *g_out += x * g;
            }
        }
    }
    Ok(())
}

/// Accumulates the gradient of one encoded caption into
/// `grads.token_table`: each token's row receives its upstream share
/// (`g/L` under pooled upstream), with repeated tokens accumulating.
pub fn backprop_text<S: Scalar>(
    params: &ModelParameters<S>,
    tokens: &[u32],
    upstream: &EmbeddingGrad<S>,
    grads: &mut ParamGrads<S>,
) -> Result<()> {
    let d = params.embed_dim();
    let l_total = tokens.len();
    if l_total == 0 {
        return Err(Error::shape("caption with zero tokens in backprop"));
    }
    let inv_l = S::one() / S::from_usize_lossy(l_total);
    match upstream {
        EmbeddingGrad::Pooled(g) if g.len() != d => {
            return Err(Error::shape("pooled gradient length mismatch"));
        }
        EmbeddingGrad::Seq(g) if g.n_rows() != l_total || g.n_cols() != d => {
            return Err(Error::shape("sequence gradient shape mismatch"));
        }
        _ => {}
    }
    let mut share = vec![S::zero(); d];
    for (w, &tok) in tokens.iter().enumerate() {
        let tok = tok as usize;
        if tok >= params.vocab_size() {
            return Err(Error::index(format!("token {tok} outside vocabulary")));
        }
        match upstream {
            EmbeddingGrad::Pooled(g) => {
                for (dst, src) in share.iter_mut().zip(g) {
                    *dst = *src * inv_l;
                }
            }
            EmbeddingGrad::Seq(g) => share.copy_from_slice(g.row(w)),
        }
        if params.relu {
            let pre = params.token_table.row(tok);
            for (v, p) in share.iter_mut().zip(pre) {
                if *p <= S::zero() {
                    *v = S::zero();
                }
            }
        }
        let dst = grads.token_table.row_mut(tok);
        for (g_out, &g) in dst.iter_mut().zip(&share) {
            *g_out += g;
        }
    }
    Ok(())
}
