//! NSLAB-JL line-delimited JSON files: paired-feature datasets and parameter
//! checkpoints.
//!
//! A feature file is UTF-8 with one JSON object per line. The first line is a
//! header `{"format":"NSLAB-JL","version":1,"d_in":N,"vocab_size":V}`; the
//! remaining lines are clip records `{"type":"clip","clip_id":id,
//! "frames":[[f,...],...]}` and caption records `{"type":"caption",
//! "caption_id":id,"clip_id":id,"tokens":[t,...]}`. Floats are written with 9
//! significant digits; every value the synthetic generator emits is already
//! rounded to that precision, so write-then-load is the identity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::data::{Caption, Clip, PairedDataset, SplitTag};
use crate::encoder::ModelParameters;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const FEATURE_FORMAT: &str = "NSLAB-JL";
pub const CHECKPOINT_FORMAT: &str = "NSLAB-CKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Formats a float with 9 significant digits (scientific notation).
pub fn format_sig9(x: f64) -> String {
    debug_assert!(x.is_finite());
    format!("{x:.8e}")
}

/// Rounds a value to the feature-file precision of 9 significant digits.
pub fn quantize_sig9(x: f64) -> f64 {
    format_sig9(x).parse().expect("sig9 output reparses")
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Deserialize)]
struct FeatureHeader {
    format: String,
    version: u32,
    d_in: usize,
    vocab_size: usize,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FeatureRecord {
    Clip {
        clip_id: u64,
        frames: Vec<Vec<f64>>,
    },
    Caption {
        caption_id: u64,
        clip_id: u64,
        tokens: Vec<u32>,
    },
}

/// Serializes a dataset to the NSLAB-JL feature format.
pub fn write_features<S: Scalar>(ds: &PairedDataset<S>, path: &Path) -> Result<()> {
    atomic_write(path, features_to_string(ds).as_bytes())
}

/// Renders a dataset as NSLAB-JL text (clip lines first, then captions).
pub fn features_to_string<S: Scalar>(ds: &PairedDataset<S>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{{\"format\":\"{FEATURE_FORMAT}\",\"version\":{FORMAT_VERSION},\"d_in\":{},\"vocab_size\":{}}}",
        ds.d_in, ds.vocab_size
    );
    for clip in &ds.clips {
        let frames = clip
            .frames
            .rows_iter()
            .map(|row| {
                let vals = row
                    .iter()
                    .map(|v| format_sig9(v.as_f64()))
                    .collect::<Vec<_>>()
                    .join(",");
                format!("[{vals}]")
            })
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            out,
            "{{\"type\":\"clip\",\"clip_id\":{},\"frames\":[{frames}]}}",
            clip.clip_id
        );
    }
    for cap in &ds.captions {
        let tokens = cap
            .tokens
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            out,
            "{{\"type\":\"caption\",\"caption_id\":{},\"clip_id\":{},\"tokens\":[{tokens}]}}",
            cap.caption_id, cap.clip_id
        );
    }
    out
}

/// Loads a dataset from an NSLAB-JL feature file. Parse failures report the
/// 1-based line number; the pairing is reconstructed from caption records in
/// file order.
pub fn load_features<S: Scalar>(path: &Path) -> Result<PairedDataset<S>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file, expected header"))?;
    let header: FeatureHeader = serde_json::from_str(&header_line?)
        .map_err(|e| Error::parse(1, format!("bad header: {e}")))?;
    if header.format != FEATURE_FORMAT {
        return Err(Error::parse(
            1,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::parse(
            1,
            format!("unsupported version {}", header.version),
        ));
    }

    let mut clips: Vec<Clip<S>> = Vec::new();
    let mut captions: Vec<Caption> = Vec::new();
    let mut caption_lines: Vec<usize> = Vec::new();
    let mut clip_ids: HashMap<u64, usize> = HashMap::new();
    let mut caption_ids: HashMap<u64, usize> = HashMap::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord = serde_json::from_str(&text)
            .map_err(|e| Error::parse(line_no, format!("malformed record: {e}")))?;
        match record {
            FeatureRecord::Clip { clip_id, frames } => {
                if frames.is_empty() {
                    return Err(Error::parse(
                        line_no,
                        format!("clip {clip_id} has no frames"),
                    ));
                }
                if frames.iter().any(|row| row.len() != header.d_in) {
                    return Err(Error::parse(
                        line_no,
                        format!(
                            "clip {clip_id} frame dimension != header d_in {}",
                            header.d_in
                        ),
                    ));
                }
                if clip_ids.insert(clip_id, line_no).is_some() {
                    return Err(Error::parse(
                        line_no,
                        format!("duplicate clip_id {clip_id}"),
                    ));
                }
                let rows = frames
                    .into_iter()
                    .map(|row| row.into_iter().map(S::from_f64_lossy).collect())
                    .collect();
                clips.push(Clip {
                    clip_id,
                    frames: Matrix::from_rows(rows),
                });
            }
            FeatureRecord::Caption {
                caption_id,
                clip_id,
                tokens,
            } => {
                if tokens.is_empty() {
                    return Err(Error::parse(
                        line_no,
                        format!("caption {caption_id} has no tokens"),
                    ));
                }
                if let Some(&t) = tokens.iter().find(|&&t| t as usize >= header.vocab_size) {
                    return Err(Error::parse(
                        line_no,
                        format!(
                            "caption {caption_id} token {t} outside vocabulary of size {}",
                            header.vocab_size
                        ),
                    ));
                }
                if caption_ids.insert(caption_id, line_no).is_some() {
                    return Err(Error::parse(
                        line_no,
                        format!("duplicate caption_id {caption_id}"),
                    ));
                }
                captions.push(Caption {
                    caption_id,
                    clip_id,
                    tokens,
                });
                caption_lines.push(line_no);
            }
        }
    }

    for (cap, &line_no) in captions.iter().zip(&caption_lines) {
        if !clip_ids.contains_key(&cap.clip_id) {
            return Err(Error::parse(
                line_no,
                format!(
                    "caption {} references missing clip_id {}",
                    cap.caption_id, cap.clip_id
                ),
            ));
        }
    }

    let pairs = captions.iter().map(|c| (c.clip_id, c.caption_id)).collect();
    let ds = PairedDataset {
        clips,
        captions,
        pairs,
        split_tag: SplitTag::Full,
        d_in: header.d_in,
        vocab_size: header.vocab_size,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    d: usize,
    d_in: usize,
    vocab_size: usize,
    relu: bool,
    seed: u64,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum CheckpointRecord {
    TokenTable {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    AudioProj {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
}

/// Renders model parameters as an NSLAB-CKPT line file. Matrices are written
/// row-major at full float precision; the header carries the seed and the
/// caller's config for provenance.
pub fn checkpoint_to_string<S: Scalar>(
    params: &ModelParameters<S>,
    seed: u64,
    config: &serde_json::Value,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{{\"format\":\"{CHECKPOINT_FORMAT}\",\"version\":{FORMAT_VERSION},\"d\":{},\"d_in\":{},\"vocab_size\":{},\"relu\":{},\"seed\":{},\"config\":{}}}",
        params.embed_dim(),
        params.d_in(),
        params.vocab_size(),
        params.relu,
        seed,
        serde_json::to_string(config).expect("config serializes"),
    );
    for (tag, m) in [
        ("token_table", &params.token_table),
        ("audio_proj", &params.audio_proj),
    ] {
        let data = m
            .as_slice()
            .iter()
            .map(|v| serde_json::to_string(&v.as_f64()).expect("float serializes"))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(
            out,
            "{{\"type\":\"{tag}\",\"rows\":{},\"cols\":{},\"data\":[{data}]}}",
            m.n_rows(),
            m.n_cols()
        );
    }
    out
}

pub fn save_checkpoint<S: Scalar>(
    params: &ModelParameters<S>,
    seed: u64,
    config: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    atomic_write(path, checkpoint_to_string(params, seed, config).as_bytes())
}

/// Loads a checkpoint, returning the parameters, the stored seed, and the
/// provenance config value.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
) -> Result<(ModelParameters<S>, u64, serde_json::Value)> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file, expected header"))?;
    let header: CheckpointHeader = serde_json::from_str(&header_line?)
        .map_err(|e| Error::parse(1, format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::parse(
            1,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::parse(
            1,
            format!("unsupported version {}", header.version),
        ));
    }

    let mut token_table: Option<Matrix<S>> = None;
    let mut audio_proj: Option<Matrix<S>> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: CheckpointRecord = serde_json::from_str(&text)
            .map_err(|e| Error::parse(line_no, format!("malformed record: {e}")))?;
        let (slot, rows, cols, data, expect_rows, expect_cols) = match record {
            CheckpointRecord::TokenTable { rows, cols, data } => (
                &mut token_table,
                rows,
                cols,
                data,
                header.vocab_size,
                header.d,
            ),
            CheckpointRecord::AudioProj { rows, cols, data } => {
                (&mut audio_proj, rows, cols, data, header.d_in, header.d)
            }
        };
        if rows != expect_rows || cols != expect_cols {
            return Err(Error::parse(
                line_no,
                format!("matrix is {rows}x{cols}, header implies {expect_rows}x{expect_cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::parse(
                line_no,
                format!("matrix data length {} != {rows}x{cols}", data.len()),
            ));
        }
        if slot.is_some() {
            return Err(Error::parse(line_no, "duplicate matrix record"));
        }
        let mut m = Matrix::zeros(rows, cols);
        for (dst, src) in m.as_mut_slice().iter_mut().zip(&data) {
            *dst = S::from_f64_lossy(*src);
        }
        *slot = Some(m);
    }

    let token_table = token_table.ok_or_else(|| Error::parse(1, "missing token_table record"))?;
    let audio_proj = audio_proj.ok_or_else(|| Error::parse(1, "missing audio_proj record"))?;
    let params = ModelParameters {
        token_table,
        audio_proj,
        relu: header.relu,
    };
    Ok((params, header.seed, header.config))
}
