//! The experiment grid: trains every configured (strategy, seed) pair,
//! evaluates retrieval in both directions, aggregates per-strategy medians,
//! and renders the summary report as CSV, JSON, or a markdown table.
//!
//! Runs are independent and execute in parallel; results are assembled in
//! the fixed grid order (strategy-major, then seed, then direction), so a
//! rerun of the same config produces byte-identical report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, split_dataset, PairedDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::io::{atomic_write, load_features, save_checkpoint};
use crate::metrics::{evaluate_retrieval, Direction};
use crate::sampling::Strategy;
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig, TrainingHistory};

/// Configuration of a full grid run. `base` supplies the shared training
/// hyperparameters; its `strategy` and `seed` fields are overwritten per
/// run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
    pub synth: SynthConfig,
    /// When set, load this feature file instead of generating data; splits
    /// still vary with the seed.
    pub data_path: Option<PathBuf>,
    /// (dev, val, eval) clip fractions.
    pub fractions: (f64, f64, f64),
    /// When set, per-run logs and checkpoints are written under
    /// `<out_dir>/runs/`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            base: TrainConfig::default(),
            synth: SynthConfig::default(),
            data_path: None,
            fractions: (0.6, 0.2, 0.2),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::config("at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        let mut strats = self.strategies.clone();
        strats.sort_by_key(|s| s.name());
        strats.dedup();
        if strats.len() != self.strategies.len() {
            return Err(Error::config("strategies must be distinct"));
        }
        self.base.validate()
    }
}

/// Whether a report row is one trained run or the per-strategy median.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Result,
    Aggregate,
}

/// One report line: metrics of one (strategy, seed, direction) run, or the
/// seed-median aggregate when `seed` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub strategy: Strategy,
    pub seed: Option<u64>,
    pub direction: Direction,
    pub map: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub r_at_5_query: f64,
    pub r_at_10_query: f64,
    /// For results: the collapse monitor fired in some epoch of the run.
    /// For aggregates: it fired in at least half of the seeds.
    pub collapsed: bool,
}

/// Grid output: all result rows first (grid order), then all aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub rows: Vec<ReportRow>,
}

impl RetrievalReport {
    pub fn results(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Result)
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Aggregate)
    }

    pub fn aggregate(&self, strategy: Strategy, direction: Direction) -> Option<&ReportRow> {
        self.aggregates()
            .find(|r| r.strategy == strategy && r.direction == direction)
    }
}

struct RunOutput<S> {
    strategy: Strategy,
    seed: u64,
    rows: [ReportRow; 2],
    history: TrainingHistory,
    params: crate::encoder::ModelParameters<S>,
    config: TrainConfig,
}

fn run_one<S: Scalar>(
    cfg: &ExperimentConfig,
    loaded: Option<&PairedDataset<S>>,
    strategy: Strategy,
    seed: u64,
) -> Result<RunOutput<S>> {
    let data = match loaded {
        Some(ds) => ds.clone(),
        None => generate_synthetic::<S>(&cfg.synth, seed)?,
    };
    let (dev, val, eval) = split_dataset(&data, cfg.fractions, seed)?;
    let train_cfg = TrainConfig {
        strategy,
        seed,
        ..cfg.base.clone()
    };
    let outcome = train(&train_cfg, &dev, &val)?;
    let collapsed = outcome.history.any_collapse();
    let mut rows = Vec::with_capacity(2);
    for direction in Direction::BOTH {
        let m = evaluate_retrieval(&outcome.params, &eval, train_cfg.score_fn, direction)?;
        rows.push(ReportRow {
            kind: RowKind::Result,
            strategy,
            seed: Some(seed),
            direction,
            map: m.map,
            r_at_5: m.r_at[&5],
            r_at_10: m.r_at[&10],
            r_at_5_query: m.r_at_query[&5],
            r_at_10_query: m.r_at_query[&10],
            collapsed,
        });
    }
    let rows: [ReportRow; 2] = rows.try_into().expect("two directions");
    Ok(RunOutput {
        strategy,
        seed,
        rows,
        history: outcome.history,
        params: outcome.params,
        config: train_cfg,
    })
}

/// Median of a non-empty list; even lengths average the two middle values.
fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are comparable"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the full grid and returns the report. With `out_dir` set, also
/// writes one epoch-log (JSON lines) and one checkpoint per run under
/// `<out_dir>/runs/`.
pub fn run_experiment<S: Scalar>(cfg: &ExperimentConfig) -> Result<RetrievalReport> {
    cfg.validate()?;
    let loaded: Option<PairedDataset<S>> = match &cfg.data_path {
        Some(p) => Some(load_features(p)?),
        None => None,
    };

    let specs: Vec<(Strategy, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&k| (s, k)))
        .collect();
    let outputs: Vec<Result<RunOutput<S>>> = specs
        .par_iter()
        .map(|&(strategy, seed)| run_one(cfg, loaded.as_ref(), strategy, seed))
        .collect();
    let mut runs = Vec::with_capacity(outputs.len());
    for out in outputs {
        runs.push(out?);
    }

    let mut rows: Vec<ReportRow> = runs.iter().flat_map(|r| r.rows.clone()).collect();
    for &strategy in &cfg.strategies {
        for direction in Direction::BOTH {
            let picked: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| {
                    r.kind == RowKind::Result && r.strategy == strategy && r.direction == direction
                })
                .collect();
            let n = picked.len();
            let collapsed_count = picked.iter().filter(|r| r.collapsed).count();
            let field = |f: fn(&ReportRow) -> f64| median(picked.iter().map(|r| f(r)).collect());
            rows.push(ReportRow {
                kind: RowKind::Aggregate,
                strategy,
                seed: None,
                direction,
                map: field(|r| r.map),
                r_at_5: field(|r| r.r_at_5),
                r_at_10: field(|r| r.r_at_10),
                r_at_5_query: field(|r| r.r_at_5_query),
                r_at_10_query: field(|r| r.r_at_10_query),
                collapsed: collapsed_count * 2 >= n,
            });
        }
    }
    // Keep results first, aggregates after, each in grid order.
    rows.sort_by_key(|r| matches!(r.kind, RowKind::Aggregate));
    let report = RetrievalReport { rows };

    if let Some(out_dir) = &cfg.out_dir {
        let runs_dir = out_dir.join("runs");
        std::fs::create_dir_all(&runs_dir)?;
        for run in &runs {
            let stem = format!("{}_seed{}", run.strategy, run.seed);
            let mut log = String::new();
            for e in &run.history.epochs {
                let _ = writeln!(
                    log,
                    "{}",
                    serde_json::to_string(e).expect("record serializes")
                );
            }
            let _ = writeln!(
                log,
                "{}",
                serde_json::to_string(&serde_json::json!({
                    "best_epoch": run.history.best_epoch,
                    "stopped_epoch": run.history.stopped_epoch,
                }))
                .expect("trailer serializes")
            );
            atomic_write(&runs_dir.join(format!("{stem}.log.jsonl")), log.as_bytes())?;
            let config = serde_json::to_value(&run.config).expect("config serializes");
            save_checkpoint(
                &run.params,
                run.seed,
                &config,
                &runs_dir.join(format!("{stem}.ckpt.jsonl")),
            )?;
        }
    }
    Ok(report)
}

/// Report serialization formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC 4180 rendering: one row per report line, CRLF line endings.
pub fn to_csv(report: &RetrievalReport) -> String {
    let mut out = String::new();
    out.push_str(
        "kind,strategy,seed,direction,map,r_at_5,r_at_10,r_at_5_query,r_at_10_query,collapsed\r\n",
    );
    for r in &report.rows {
        let kind = match r.kind {
            RowKind::Result => "result",
            RowKind::Aggregate => "aggregate",
        };
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}\r\n",
            csv_field(kind),
            csv_field(r.strategy.name()),
            seed,
            csv_field(r.direction.name()),
            r.map,
            r.r_at_5,
            r.r_at_10,
            r.r_at_5_query,
            r.r_at_10_query,
            r.collapsed,
        );
    }
    out
}

/// JSON rendering: the row array, pretty-printed.
pub fn to_json(report: &RetrievalReport) -> String {
    let mut s = serde_json::to_string_pretty(&report.rows).expect("report serializes");
    s.push('\n');
    s
}

/// Markdown rendering of the aggregate rows: one row per strategy, both
/// directions side by side, mirroring the summary-table layout
/// (mAP / R@5 / R@10 per direction, strategies grouped into the two
/// baseline selections and the score-based family).
pub fn to_markdown(report: &RetrievalReport) -> String {
    let mut out = String::new();
    out.push_str(
        "| Group | Strategy | T2A mAP | T2A R@5 | T2A R@10 | A2T mAP | A2T R@5 | A2T R@10 |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    let strategies: Vec<Strategy> = {
        let mut seen = Vec::new();
        for r in report.aggregates() {
            if !seen.contains(&r.strategy) {
                seen.push(r.strategy);
            }
        }
        seen
    };
    let mut last_group = "";
    for strategy in strategies {
        let t2a = report.aggregate(strategy, Direction::TextToAudio);
        let a2t = report.aggregate(strategy, Direction::AudioToText);
        let (Some(t2a), Some(a2t)) = (t2a, a2t) else {
            continue;
        };
        let group = if strategy.category() == last_group {
            ""
        } else {
            last_group = strategy.category();
            last_group
        };
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            group,
            strategy.name(),
            t2a.map,
            t2a.r_at_5,
            t2a.r_at_10,
            a2t.map,
            a2t.r_at_5,
            a2t.r_at_10,
        );
    }
    out
}

pub fn render_report(report: &RetrievalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
        ReportFormat::Markdown => to_markdown(report),
    }
}

/// Writes `report.<ext>` under `dir` for the given format.
pub fn emit_report(report: &RetrievalReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("report.{}", format.extension()));
    atomic_write(&path, render_report(report, format).as_bytes())?;
    Ok(path)
}
