//! `nslab` — command-line front end for the negative-sampling laboratory.
//!
//! `nslab run` trains the configured strategy-by-seed grid on synthetic or
//! file-backed data, writes report files, and prints the markdown summary
//! table to stdout. `nslab gen` writes a synthetic paired dataset in the
//! NSLAB-JL feature format.
//!
//! Exit codes: 0 on success, 1 on configuration errors (including bad
//! flags and malformed data files), 2 on I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nslab_core::data::{generate_synthetic, SynthConfig};
use nslab_core::experiment::{
    emit_report, run_experiment, ExperimentConfig, ReportFormat, RetrievalReport,
};
use nslab_core::io::write_features;
use nslab_core::train::TrainConfig;
use nslab_core::{Error, Real, Result, ScoreFn, Strategy};

#[derive(Parser)]
#[command(
    name = "nslab",
    version,
    about = "Contrastive dual-encoder training with pluggable negative sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the strategy-by-seed grid and report retrieval metrics.
    Run(Box<RunArgs>),
    /// Generate a synthetic paired dataset file (NSLAB-JL).
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Sampling strategy to include; repeat for several (default: all 8).
    #[arg(long = "strategy", value_name = "NAME")]
    strategies: Vec<Strategy>,

    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,

    /// Maximum training epochs.
    #[arg(long, default_value_t = 120)]
    epochs: usize,

    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,

    /// Triplet-loss margin.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,

    /// Relevance function: dot, cosine, or mean_max_align.
    #[arg(long, default_value = "dot")]
    score_fn: ScoreFn,

    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,

    /// Embedding dimension of both encoders.
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,

    /// Apply ReLU after each encoder projection.
    #[arg(long)]
    relu: bool,

    /// Epochs without improvement before the learning rate is reduced.
    #[arg(long, default_value_t = 5)]
    plateau_patience: usize,

    /// Learning-rate reduction factor on plateau.
    #[arg(long, default_value_t = 0.1)]
    plateau_factor: f64,

    /// Epochs without improvement before training stops.
    #[arg(long, default_value_t = 10)]
    early_stop_patience: usize,

    /// Train on this NSLAB-JL feature file instead of synthetic data.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic_clips")]
    data: Option<PathBuf>,

    /// Number of synthetic clips to generate per seed.
    #[arg(long, value_name = "N", default_value_t = 200)]
    synthetic_clips: usize,

    /// Number of latent topics in the synthetic data.
    #[arg(long, default_value_t = 40)]
    topics: usize,

    /// Output directory for reports, logs, and checkpoints.
    #[arg(long, value_name = "DIR", default_value = "nslab-out")]
    out: PathBuf,

    /// Report files to write.
    #[arg(long, value_enum, default_value_t = OutputFormat::All)]
    format: OutputFormat,
}

#[derive(Args)]
struct GenArgs {
    /// Output file path.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,

    /// Number of clips.
    #[arg(long, default_value_t = 200)]
    clips: usize,

    /// Captions per clip.
    #[arg(long, default_value_t = 5)]
    captions_per_clip: usize,

    /// Number of latent topics.
    #[arg(long, default_value_t = 40)]
    topics: usize,

    /// Frame feature dimension.
    #[arg(long, default_value_t = 8)]
    d_in: usize,

    /// Vocabulary size.
    #[arg(long, default_value_t = 240)]
    vocab: usize,

    /// Inclusive frames-per-clip range, as MIN,MAX.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2, 4])]
    frames: Vec<usize>,

    /// Inclusive tokens-per-caption range, as MIN,MAX.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [3, 8])]
    tokens: Vec<usize>,

    /// Frame noise scale around the topic prototype.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,

    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
    Markdown,
    All,
}

impl OutputFormat {
    fn formats(self) -> Vec<ReportFormat> {
        match self {
            OutputFormat::Csv => vec![ReportFormat::Csv],
            OutputFormat::Json => vec![ReportFormat::Json],
            OutputFormat::Markdown => vec![ReportFormat::Markdown],
            OutputFormat::All => vec![
                ReportFormat::Csv,
                ReportFormat::Json,
                ReportFormat::Markdown,
            ],
        }
    }
}

fn run(args: RunArgs) -> Result<RetrievalReport> {
    let strategies = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies.clone()
    };
    let cfg = ExperimentConfig {
        strategies,
        seeds: args.seeds.clone(),
        base: TrainConfig {
            score_fn: args.score_fn,
            embed_dim: args.embed_dim,
            relu: args.relu,
            batch_size: args.batch_size,
            max_epochs: args.epochs,
            lr: args.lr,
            plateau_factor: args.plateau_factor,
            plateau_patience: args.plateau_patience,
            early_stop_patience: args.early_stop_patience,
            margin: args.margin,
            ..TrainConfig::default()
        },
        synth: SynthConfig {
            n_clips: args.synthetic_clips,
            n_topics: args.topics,
            ..SynthConfig::default()
        },
        data_path: args.data.clone(),
        out_dir: Some(args.out.clone()),
        ..ExperimentConfig::default()
    };
    let report = run_experiment::<Real>(&cfg)?;
    for format in args.format.formats() {
        emit_report(&report, format, &args.out)?;
    }
    Ok(report)
}

fn gen(args: GenArgs) -> Result<String> {
    let cfg = SynthConfig {
        n_clips: args.clips,
        captions_per_clip: args.captions_per_clip,
        n_topics: args.topics,
        d_in: args.d_in,
        vocab_size: args.vocab,
        frames_range: (args.frames[0], args.frames[1]),
        tokens_range: (args.tokens[0], args.tokens[1]),
        noise_scale: args.noise,
    };
    let ds = generate_synthetic::<Real>(&cfg, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_features(&ds, &args.out)?;
    Ok(format!(
        "wrote {} clips, {} captions to {}",
        ds.n_clips(),
        ds.n_captions(),
        args.out.display()
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(*args).map(|report| {
            print!("{}", nslab_core::experiment::to_markdown(&report));
        }),
        Command::Gen(args) => gen(args).map(|summary| {
            println!("{summary}");
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
