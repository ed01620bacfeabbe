use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use echolab_core::LabelScheme;

#[derive(Debug, Parser)]
#[command(
    name = "echolab",
    version,
    about = "Label extraction for echocardiogram reports"
)]
pub struct Cli {
    /// Ontology file; the bundled eleven-characteristic ontology by default.
    #[arg(long, global = true)]
    pub ontology: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    RuleCompile,
    Span,
    Bow,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Rules,
    Span,
    Bow,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    SpanE2e,
    SpanMatched,
    Doc,
    DocViaSpans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum SchemeArg {
    #[default]
    Full,
    Simplified,
}

impl From<SchemeArg> for LabelScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Full => LabelScheme::Full,
            SchemeArg::Simplified => LabelScheme::Simplified,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus as JSONL.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// `table2`, `uniform` or a TOML profile file.
        #[arg(long, default_value = "table2")]
        profile: String,
        /// Template file replacing the bundled templates.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate and merge annotation JSONL files.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Drop reports that are too short or mention nothing the rules know.
        #[arg(long)]
        filter: bool,
        /// Rule file used by `--filter`; the demo rules by default.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a train/test split manifest.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Document label counts and span statistics as CSV.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train models on the training part of a split.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Required for every kind except `rule-compile`.
        #[arg(long)]
        seed: Option<u64>,
        /// Rule file for `rule-compile`; the demo rules by default.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// TOML file with optional `[span]`, `[bow]` and `[cnn]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict training to these characteristics.
        #[arg(long = "characteristic")]
        characteristics: Vec<String>,
        #[arg(long, value_enum, default_value_t)]
        scheme: SchemeArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict spans (rules, span) or document labels (bow, cnn).
    Predict {
        #[arg(long, value_enum)]
        kind: ModelKind,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Predict only the test part of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = echolab_core::span::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t)]
        scheme: SchemeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions or models against gold annotations.
    Eval {
        #[arg(value_enum)]
        mode: EvalMode,
        #[arg(long)]
        corpus: PathBuf,
        /// Evaluate only the test part of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<ModelKind>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Span JSONL for `span-e2e`, document label JSON for `doc`.
        #[arg(long, conflicts_with = "models")]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = echolab_core::span::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t)]
        scheme: SchemeArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the header of a model file.
    Describe { model: PathBuf },
}
