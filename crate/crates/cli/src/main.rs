//! `cal`: generate, train, index, search, evaluate and benchmark.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cal",
    version,
    about = "Natural-language moment retrieval over video corpora by clip alignment"
)]
pub struct Cli {
    /// Seed for every random choice; echoed into each artifact.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for index, search, baseline and eval (training ignores it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted ground truth.
    Gen(GenArgs),
    /// Train an alignment model from scratch.
    Train(TrainArgs),
    /// Embed every clip and build a clip index.
    Index(IndexArgs),
    /// Rank moments for each query.
    Search(SearchArgs),
    /// Fine-tune a re-ranker on negatives drawn from retrieved lists.
    RetrainRerank(RetrainArgs),
    /// Score a results file against ground truth.
    Eval(EvalArgs),
    /// Distance counts, timings and index sizes per retrieval method.
    Bench(BenchArgs),
    /// Rank with chance, the moment prior, or an endpoint-only model.
    Baseline(BaselineArgs),
    /// Inspect written reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Print a report file.
    Show {
        /// Report written by `eval` or `bench`.
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Didemo,
    CharadesSta,
    Activitynet,
}

impl From<PresetArg> for cal_core::Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Didemo => cal_core::Preset::Didemo,
            PresetArg::CharadesSta => cal_core::Preset::CharadesSta,
            PresetArg::Activitynet => cal_core::Preset::Activitynet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    pub fn select(self) -> Option<cal_core::io::Split> {
        match self {
            SplitArg::Train => Some(cal_core::io::Split::Train),
            SplitArg::Test => Some(cal_core::io::Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Cal,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlavorArg {
    Exact,
    Ivf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exhaustive,
    TwoStage,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageOneArg {
    Clips,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Chance,
    MomentPrior,
    TefOnly,
}

/// A count, or `all` for every clip in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    All,
    Count(usize),
}

fn parse_budget(s: &str) -> Result<Budget, String> {
    if s == "all" {
        return Ok(Budget::All);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive count or `all`, got {s:?}")),
        Ok(n) => Ok(Budget::Count(n)),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Synthetic spec (JSON, or TOML by extension); defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory holding manifest.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    /// Config with `[train]` and `[model]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output checkpoint; the epoch log goes to `<out>.log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Query file; defaults to the corpus query file.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Append temporal endpoint features to the visual input.
    #[arg(long)]
    pub tef: bool,
    /// Feed only the temporal endpoints to the visual head.
    #[arg(long)]
    pub tef_only: bool,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub flavor: FlavorArg,
    /// Output index; settings go to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Inverted-file partitions; `ceil(sqrt(clips))` when omitted.
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub kmeans_iters: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Clip index; required by two-stage (exact) and approx (ivf).
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Second-stage model; defaults to `--ckpt`.
    #[arg(long)]
    pub rerank_ckpt: Option<PathBuf>,
    /// Query file; defaults to the corpus query file.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "exhaustive")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Results file; counters go to `<out>.stats.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the checkpoint's preset.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, value_enum, default_value = "clips")]
    pub stage_one: StageOneArg,
    /// Moments kept by a moment-level stage one; at least `--top-k`.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Clips fetched from the index, or `all`.
    #[arg(long, value_parser = parse_budget, default_value = "200")]
    pub clip_budget: Budget,
    /// Inverted-file partitions probed per query.
    #[arg(long, default_value_t = 8)]
    pub nprobe: usize,
    /// Also consider moments starting or ending next to a retrieved clip.
    #[arg(long)]
    pub dilate: bool,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long)]
    pub base: PathBuf,
    /// Results of searching the training queries with the base model.
    #[arg(long)]
    pub retrievals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Config with a `[train]` section; defaults to the base checkpoint's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Defaults to the base checkpoint's preset.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Query file carrying ground-truth spans.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    /// Rankings restricted to each query's own video.
    #[arg(long)]
    pub single_video: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Adds oracle recall over the corpus candidates.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Overrides the preset's judgment rule.
    #[arg(long)]
    pub min_judgments: Option<usize>,
    /// Recall cut-offs, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "single_video")]
    pub ks: Option<Vec<usize>>,
    /// IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "single_video")]
    pub ious: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bench spec (JSON, or TOML by extension); defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated subset of cal, aggregate, two-stage, approx.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<cal_bench::Method>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one CSV row per method.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineArg,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Endpoint-only checkpoint, for `tef-only`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Queries the prior is fitted on (their training split); defaults to `--queries`.
    #[arg(long)]
    pub prior_queries: Option<PathBuf>,
    /// Histogram bins per endpoint for the prior.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(ce) = cause.downcast_ref::<cal_core::Error>() {
            return ce.code();
        }
        if cause.is::<std::io::Error>() {
            return "E_IO";
        }
        if cause.is::<serde_json::Error>() || cause.is::<toml::de::Error>() {
            return "E_CONFIG";
        }
    }
    "E_USAGE"
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The cause chain on one line, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    one_line(&out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {}", one_line(msg));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", error_code(&e), message(&e));
            ExitCode::FAILURE
        }
    }
}
