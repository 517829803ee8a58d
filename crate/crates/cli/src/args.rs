use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "medvlm", version, about = "Train, benchmark and evaluate small vision-language models")]
pub struct Cli {
    /// Log level (error, warn, info, debug); RUST_LOG overrides it.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the staged training curriculum from a TOML config.
    Train(TrainArgs),
    /// Build a benchmark file from source data.
    BuildBench(BuildBenchArgs),
    /// Decode every benchmark instance once and score the answers.
    Eval(EvalArgs),
    /// Re-score an eval results file.
    Score(ScoreArgs),
    /// Report-generation metrics over paired prediction and reference files.
    Metrics(MetricsArgs),
    /// Look for evaluation instances that also occur in training data.
    CheckOverlap(OverlapArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML). Relative dataset paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of pretrain,midtrain,instruct; overrides `stages`.
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<String>>,
    /// Continue after the last stage whose checkpoint exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchTask {
    Subjects,
    PatientTrial,
    Impression,
    /// Synthetic image questions for the toy model.
    Toy,
}

impl BenchTask {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchTask::Subjects => "subjects",
            BenchTask::PatientTrial => "patient-trial",
            BenchTask::Impression => "impression",
            BenchTask::Toy => "toy",
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildBenchArgs {
    #[arg(long, value_enum)]
    pub task: BenchTask,
    /// Seed for option shuffles and exemplar draws.
    #[arg(long)]
    pub seed: u64,
    /// Output directory for bench.jsonl, build_report.json and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// In-context exemplars per instance (0 or 1).
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    /// subjects: line-delimited benchmark records carrying subject tags.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// subjects: `mmlu-med`, `mmmu-med`, or a comma-separated subject list.
    #[arg(long)]
    pub subjects: Option<String>,
    /// patient-trial: line-delimited {patient_id, text} notes.
    #[arg(long)]
    pub notes: Option<PathBuf>,
    /// patient-trial: line-delimited trial documents.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// patient-trial: qrels (patient, [iteration,] trial, grade).
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// impression: CSV with study_id,image.
    #[arg(long)]
    pub studies: Option<PathBuf>,
    /// impression: CSV with study_id,impression.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// impression: directory the image column is relative to.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// toy: number of questions.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark file (line-delimited instances).
    #[arg(long)]
    pub bench: PathBuf,
    /// Chat-completions base URL, `local:CHECKPOINT`, or `scripted:SHEET.json`.
    #[arg(long)]
    pub endpoint: String,
    /// Registered chat template id.
    #[arg(long, default_value = "medvlm-chat")]
    pub template: String,
    /// Extra templates (TOML with [[template]] tables).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 2048)]
    pub max_new_tokens: usize,
    /// Stop sequence; repeat for several.
    #[arg(long)]
    pub stop: Vec<String>,
    /// Model name sent to the endpoint.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Retries after transport failures (never after a completed response).
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 500)]
    pub retry_backoff_ms: u64,
    /// Directory image references resolve against; defaults to the benchmark's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Continue an interrupted run in --out.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// results.jsonl from eval.
    #[arg(long)]
    pub results: PathBuf,
    /// Score summary (JSON); defaults to score.json beside the results.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted reports: {report_id, text?, entities?} per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference reports, same format.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// radgraph, rate, bleu or radcliq.
    #[arg(long)]
    pub metric: String,
    /// Output file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Similarity threshold for rate.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Composite intercept (placeholder default).
    #[arg(long, default_value_t = 0.0)]
    pub w0: f64,
    /// Composite graph weight (placeholder default).
    #[arg(long, default_value_t = 1.0)]
    pub w1: f64,
    /// Composite n-gram weight (placeholder default).
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Training data (line-delimited; question, prompt and text fields and images are indexed). Repeatable.
    #[arg(long, required = true)]
    pub train: Vec<PathBuf>,
    /// Benchmark file to check.
    #[arg(long)]
    pub eval: PathBuf,
    /// Directory benchmark image references resolve against; defaults to the benchmark's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Overlap report (JSON).
    #[arg(long)]
    pub out: PathBuf,
}
