use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use int4q::quant::Method;

#[derive(Debug, Parser)]
#[command(name = "int4q", version, about = "4-bit weight-only quantization pipeline")]
pub struct Cli {
    /// key=value settings file; explicit flags take precedence.
    #[arg(long, global = true, env = "INT4Q_CONFIG")]
    pub config: Option<PathBuf>,

    /// Named settings bundle. `group64-seq512` selects group size 64 with
    /// 512-token windows.
    #[arg(long, global = true)]
    pub preset: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a freshly initialized toy model.
    GenModel(GenModelArgs),
    /// Record per-layer calibration activations.
    Calibrate(CalibrateArgs),
    /// Quantize a model, or every FP32 matrix of a tensor file.
    Quantize(QuantizeArgs),
    /// Perplexity and next-token accuracy on a corpus.
    Eval(EvalArgs),
    /// Latency, throughput, memory and quality of one model.
    Bench(BenchArgs),
    /// Compare two bench reports.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the synthetic corpus here.
    #[arg(long)]
    pub corpus_out: Option<PathBuf>,
    /// Corpus length in symbols.
    #[arg(long)]
    pub corpus_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, env = "INT4Q_MODEL")]
    pub model: Option<PathBuf>,
    /// Text corpus; the bundled corpus when omitted.
    #[arg(long, env = "INT4Q_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Activation rows kept per layer.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rtn,
    Gsq,
    Gptq,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rtn => Method::Rtn,
            MethodArg::Gsq => Method::Gsq,
            MethodArg::Gptq => Method::Gptq,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long, env = "INT4Q_MODEL")]
    pub model: Option<PathBuf>,
    /// Calibration file from `calibrate`; required for gsq and gptq.
    #[arg(long, env = "INT4Q_CALIB")]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Only 4 is supported.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Comma-separated GSQ exponents.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    #[arg(long)]
    pub damping: Option<f32>,
    #[arg(long)]
    pub clip_search: bool,
    /// JSON summary with per-layer errors and the quantization wall time.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "INT4Q_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "INT4Q_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Evaluate at most this many tokens.
    #[arg(long)]
    pub eval_tokens: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, env = "INT4Q_MODEL")]
    pub model: Option<PathBuf>,
    /// FP32 model for per-layer weight error.
    #[arg(long, env = "INT4Q_BASELINE")]
    pub baseline: Option<PathBuf>,
    #[arg(long, env = "INT4Q_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Summary written by `quantize`, for the setup time.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub gen_tokens: Option<usize>,
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub eval_tokens: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub pre: Option<PathBuf>,
    #[arg(long)]
    pub post: Option<PathBuf>,
    /// Write the comparison as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}
