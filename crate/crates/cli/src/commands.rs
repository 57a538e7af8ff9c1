use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use int4q::bench::{compare_report, run_bench, BenchReport, BenchSettings, Comparison, MonotonicClock};
use int4q::io::write_atomic;
use int4q::kernels::LayerWeights;
use int4q::matrix::fnv1a;
use int4q::model::{
    build_model, calibration_from_entries, calibration_to_entries, capture_calibration, evaluate, layer_entries,
    quantize_layers, quantize_model, synthetic_corpus, tokenize, LayerReport, ToyTransformer, ToyTransformerConfig,
    BUNDLED_CORPUS,
};
use int4q::quant::QuantConfig;
use int4q::tensor_file::{encode_tensor_file, read_tensor_file, TensorData, TensorEntry};
use int4q::CalibrationSet;
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, CalibrateArgs, Cli, Command, CompareArgs, EvalArgs, Format, GenModelArgs, QuantizeArgs};
use crate::settings::{ConfigFile, Overrides, Settings};
use crate::{CliError, UsageError};

type Result<T> = std::result::Result<T, CliError>;

/// Written by `quantize --summary`.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct QuantSummary {
    method: String,
    group_size: usize,
    /// Wall time of the quantization itself, excluding file I/O.
    setup_ms: f64,
    layers: Vec<LayerReport>,
}

pub(crate) fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut o = Overrides::default();
    match &cli.command {
        Command::GenModel(a) => {
            o.seed = a.seed;
            o.corpus_len = a.corpus_len;
        }
        Command::Calibrate(a) => {
            o.samples = a.samples;
            o.seed = a.seed;
            o.window = a.window;
        }
        Command::Quantize(a) => {
            o.method = a.method.map(Into::into);
            o.group_size = a.group_size;
            o.bits = a.bits;
            o.alpha_grid = a.alpha_grid.clone();
            o.damping = a.damping;
            o.clip_search = a.clip_search.then_some(true);
        }
        Command::Eval(a) => {
            o.window = a.window;
            o.eval_tokens = a.eval_tokens;
        }
        Command::Bench(a) => {
            o.runs = a.runs;
            o.warmup = a.warmup;
            o.gen_tokens = a.gen_tokens;
            o.prompts = a.prompts;
            o.prompt_len = a.prompt_len;
            o.window = a.window;
            o.eval_tokens = a.eval_tokens;
        }
        Command::Compare(_) => {}
    }
    let settings = Settings::resolve(o, cli.preset.as_deref(), &config)?;
    match &cli.command {
        Command::GenModel(a) => gen_model(a, &settings, out),
        Command::Calibrate(a) => calibrate(a, &settings, out),
        Command::Quantize(a) => quantize(a, &settings, out),
        Command::Eval(a) => eval(a, &settings, out),
        Command::Bench(a) => bench(a, &settings, out),
        Command::Compare(a) => compare(a, out),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, UsageError> {
    p.as_deref().ok_or_else(|| UsageError(format!("--{flag} is required")))
}

/// Refuses to overwrite any input file.
fn check_output(out: &Path, inputs: &[Option<&Path>]) -> std::result::Result<(), UsageError> {
    let Ok(o) = out.canonicalize() else { return Ok(()) };
    for input in inputs.iter().flatten() {
        if input.canonicalize().is_ok_and(|i| i == o) {
            return Err(UsageError(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_entries(path: &Path, entries: &[TensorEntry]) -> Result<String> {
    let bytes = encode_tensor_file(entries).context("encoding tensor file")?;
    write_file(path, &bytes)?;
    Ok(format!("{:016x}", fnv1a(&bytes)))
}

fn read_entries(path: &Path) -> Result<Vec<TensorEntry>> {
    Ok(read_tensor_file(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_model(path: &Path) -> Result<ToyTransformer> {
    let entries = read_entries(path)?;
    Ok(ToyTransformer::from_entries(&entries).with_context(|| format!("loading model {}", path.display()))?)
}

fn load_tokens(path: Option<&Path>) -> Result<Vec<u32>> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading corpus {}", p.display()))?,
        None => BUNDLED_CORPUS.to_string(),
    };
    let what = path.map_or_else(|| "bundled corpus".to_string(), |p| p.display().to_string());
    Ok(tokenize(&text).with_context(|| format!("tokenizing {what}"))?)
}

fn gen_model(a: &GenModelArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let path = required(&a.out, "out")?;
    let config = ToyTransformerConfig::with_seed(s.seed);
    let model = build_model(&config).context("building model")?;
    let digest = write_entries(path, &model.to_entries())?;
    let _ = writeln!(out, "wrote {} ({} parameters, digest {digest})", path.display(), config.param_count());
    if let Some(c) = &a.corpus_out {
        write_file(c, synthetic_corpus(s.seed, s.corpus_len).as_bytes())?;
        let _ = writeln!(out, "wrote {} ({} symbols)", c.display(), s.corpus_len);
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let model_path = required(&a.model, "model")?;
    let path = required(&a.out, "out")?;
    check_output(path, &[Some(model_path), a.corpus.as_deref()])?;
    let model = load_model(model_path)?;
    let tokens = load_tokens(a.corpus.as_deref())?;
    let calib = capture_calibration(&model, &tokens, s.samples, s.seed, s.window).context("capturing activations")?;
    let rows = calib.values().next().map_or(0, CalibrationSet::n_samples);
    let digest = write_entries(path, &calibration_to_entries(&calib))?;
    let _ = writeln!(out, "wrote {} ({} layers x {rows} rows, digest {digest})", path.display(), calib.len());
    Ok(())
}

fn quant_config(s: &Settings) -> QuantConfig {
    let mut c = QuantConfig::new(s.method, s.group_size);
    c.awq_alpha_grid = s.alpha_grid.clone();
    c.hessian_damping = s.damping;
    c.clip_search = s.clip_search;
    c
}

fn quantize(a: &QuantizeArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let model_path = required(&a.model, "model")?;
    let path = required(&a.out, "out")?;
    check_output(path, &[Some(model_path), a.calib.as_deref()])?;
    if let Some(summary) = &a.summary {
        check_output(summary, &[Some(model_path), a.calib.as_deref()])?;
    }
    let config = quant_config(s);
    let entries = read_entries(model_path)?;
    let calib = match &a.calib {
        Some(p) => {
            Some(calibration_from_entries(&read_entries(p)?).with_context(|| format!("loading {}", p.display()))?)
        }
        None => None,
    };
    let (out_entries, layers, setup_ms) = if entries.iter().any(|e| e.name == "meta.config") {
        let model = ToyTransformer::from_entries(&entries).context("loading model")?;
        let start = Instant::now();
        let (q, reports) = quantize_model(&model, calib.as_ref(), &config).context("quantizing model")?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        (q.to_entries(), reports, ms)
    } else {
        quantize_plain(&entries, calib.as_ref(), &config)?
    };
    let digest = write_entries(path, &out_entries)?;
    let _ = writeln!(
        out,
        "wrote {} ({} g{}, {} layers, digest {digest})",
        path.display(),
        config.method,
        config.group_size,
        layers.len()
    );
    if let Some(sp) = &a.summary {
        let summary =
            QuantSummary { method: config.method.to_string(), group_size: config.group_size, setup_ms, layers };
        let mut text = serde_json::to_string_pretty(&summary).context("encoding summary")?;
        text.push('\n');
        write_file(sp, text.as_bytes())?;
    }
    Ok(())
}

/// Quantizes every FP32 matrix of an arbitrary tensor file.
fn quantize_plain(
    entries: &[TensorEntry],
    calib: Option<&BTreeMap<String, CalibrationSet>>,
    config: &QuantConfig,
) -> Result<(Vec<TensorEntry>, Vec<LayerReport>, f64)> {
    let mut weights = Vec::new();
    for e in entries {
        match &e.data {
            TensorData::F32(m) => weights.push((e.name.clone(), m.clone())),
            TensorData::Q4(_) => return Err(anyhow!("entry `{}` is already quantized", e.name).into()),
        }
    }
    let start = Instant::now();
    let layers = quantize_layers(&weights, calib, config).context("quantizing tensors")?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for ((name, _), q) in weights.iter().zip(layers) {
        debug_assert!(matches!(q.layer.weights(), LayerWeights::Quantized(_)));
        out.extend(layer_entries(name, &q.layer));
        reports.push(q.report);
    }
    Ok((out, reports, ms))
}

fn eval(a: &EvalArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let model_path = required(&a.model, "model")?;
    if let Some(p) = &a.out {
        check_output(p, &[Some(model_path), a.corpus.as_deref()])?;
    }
    let model = load_model(model_path)?;
    let tokens = load_tokens(a.corpus.as_deref())?;
    let n = tokens.len().min(s.eval_tokens);
    let r = evaluate(&model, &tokens[..n], s.window).context("evaluating")?;
    let mut text = serde_json::to_string_pretty(&r).context("encoding result")?;
    text.push('\n');
    if let Some(p) = &a.out {
        write_file(p, text.as_bytes())?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn bench(a: &BenchArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let model_path = required(&a.model, "model")?;
    let path = required(&a.out, "out")?;
    check_output(path, &[Some(model_path), a.baseline.as_deref(), a.corpus.as_deref(), a.summary.as_deref()])?;
    let model = load_model(model_path)?;
    let baseline = a.baseline.as_deref().map(load_model).transpose()?;
    let tokens = load_tokens(a.corpus.as_deref())?;
    let settings = BenchSettings {
        n_warmup: s.warmup,
        n_runs: s.runs,
        gen_tokens: s.gen_tokens,
        n_prompts: s.prompts,
        prompt_len: s.prompt_len,
        eval_window: s.window,
        eval_tokens: s.eval_tokens,
    };
    let mut report =
        run_bench(&model, baseline.as_ref(), &tokens, &settings, &MonotonicClock::new()).context("benchmarking")?;
    if let Some(sp) = &a.summary {
        let text = std::fs::read_to_string(sp).with_context(|| format!("reading {}", sp.display()))?;
        let summary: QuantSummary =
            serde_json::from_str(&text).with_context(|| format!("parsing summary {}", sp.display()))?;
        report.setup_ms = Some(summary.setup_ms);
    }
    write_file(path, report.to_json().as_bytes())?;
    let _ = writeln!(
        out,
        "wrote {} ({}: perplexity {:.4}, accuracy {:.4}, {:.1} tok/s, ratio {:.3})",
        path.display(),
        report.model.label(),
        report.eval.perplexity,
        report.eval.token_accuracy,
        report.throughput_tok_per_s,
        report.compression_ratio
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<BenchReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(BenchReport::from_json(&text).with_context(|| format!("parsing report {}", path.display()))?)
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let pre_path = required(&a.pre, "pre")?;
    let post_path = required(&a.post, "post")?;
    if let Some(p) = &a.out {
        check_output(p, &[Some(pre_path), Some(post_path)])?;
    }
    let pre = read_report(pre_path)?;
    let post = read_report(post_path)?;
    let cmp: Comparison = compare_report(&pre, &post).context("comparing reports")?;
    if let Some(p) = &a.out {
        write_file(p, cmp.to_json().as_bytes())?;
    }
    match a.format.unwrap_or(Format::Table) {
        Format::Table => {
            let _ = write!(out, "{}", cmp.render_table());
        }
        Format::Json => {
            let _ = write!(out, "{}", cmp.to_json());
        }
    }
    Ok(())
}
