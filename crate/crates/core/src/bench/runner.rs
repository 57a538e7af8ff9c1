use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, ModelError};
use crate::matrix::fnv1a;
use crate::model::{evaluate, generate, token_digest, LanguageModel, ToyTransformer};
use crate::quant::rtn::mse;
use crate::tensor_file::encode_tensor_file;

use super::clock::Clock;
use super::memory::measure_memory;
use super::report::{BenchReport, ModelInfo, SCHEMA_VERSION};
use super::stats::measure_latency;

/// Everything that must match for two reports to be comparable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub n_warmup: usize,
    pub n_runs: usize,
    /// Tokens generated per prompt.
    pub gen_tokens: usize,
    pub n_prompts: usize,
    pub prompt_len: usize,
    pub eval_window: usize,
    /// Evaluate on at most this many corpus tokens.
    pub eval_tokens: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            n_warmup: 1,
            n_runs: 5,
            gen_tokens: 16,
            n_prompts: 4,
            prompt_len: 32,
            eval_window: 512,
            eval_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub tokens: usize,
    pub seconds: f64,
    pub tokens_per_s: f64,
}

/// `n_prompts` slices of `prompt_len` tokens spread evenly over the corpus.
pub fn bench_prompts(tokens: &[u32], settings: &BenchSettings) -> Result<Vec<Vec<u32>>, BenchError> {
    if settings.n_prompts == 0 {
        return Err(BenchError::NoPrompts);
    }
    let len = settings.prompt_len;
    if len == 0 || tokens.len() < len {
        return Err(BenchError::Model(ModelError::EmptyCorpus("corpus is shorter than one prompt")));
    }
    let span = tokens.len() - len;
    Ok((0..settings.n_prompts)
        .map(|i| {
            let start = span * i / settings.n_prompts;
            tokens[start..start + len].to_vec()
        })
        .collect())
}

/// Generated tokens per second over one timed region covering all prompts.
pub fn measure_throughput(
    clock: &dyn Clock,
    model: &dyn LanguageModel,
    prompts: &[Vec<u32>],
    n_tokens_each: usize,
) -> Result<Throughput, BenchError> {
    if prompts.is_empty() {
        return Err(BenchError::NoPrompts);
    }
    let start = clock.now();
    let mut tokens = 0;
    for p in prompts {
        tokens += generate(model, p, n_tokens_each)?.len();
    }
    let seconds = (clock.now() - start).as_secs_f64();
    if seconds <= 0.0 {
        return Err(BenchError::ZeroElapsed);
    }
    Ok(Throughput { tokens, seconds, tokens_per_s: tokens as f64 / seconds })
}

/// Weight MSE of each quantizable layer of `model` against `baseline`.
pub fn per_layer_mse(baseline: &ToyTransformer, model: &ToyTransformer) -> Result<BTreeMap<String, f64>, BenchError> {
    if baseline.config() != model.config() {
        return Err(BenchError::ConfigMismatch("baseline and model have different dimensions or seeds".into()));
    }
    Ok(model
        .layer_names()
        .into_iter()
        .map(|n| {
            let a = baseline.layer(&n).expect("same config").effective_weights();
            let b = model.layer(&n).expect("listed layer").effective_weights();
            let e = mse(&a, &b);
            (n, e)
        })
        .collect())
}

pub(crate) fn model_digest(model: &ToyTransformer) -> String {
    let bytes = encode_tensor_file(&model.to_entries()).expect("model entries are valid");
    format!("{:016x}", fnv1a(&bytes))
}

/// Full measurement of one model: evaluation, latency, throughput, memory.
/// `setup_ms` is left empty; callers that quantized the model fill it in.
pub fn run_bench(
    model: &ToyTransformer,
    baseline: Option<&ToyTransformer>,
    tokens: &[u32],
    settings: &BenchSettings,
    clock: &dyn Clock,
) -> Result<BenchReport, BenchError> {
    let eval_len = tokens.len().min(settings.eval_tokens);
    let eval = evaluate(model, &tokens[..eval_len], settings.eval_window)?;
    let prompts = bench_prompts(tokens, settings)?;
    let mut next = 0;
    let latency_ms = measure_latency(clock, settings.n_warmup, settings.n_runs, || {
        let p = &prompts[next % prompts.len()];
        next += 1;
        generate(model, p, settings.gen_tokens).map(|_| ())
    })?;
    let throughput = measure_throughput(clock, model, &prompts, settings.gen_tokens)?;
    let memory = measure_memory(model);
    let per_layer_mse = match baseline {
        Some(b) => per_layer_mse(b, model)?,
        None => BTreeMap::new(),
    };
    let quant = model.quantization();
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        model: ModelInfo {
            method: quant.map_or_else(|| "fp32".to_string(), |(m, _)| m.to_string()),
            group_size: quant.map(|(_, g)| g),
            digest: model_digest(model),
            baseline_digest: baseline.map(model_digest),
        },
        corpus_digest: token_digest(tokens),
        settings: settings.clone(),
        compression_ratio: memory.compression_ratio(),
        eval,
        latency_ms,
        throughput_tok_per_s: throughput.tokens_per_s,
        generated_tokens: throughput.tokens,
        memory,
        per_layer_mse,
        setup_ms: None,
    })
}
