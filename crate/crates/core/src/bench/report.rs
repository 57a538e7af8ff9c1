use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::model::EvalResult;

use super::memory::MemoryFootprint;
use super::runner::BenchSettings;
use super::stats::LatencyStats;

/// Version of the JSON layout of [`BenchReport`] and [`Comparison`].
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// `fp32`, `rtn`, `gsq` or `gptq`.
    pub method: String,
    pub group_size: Option<usize>,
    /// FNV-1a of the serialized model.
    pub digest: String,
    /// Digest of the FP32 model the per-layer MSE was measured against.
    pub baseline_digest: Option<String>,
}

impl ModelInfo {
    pub fn label(&self) -> String {
        match self.group_size {
            Some(g) => format!("{} g{g}", self.method),
            None => self.method.clone(),
        }
    }
}

/// Measurements of one model on one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub model: ModelInfo,
    pub corpus_digest: String,
    pub settings: BenchSettings,
    pub eval: EvalResult,
    pub latency_ms: LatencyStats,
    pub throughput_tok_per_s: f64,
    pub generated_tokens: usize,
    pub memory: MemoryFootprint,
    pub compression_ratio: f64,
    pub per_layer_mse: BTreeMap<String, f64>,
    /// Wall time spent quantizing, measured separately from inference.
    pub setup_ms: Option<f64>,
}

impl BenchReport {
    /// Copy with every wall-clock and process-dependent field cleared.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.latency_ms = LatencyStats::zeroed(r.latency_ms.n_runs);
        r.throughput_tok_per_s = 0.0;
        r.memory.peak_rss_bytes = None;
        r.setup_ms = None;
        r
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(BenchError::ConfigMismatch(format!(
                "report schema version {} is not {SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Post minus pre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub perplexity: f64,
    pub token_accuracy: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
    pub throughput_tok_per_s: f64,
    pub weight_bytes: i64,
    pub model_bytes: i64,
    pub compression_ratio: f64,
    pub peak_rss_bytes: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub pre: BenchReport,
    pub post: BenchReport,
    pub deltas: Deltas,
    /// Set when any post memory figure exceeds its pre counterpart.
    pub memory_paradox: bool,
    pub flags: Vec<String>,
}

fn signed(a: usize, b: usize) -> i64 {
    b as i64 - a as i64
}

/// Pairs two reports taken on the same corpus with the same settings.
pub fn compare_report(pre: &BenchReport, post: &BenchReport) -> Result<Comparison, BenchError> {
    if pre.corpus_digest != post.corpus_digest {
        return Err(BenchError::ConfigMismatch(format!(
            "corpus digests differ ({} vs {})",
            pre.corpus_digest, post.corpus_digest
        )));
    }
    if pre.settings != post.settings {
        return Err(BenchError::ConfigMismatch("benchmark settings differ".into()));
    }
    if let Some(b) = &post.model.baseline_digest {
        if *b != pre.model.digest {
            return Err(BenchError::ConfigMismatch("post report was measured against a different baseline".into()));
        }
    }
    let (a, b) = (&pre.memory, &post.memory);
    let rss = match (a.peak_rss_bytes, b.peak_rss_bytes) {
        (Some(x), Some(y)) => Some(y as i64 - x as i64),
        _ => None,
    };
    let deltas = Deltas {
        perplexity: post.eval.perplexity - pre.eval.perplexity,
        token_accuracy: post.eval.token_accuracy - pre.eval.token_accuracy,
        latency_mean_ms: post.latency_ms.mean - pre.latency_ms.mean,
        latency_p95_ms: post.latency_ms.p95 - pre.latency_ms.p95,
        throughput_tok_per_s: post.throughput_tok_per_s - pre.throughput_tok_per_s,
        weight_bytes: signed(a.weight_bytes, b.weight_bytes),
        model_bytes: signed(a.model_bytes, b.model_bytes),
        compression_ratio: post.compression_ratio - pre.compression_ratio,
        peak_rss_bytes: rss,
    };
    let mut flags = Vec::new();
    if deltas.weight_bytes > 0 {
        flags.push("memory-paradox: weight_bytes".to_string());
    }
    if deltas.model_bytes > 0 {
        flags.push("memory-paradox: model_bytes".to_string());
    }
    if rss.is_some_and(|d| d > 0) {
        flags.push("memory-paradox: peak_rss_bytes".to_string());
    }
    Ok(Comparison {
        schema_version: SCHEMA_VERSION,
        pre: pre.clone(),
        post: post.clone(),
        memory_paradox: !flags.is_empty(),
        flags,
        deltas,
    })
}

impl Comparison {
    /// Copy with timing and process-dependent figures cleared and the flags
    /// that depend on them dropped.
    pub fn without_timing(&self) -> Self {
        let mut c = self.clone();
        c.pre = c.pre.without_timing();
        c.post = c.post.without_timing();
        c.deltas.latency_mean_ms = 0.0;
        c.deltas.latency_p95_ms = 0.0;
        c.deltas.throughput_tok_per_s = 0.0;
        c.deltas.peak_rss_bytes = None;
        c.flags.retain(|f| !f.ends_with("peak_rss_bytes"));
        c.memory_paradox = !c.flags.is_empty();
        c
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let (p, q) = (&self.pre, &self.post);
        let mut out = String::new();
        let _ = writeln!(out, "pre:    {} ({})", p.model.label(), p.model.digest);
        let _ = writeln!(out, "post:   {} ({})", q.model.label(), q.model.digest);
        let _ = writeln!(out, "corpus: {}", p.corpus_digest);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<22} {:>14} {:>14} {:>14}", "metric", "pre", "post", "delta");
        let f = |v: f64| format!("{v:.4}");
        let d = |v: f64| format!("{v:+.4}");
        let n = |v: usize| v.to_string();
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |x| x.to_string());
        let rows: Vec<(&str, String, String, String)> = vec![
            ("perplexity", f(p.eval.perplexity), f(q.eval.perplexity), d(self.deltas.perplexity)),
            ("token_accuracy", f(p.eval.token_accuracy), f(q.eval.token_accuracy), d(self.deltas.token_accuracy)),
            (
                "eval_tokens",
                n(p.eval.n_tokens),
                n(q.eval.n_tokens),
                format!("{:+}", signed(p.eval.n_tokens, q.eval.n_tokens)),
            ),
            ("latency_mean_ms", f(p.latency_ms.mean), f(q.latency_ms.mean), d(self.deltas.latency_mean_ms)),
            ("latency_p50_ms", f(p.latency_ms.p50), f(q.latency_ms.p50), d(q.latency_ms.p50 - p.latency_ms.p50)),
            ("latency_p95_ms", f(p.latency_ms.p95), f(q.latency_ms.p95), d(self.deltas.latency_p95_ms)),
            (
                "latency_stddev_ms",
                f(p.latency_ms.stddev),
                f(q.latency_ms.stddev),
                d(q.latency_ms.stddev - p.latency_ms.stddev),
            ),
            (
                "throughput_tok_per_s",
                f(p.throughput_tok_per_s),
                f(q.throughput_tok_per_s),
                d(self.deltas.throughput_tok_per_s),
            ),
            (
                "weight_bytes_fp32",
                n(p.memory.weight_bytes_fp32),
                n(q.memory.weight_bytes_fp32),
                format!("{:+}", signed(p.memory.weight_bytes_fp32, q.memory.weight_bytes_fp32)),
            ),
            (
                "weight_bytes",
                n(p.memory.weight_bytes),
                n(q.memory.weight_bytes),
                format!("{:+}", self.deltas.weight_bytes),
            ),
            (
                "compensation_bytes",
                n(p.memory.compensation_bytes),
                n(q.memory.compensation_bytes),
                format!("{:+}", signed(p.memory.compensation_bytes, q.memory.compensation_bytes)),
            ),
            ("model_bytes", n(p.memory.model_bytes), n(q.memory.model_bytes), format!("{:+}", self.deltas.model_bytes)),
            ("compression_ratio", f(p.compression_ratio), f(q.compression_ratio), d(self.deltas.compression_ratio)),
            (
                "peak_rss_bytes",
                opt(p.memory.peak_rss_bytes),
                opt(q.memory.peak_rss_bytes),
                self.deltas.peak_rss_bytes.map_or("-".into(), |v| format!("{v:+}")),
            ),
            ("setup_ms", p.setup_ms.map_or("-".into(), f), q.setup_ms.map_or("-".into(), f), "-".into()),
        ];
        for (name, a, b, c) in rows {
            let _ = writeln!(out, "{name:<22} {a:>14} {b:>14} {c:>14}");
        }
        if !q.per_layer_mse.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<22} {:>14}", "layer", "weight_mse");
            for (layer, mse) in &q.per_layer_mse {
                let _ = writeln!(out, "{layer:<22} {mse:>14.6e}");
            }
        }
        let _ = writeln!(out);
        if self.flags.is_empty() {
            let _ = writeln!(out, "flags: none");
        } else {
            for flag in &self.flags {
                let _ = writeln!(out, "flag: {flag}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(method: &str, weight_bytes: usize) -> BenchReport {
        BenchReport {
            schema_version: SCHEMA_VERSION,
            model: ModelInfo {
                method: method.into(),
                group_size: (method != "fp32").then_some(16),
                digest: format!("{method}-digest"),
                baseline_digest: None,
            },
            corpus_digest: "corpus".into(),
            settings: BenchSettings::default(),
            eval: EvalResult { perplexity: 60.5, token_accuracy: 0.125, n_tokens: 100, mean_nll: 60.5f64.ln() },
            latency_ms: LatencyStats { mean: 2.0, p50: 1.5, p95: 3.0, stddev: 0.5, n_runs: 5 },
            throughput_tok_per_s: 500.0,
            generated_tokens: 64,
            memory: MemoryFootprint {
                weight_bytes_fp32: 262144,
                weight_bytes,
                compensation_bytes: 0,
                model_bytes: 428544,
                peak_rss_bytes: Some(1 << 20),
            },
            compression_ratio: 262144.0 / weight_bytes as f64,
            per_layer_mse: BTreeMap::new(),
            setup_ms: None,
        }
    }

    #[test]
    fn identical_inputs_have_zero_deltas() {
        let r = fixture("gsq", 49296);
        let c = compare_report(&r, &r).unwrap();
        let z = &c.deltas;
        assert_eq!((z.perplexity, z.token_accuracy, z.latency_mean_ms, z.compression_ratio), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((z.weight_bytes, z.model_bytes, z.peak_rss_bytes), (0, 0, Some(0)));
        assert!(!c.memory_paradox);
    }

    #[test]
    fn larger_post_weights_raise_the_paradox_flag() {
        let c = compare_report(&fixture("fp32", 262144), &fixture("gsq", 300000)).unwrap();
        assert!(c.memory_paradox);
        assert_eq!(c.flags, vec!["memory-paradox: weight_bytes".to_string()]);
    }

    #[test]
    fn rss_only_paradox_is_a_timing_field() {
        let pre = fixture("fp32", 262144);
        let mut post = fixture("gsq", 49296);
        post.memory.peak_rss_bytes = Some(2 << 20);
        let c = compare_report(&pre, &post).unwrap();
        assert!(c.memory_paradox);
        assert!(!c.without_timing().memory_paradox);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let pre = fixture("fp32", 262144);
        let mut post = fixture("gsq", 49296);
        post.corpus_digest = "other".into();
        assert!(matches!(compare_report(&pre, &post), Err(BenchError::ConfigMismatch(_))));
        let mut post = fixture("gsq", 49296);
        post.settings.n_runs = 9;
        assert!(matches!(compare_report(&pre, &post), Err(BenchError::ConfigMismatch(_))));
        let mut post = fixture("gsq", 49296);
        post.model.baseline_digest = Some("elsewhere".into());
        assert!(matches!(compare_report(&pre, &post), Err(BenchError::ConfigMismatch(_))));
    }

    #[test]
    fn json_roundtrip_and_schema_check() {
        let r = fixture("gptq", 49296);
        assert_eq!(BenchReport::from_json(&r.to_json()).unwrap(), r);
        let mut bad = r.clone();
        bad.schema_version = 2;
        assert!(BenchReport::from_json(&bad.to_json()).is_err());
        assert!(BenchReport::from_json("{").is_err());
    }
}
