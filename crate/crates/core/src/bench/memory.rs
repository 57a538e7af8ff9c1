use serde::{Deserialize, Serialize};

use crate::kernels::{LayerWeights, LinearLayer};
use crate::model::ToyTransformer;
use crate::tensor_file::TensorData;

/// Weight memory of a model. The analytic byte counts are exact; the peak
/// resident set size is whatever the platform reports for the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    /// Quantizable layers stored as FP32.
    pub weight_bytes_fp32: usize,
    /// Quantizable layers as actually stored (codes, scales and headers).
    pub weight_bytes: usize,
    /// GSQ input-channel scales and exponents.
    pub compensation_bytes: usize,
    /// Every parameter tensor as stored, including embeddings and norms.
    pub model_bytes: usize,
    /// Process peak RSS, if known.
    pub peak_rss_bytes: Option<u64>,
}

impl MemoryFootprint {
    /// FP32 bytes divided by stored bytes of the quantizable layers.
    pub fn compression_ratio(&self) -> f64 {
        self.weight_bytes_fp32 as f64 / self.weight_bytes as f64
    }
}

/// Stored weight bytes of one layer, excluding GSQ scales.
pub fn layer_weight_bytes(layer: &LinearLayer) -> usize {
    match layer.weights() {
        LayerWeights::Dense(m) => 4 * m.len(),
        LayerWeights::Quantized(q) => q.storage_bytes(),
    }
}

pub fn measure_memory(model: &ToyTransformer) -> MemoryFootprint {
    let mut fp32 = 0;
    let mut stored = 0;
    let mut comp = 0;
    for name in model.layer_names() {
        let layer = model.layer(&name).expect("listed layer");
        fp32 += 4 * layer.out_features() * layer.in_features();
        stored += layer_weight_bytes(layer);
        // per-channel scales plus the exponent
        comp += layer.gsq_scales().map_or(0, |s| 4 * (s.len() + 1));
    }
    let model_bytes = model
        .to_entries()
        .iter()
        .filter(|e| !e.name.starts_with("meta."))
        .map(|e| match &e.data {
            TensorData::F32(m) => 4 * m.len(),
            TensorData::Q4(q) => q.storage_bytes(),
        })
        .sum();
    MemoryFootprint {
        weight_bytes_fp32: fp32,
        weight_bytes: stored,
        compensation_bytes: comp,
        model_bytes,
        peak_rss_bytes: peak_rss_bytes(),
    }
}

/// High-water resident set size from `/proc/self/status`, Linux only.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
