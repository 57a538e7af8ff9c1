use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::gptq::{build_hessian, gptq_quantize, layer_output_error};
use crate::gsq::{gsq_quantize, CalibrationSet};
use crate::kernels::{LayerWeights, LinearLayer};
use crate::matrix::Matrix;
use crate::quant::{quantize_rtn, validate_shape, Method, QuantConfig};
use crate::rng::SeededRng;
use crate::tensor_file::{TensorData, TensorEntry};

use super::transformer::ToyTransformer;

/// Name suffix of calibration entries in a tensor file.
pub const CALIB_SUFFIX: &str = ".calib";

/// Records the input rows of every quantizable layer while running the
/// model over `tokens` in non-overlapping windows, then keeps `n_samples`
/// token positions chosen by `seed`. All layers keep the same positions.
pub fn capture_calibration(
    model: &ToyTransformer,
    tokens: &[u32],
    n_samples: usize,
    seed: u64,
    window: usize,
) -> Result<BTreeMap<String, CalibrationSet>, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyCorpus("calibration corpus has no tokens"));
    }
    if n_samples == 0 {
        return Err(ModelError::InvalidArgument("n_samples must be at least 1".into()));
    }
    let max = model.config().max_seq_len;
    if window == 0 || window > max {
        return Err(ModelError::InvalidArgument(format!("calibration window {window} must be in 1..={max}")));
    }
    let k = n_samples.min(tokens.len());
    let picked = SeededRng::new(seed).choose_indices(tokens.len(), k);

    let mut rows: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut next = 0;
    for (w, chunk) in tokens.chunks(window).enumerate() {
        let start = w * window;
        let end = start + chunk.len();
        let lo = next;
        while next < picked.len() && picked[next] < end {
            next += 1;
        }
        if lo == next {
            continue;
        }
        let local: Vec<usize> = picked[lo..next].iter().map(|p| p - start).collect();
        model.forward_with_capture(chunk, &mut |name, x| {
            let buf = rows.entry(name.to_string()).or_default();
            for &t in &local {
                buf.extend_from_slice(x.row(t));
            }
        })?;
    }
    rows.into_iter()
        .map(|(name, data)| {
            let cols = model.layer(&name).expect("captured layer exists").in_features();
            let m = Matrix::new(k, cols, data)?;
            let set = CalibrationSet::new(m).map_err(ModelError::layer(name.as_str()))?;
            Ok((name, set))
        })
        .collect()
}

pub fn calibration_to_entries(calib: &BTreeMap<String, CalibrationSet>) -> Vec<TensorEntry> {
    calib.iter().map(|(name, set)| TensorEntry::f32(format!("{name}{CALIB_SUFFIX}"), set.samples().clone())).collect()
}

pub fn calibration_from_entries(entries: &[TensorEntry]) -> Result<BTreeMap<String, CalibrationSet>, ModelError> {
    let mut out = BTreeMap::new();
    for e in entries {
        let bad = |reason: &str| ModelError::BadParameter { name: e.name.clone(), reason: reason.into() };
        let layer = e.name.strip_suffix(CALIB_SUFFIX).ok_or_else(|| bad("not a calibration entry"))?;
        let TensorData::F32(m) = &e.data else { return Err(bad("calibration must be F32")) };
        let set = CalibrationSet::new(m.clone()).map_err(ModelError::layer(layer))?;
        out.insert(layer.to_string(), set);
    }
    Ok(out)
}

/// Quality figures for one quantized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    /// Mean squared weight error of the effective FP32 weights.
    pub mse: f64,
    /// Calibration output error, when calibration data was available.
    pub output_error: Option<f64>,
    /// Chosen GSQ exponent.
    pub alpha: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    pub layer: LinearLayer,
    pub report: LayerReport,
}

/// Quantizes named FP32 weight matrices. Shapes are checked for every layer
/// before any calibration data is consulted or any work starts.
pub fn quantize_layers(
    weights: &[(String, Matrix)],
    calib: Option<&BTreeMap<String, CalibrationSet>>,
    config: &QuantConfig,
) -> Result<Vec<QuantizedLayer>, ModelError> {
    config.validate()?;
    for (name, w) in weights {
        validate_shape(w, config.group_size).map_err(ModelError::layer(name.as_str()))?;
    }
    let lookup = |name: &str| -> Result<Option<&CalibrationSet>, ModelError> {
        let set = calib.and_then(|c| c.get(name));
        if set.is_none() && config.method != Method::Rtn {
            return Err(ModelError::MissingCalibration(name.to_string()));
        }
        Ok(set)
    };
    for (name, _) in weights {
        lookup(name)?;
    }

    weights
        .iter()
        .map(|(name, w)| {
            let wrap = ModelError::layer(name.as_str());
            let set = lookup(name)?;
            let (layer, alpha) = match config.method {
                Method::Rtn => {
                    let qt = quantize_rtn(w, config).map_err(ModelError::layer(name.as_str()))?;
                    (LinearLayer::quantized(qt, None).map_err(ModelError::layer(name.as_str()))?, None)
                }
                Method::Gsq => {
                    let set = set.expect("checked above");
                    let (qt, scales) = gsq_quantize(w, set, config).map_err(ModelError::layer(name.as_str()))?;
                    let alpha = scales.alpha;
                    (LinearLayer::quantized(qt, Some(scales)).map_err(ModelError::layer(name.as_str()))?, Some(alpha))
                }
                Method::Gptq => {
                    let set = set.expect("checked above");
                    let h = build_hessian(set, config.hessian_damping).map_err(ModelError::layer(name.as_str()))?;
                    let qt = gptq_quantize(w, &h, config).map_err(ModelError::layer(name.as_str()))?;
                    (LinearLayer::quantized(qt, None).map_err(ModelError::layer(name.as_str()))?, None)
                }
            };
            let approx = layer.effective_weights();
            let mse = crate::quant::rtn::mse(w, &approx);
            let output_error = set.map(|s| layer_output_error(w, &approx, s)).transpose().map_err(wrap)?;
            Ok(QuantizedLayer { layer, report: LayerReport { name: name.clone(), mse, output_error, alpha } })
        })
        .collect()
}

/// Quantizes every attention and feed-forward projection of `model`.
pub fn quantize_model(
    model: &ToyTransformer,
    calib: Option<&BTreeMap<String, CalibrationSet>>,
    config: &QuantConfig,
) -> Result<(ToyTransformer, Vec<LayerReport>), ModelError> {
    if model.quantization().is_some() {
        return Err(ModelError::InvalidArgument("model is already quantized".into()));
    }
    let weights: Vec<(String, Matrix)> = model
        .layer_names()
        .into_iter()
        .map(|n| {
            let LayerWeights::Dense(w) = model.layer(&n).expect("listed layer").weights() else {
                unreachable!("unquantized model has dense layers")
            };
            let w = w.clone();
            (n, w)
        })
        .collect();
    let layers = quantize_layers(&weights, calib, config)?;
    let mut out = model.clone();
    let mut reports = Vec::with_capacity(layers.len());
    for ((name, _), q) in weights.iter().zip(layers) {
        out.replace_layer(name, q.layer)?;
        reports.push(q.report);
    }
    out.set_quantization(Some((config.method, config.group_size)));
    Ok((out, reports))
}
