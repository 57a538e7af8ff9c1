//! Activation-aware group scaling quantization.
//!
//! For a layer `y = x · Wᵀ`, input channel `j`'s importance is the mean
//! absolute activation it receives over the calibration set. For each
//! exponent `α` in the search grid the channel scales are
//! `s_j = importance_j^α`, normalized to unit geometric mean. The weights
//! are scaled column-wise (`W' = W · diag(s)`), group-quantized with RTN,
//! and the candidate is scored by the calibration output error of the
//! effective weights `Ŵ'[:, j] / s_j`. The lowest score wins; ties go to the
//! smaller `α`. At inference time activations are divided by `s` before
//! hitting the quantized weights.

use serde::{Deserialize, Serialize};

use crate::error::QuantError;
use crate::gptq::layer_output_error;
use crate::matrix::Matrix;
use crate::quant::{dequantize, quantize_rtn, validate_shape, QuantConfig, QuantizedTensor};

/// Channels whose mean |activation| is below this are floored to it.
pub const IMPORTANCE_FLOOR: f32 = 1e-8;

/// Observed layer-input activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    samples: Matrix,
}

impl CalibrationSet {
    pub fn new(samples: Matrix) -> Result<Self, QuantError> {
        if samples.rows() == 0 {
            return Err(QuantError::EmptyCalibration("calibration set has no samples".into()));
        }
        samples.ensure_finite()?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn in_features(&self) -> usize {
        self.samples.cols()
    }

    pub fn into_matrix(self) -> Matrix {
        self.samples
    }
}

/// Per-input-channel scales selected by the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScales {
    pub alpha: f32,
    pub per_channel: Vec<f32>,
}

impl ChannelScales {
    pub fn uniform(in_features: usize) -> Self {
        Self { alpha: 0.0, per_channel: vec![1.0; in_features] }
    }

    pub fn len(&self) -> usize {
        self.per_channel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_channel.is_empty()
    }

    /// Checks the stored scales are finite and strictly positive.
    pub fn validate(&self) -> Result<(), QuantError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(QuantError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        match self.per_channel.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            Some(col) => Err(QuantError::NonFinite { row: 0, col }),
            None => Ok(()),
        }
    }
}

/// Mean absolute activation per input channel, floored at [`IMPORTANCE_FLOOR`].
pub fn channel_importance(calib: &CalibrationSet) -> Vec<f32> {
    let x = calib.samples();
    let mut sums = vec![0.0f64; x.cols()];
    for row in x.iter_rows() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += f64::from(v.abs());
        }
    }
    let n = x.rows() as f64;
    sums.into_iter().map(|s| ((s / n) as f32).max(IMPORTANCE_FLOOR)).collect()
}

/// `importance^α`, normalized so the geometric mean is 1.
pub fn scales_for_alpha(importance: &[f32], alpha: f32) -> Vec<f32> {
    let logs: Vec<f64> = importance.iter().map(|&v| libm::log(f64::from(v))).collect();
    let mean = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
    logs.iter().map(|l| libm::exp(f64::from(alpha) * (l - mean)) as f32).collect()
}

fn scale_columns(w: &Matrix, s: &[f32]) -> Matrix {
    Matrix::from_fn(w.rows(), w.cols(), |r, c| w.get(r, c) * s[c])
}

/// Effective weights of a GSQ layer: `dequantize(qt)[:, j] / s_j`.
pub fn effective_weights(qt: &QuantizedTensor, scales: &ChannelScales) -> Result<Matrix, QuantError> {
    if scales.len() != qt.cols() {
        return Err(QuantError::dims("channel scales", (1, qt.cols()), (1, scales.len())));
    }
    let deq = dequantize(qt);
    Ok(Matrix::from_fn(qt.rows(), qt.cols(), |r, c| deq.get(r, c) / scales.per_channel[c]))
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct AlphaCandidate {
    pub alpha: f32,
    pub score: f64,
}

/// Result of the exponent search.
#[derive(Debug, Clone)]
pub struct AlphaSearch {
    pub scales: ChannelScales,
    pub quantized: QuantizedTensor,
    pub score: f64,
    pub candidates: Vec<AlphaCandidate>,
}

fn check_inputs(w: &Matrix, calib: &CalibrationSet, config: &QuantConfig) -> Result<(), QuantError> {
    if config.awq_alpha_grid.is_empty() {
        return Err(QuantError::InvalidConfig("awq_alpha_grid is empty".into()));
    }
    let mut grid_cfg = config.clone();
    grid_cfg.method = crate::quant::Method::Gsq;
    grid_cfg.validate()?;
    validate_shape(w, config.group_size)?;
    if calib.in_features() != w.cols() {
        return Err(QuantError::dims(
            "calibration in_features vs weight cols",
            (calib.n_samples(), w.cols()),
            calib.samples().shape(),
        ));
    }
    Ok(())
}

/// Grid search over `α`, returning every candidate's score.
pub fn search_alpha_detailed(
    w: &Matrix,
    calib: &CalibrationSet,
    config: &QuantConfig,
) -> Result<AlphaSearch, QuantError> {
    check_inputs(w, calib, config)?;
    let importance = channel_importance(calib);
    let mut grid = config.awq_alpha_grid.clone();
    grid.sort_by(f32::total_cmp);
    grid.dedup();

    let mut rtn_cfg = config.clone();
    rtn_cfg.method = crate::quant::Method::Rtn;

    let mut best: Option<AlphaSearch> = None;
    let mut candidates = Vec::with_capacity(grid.len());
    for &alpha in &grid {
        let per_channel = scales_for_alpha(&importance, alpha);
        let scaled = scale_columns(w, &per_channel);
        let qt = quantize_rtn(&scaled, &rtn_cfg)?;
        let scales = ChannelScales { alpha, per_channel };
        let score = layer_output_error(w, &effective_weights(&qt, &scales)?, calib)?;
        candidates.push(AlphaCandidate { alpha, score });
        // strict < keeps the smaller alpha on ties
        if best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(AlphaSearch { scales, quantized: qt, score, candidates: Vec::new() });
        }
    }
    let mut best = best.expect("grid is nonempty");
    best.candidates = candidates;
    Ok(best)
}

/// Selects the channel scales minimizing calibration output error.
pub fn search_alpha(w: &Matrix, calib: &CalibrationSet, config: &QuantConfig) -> Result<ChannelScales, QuantError> {
    Ok(search_alpha_detailed(w, calib, config)?.scales)
}

/// GSQ-quantizes one layer. The returned scales must be applied to the
/// activations (`x / s`) when running the quantized layer.
pub fn gsq_quantize(
    w: &Matrix,
    calib: &CalibrationSet,
    config: &QuantConfig,
) -> Result<(QuantizedTensor, ChannelScales), QuantError> {
    let found = search_alpha_detailed(w, calib, config)?;
    Ok((found.quantized, found.scales))
}
