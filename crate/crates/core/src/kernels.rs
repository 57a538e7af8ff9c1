//! FP32 reference GEMM and the fused INT4 path.
//!
//! Weights are laid out `out_features × in_features`, so `Y = X · Wᵀ`.

use crate::error::QuantError;
use crate::gsq::ChannelScales;
use crate::matrix::Matrix;
use crate::quant::{decode_nibble, dequantize, QuantizedTensor};

/// `Y[i][j] = Σ_t X[i][t] · W[j][t]`, accumulated sequentially in f32.
pub fn gemm_f32(x: &Matrix, w: &Matrix) -> Result<Matrix, QuantError> {
    if x.cols() != w.cols() {
        return Err(QuantError::dims("gemm inner dimension", (x.rows(), w.cols()), x.shape()));
    }
    let mut y = Matrix::zeros(x.rows(), w.rows());
    for i in 0..x.rows() {
        let xr = x.row(i);
        let out = y.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (a, b) in xr.iter().zip(w.row(j)) {
                acc += a * b;
            }
            *o = acc;
        }
    }
    Ok(y)
}

/// `x[:, j] / s_j`.
pub fn apply_input_compensation(x: &Matrix, scales: &ChannelScales) -> Result<Matrix, QuantError> {
    if scales.len() != x.cols() {
        return Err(QuantError::dims("input compensation", (x.rows(), scales.len()), x.shape()));
    }
    Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) / scales.per_channel[c]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Dense(Matrix),
    Quantized(QuantizedTensor),
}

/// A linear layer `y = x · Wᵀ + b`, with optional GSQ input compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weights: LayerWeights,
    gsq_scales: Option<ChannelScales>,
    bias: Option<Vec<f32>>,
}

impl LinearLayer {
    pub fn dense(w: Matrix) -> Self {
        Self { weights: LayerWeights::Dense(w), gsq_scales: None, bias: None }
    }

    pub fn quantized(qt: QuantizedTensor, gsq_scales: Option<ChannelScales>) -> Result<Self, QuantError> {
        if let Some(s) = &gsq_scales {
            if s.len() != qt.cols() {
                return Err(QuantError::dims("gsq scales", (1, qt.cols()), (1, s.len())));
            }
            s.validate()?;
        }
        Ok(Self { weights: LayerWeights::Quantized(qt), gsq_scales, bias: None })
    }

    pub fn with_bias(mut self, bias: Vec<f32>) -> Result<Self, QuantError> {
        if bias.len() != self.out_features() {
            return Err(QuantError::dims("bias", (1, self.out_features()), (1, bias.len())));
        }
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn weights(&self) -> &LayerWeights {
        &self.weights
    }

    pub fn gsq_scales(&self) -> Option<&ChannelScales> {
        self.gsq_scales.as_ref()
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn out_features(&self) -> usize {
        match &self.weights {
            LayerWeights::Dense(m) => m.rows(),
            LayerWeights::Quantized(q) => q.rows(),
        }
    }

    pub fn in_features(&self) -> usize {
        match &self.weights {
            LayerWeights::Dense(m) => m.cols(),
            LayerWeights::Quantized(q) => q.cols(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.weights, LayerWeights::Quantized(_))
    }

    /// The FP32 weights this layer effectively applies to uncompensated inputs.
    pub fn effective_weights(&self) -> Matrix {
        match (&self.weights, &self.gsq_scales) {
            (LayerWeights::Dense(m), _) => m.clone(),
            (LayerWeights::Quantized(q), None) => dequantize(q),
            (LayerWeights::Quantized(q), Some(s)) => {
                crate::gsq::effective_weights(q, s).expect("scale length checked at construction")
            }
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, QuantError> {
        let mut y = match &self.weights {
            LayerWeights::Dense(w) => gemm_f32(x, w)?,
            LayerWeights::Quantized(_) => gemm_q4(x, self)?,
        };
        if let Some(b) = &self.bias {
            for r in 0..y.rows() {
                for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
        Ok(y)
    }
}

/// Scratch used by one [`gemm_q4`] call, for memory accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Q4Workspace {
    /// Packed codes plus scales read from the layer.
    pub weight_storage_bytes: usize,
    /// The single row-group dequantization buffer.
    pub unpack_buffer_bytes: usize,
    /// Compensated activations and accumulators.
    pub activation_bytes: usize,
}

/// Fused INT4 GEMM without bias: `(X ∘ 1/s) · dequantize(qt)ᵀ`.
///
/// One row-group of weights is dequantized at a time into a small buffer;
/// the full FP32 weight matrix is never formed. Accumulation order per
/// output element is the same as the reference path, so results match
/// `gemm_f32(x / s, dequantize(qt))`.
pub fn gemm_q4(x: &Matrix, layer: &LinearLayer) -> Result<Matrix, QuantError> {
    gemm_q4_traced(x, layer).map(|(y, _)| y)
}

pub fn gemm_q4_traced(x: &Matrix, layer: &LinearLayer) -> Result<(Matrix, Q4Workspace), QuantError> {
    let qt = match &layer.weights {
        LayerWeights::Quantized(q) => q,
        LayerWeights::Dense(_) => {
            return Err(QuantError::InvalidConfig("gemm_q4 needs a quantized layer".into()));
        }
    };
    if x.cols() != qt.cols() {
        return Err(QuantError::dims("gemm_q4 inner dimension", (x.rows(), qt.cols()), x.shape()));
    }
    let xs = match &layer.gsq_scales {
        Some(s) => apply_input_compensation(x, s)?,
        None => x.clone(),
    };
    let (n, k) = xs.shape();
    let m = qt.rows();
    let gs = qt.group_size();
    let mut acc = vec![0.0f32; n * m];
    let mut buf = vec![0.0f32; gs];
    for j in 0..m {
        let codes = qt.row_codes(j);
        for g in 0..qt.groups_per_row() {
            let scale = qt.scale(j, g);
            let start = g * gs;
            for (t, b) in buf.iter_mut().enumerate() {
                let c = start + t;
                let nib = decode_nibble(codes[c / 2] >> ((c % 2) * 4));
                *b = f32::from(nib) * scale;
            }
            for i in 0..n {
                let xr = &xs.row(i)[start..start + gs];
                let a = &mut acc[i * m + j];
                for (xv, wv) in xr.iter().zip(&buf) {
                    *a += xv * wv;
                }
            }
        }
    }
    let ws = Q4Workspace {
        weight_storage_bytes: qt.payload_bytes(),
        unpack_buffer_bytes: gs * std::mem::size_of::<f32>(),
        activation_bytes: (n * k + n * m) * std::mem::size_of::<f32>(),
    };
    Ok((Matrix::new(n, m, acc)?, ws))
}

/// Reference for [`gemm_q4`]: dequantize, compensate, then [`gemm_f32`].
pub fn gemm_q4_reference(x: &Matrix, layer: &LinearLayer) -> Result<Matrix, QuantError> {
    let qt = match &layer.weights {
        LayerWeights::Quantized(q) => q,
        LayerWeights::Dense(_) => {
            return Err(QuantError::InvalidConfig("gemm_q4_reference needs a quantized layer".into()));
        }
    };
    let xs = match &layer.gsq_scales {
        Some(s) => apply_input_compensation(x, s)?,
        None => x.clone(),
    };
    gemm_f32(&xs, &dequantize(qt))
}
