//! 4-bit weight-only post-training quantization.
//!
//! The crate provides three quantizers that share one storage layout
//! ([`QuantizedTensor`]: signed nibble codes plus one FP32 scale per
//! row-group):
//!
//! - [`quantize_rtn`]: plain symmetric round-to-nearest, the baseline.
//! - [`gsq_quantize`]: activation-aware group scaling. Per-input-channel
//!   importance from calibration activations drives a grid search over a
//!   scaling exponent; the selected channel scales are folded into the
//!   weights before group quantization and undone on the activations at
//!   inference time.
//! - [`gptq_quantize`]: column-sequential quantization with second-order
//!   error compensation from a damped calibration Hessian.
//!
//! Around them sit a little-endian tensor container ([`tensor_file`]), the
//! compute kernels ([`kernels`]), a bundled toy decoder-only transformer
//! ([`model`]) and the measurement harness ([`bench`]).

pub mod bench;
pub mod error;
pub mod gptq;
pub mod gsq;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod model;
pub mod quant;
pub mod rng;
pub mod tensor_file;

pub use error::{BenchError, FormatError, ModelError, QuantError};
pub use gptq::{build_hessian, gptq_quantize, layer_output_error, Hessian};
pub use gsq::{channel_importance, effective_weights, gsq_quantize, search_alpha, CalibrationSet, ChannelScales};
pub use kernels::{gemm_f32, gemm_q4, LayerWeights, LinearLayer};
pub use matrix::Matrix;
pub use quant::{
    compute_group_scales, dequantize, pack_nibbles, quantize_rtn, reconstruction_mse, unpack_nibbles, validate_shape,
    Method, QuantConfig, QuantizedTensor,
};
pub use rng::{seeded_random_matrix, Distribution, SeededRng};
pub use tensor_file::{read_tensor_file, write_tensor_file, TensorData, TensorEntry};
