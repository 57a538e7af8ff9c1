//! Shared INT4 group-quantization substrate.
//!
//! Quantization is symmetric with no zero point: each run of `group_size`
//! consecutive weights along a row shares one scale `max|w| / 7` and codes
//! are `clamp(round_half_even(w / scale), -8, 7)`.

mod config;
mod pack;
pub(crate) mod rtn;
mod tensor;

pub use config::{Method, QuantConfig, BITS, CLIP_FRACTIONS, DEFAULT_ALPHA_GRID, DEFAULT_DAMPING, DEFAULT_GROUP_SIZE};
pub use pack::{decode_nibble, pack_nibbles, unpack_nibbles};
pub use rtn::{
    compute_group_scales, dequantize, fit_group_scale, quantize_rtn, quantize_value, reconstruction_mse,
    validate_shape, QMAX, QMIN,
};
pub use tensor::{QuantizedTensor, Q4_HEADER_BYTES};
