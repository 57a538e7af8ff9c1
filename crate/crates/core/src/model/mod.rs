//! Bundled toy decoder-only transformer: the quantization target.

mod config;
mod corpus;
mod eval;
mod quantize;
mod transformer;

pub use config::ToyTransformerConfig;
pub use corpus::{
    detokenize, synthetic_corpus, token_digest, tokenize, ALPHABET, BUNDLED_CORPUS, BUNDLED_CORPUS_LEN,
    BUNDLED_CORPUS_SEED,
};
pub use eval::{argmax, evaluate, generate, log_softmax, EvalResult, LanguageModel, UniformLogits};
pub use quantize::{
    calibration_from_entries, calibration_to_entries, capture_calibration, quantize_layers, quantize_model,
    LayerReport, QuantizedLayer, CALIB_SUFFIX,
};
pub use transformer::{build_model, gelu, layer_entries, softmax_in_place, LayerNorm, ToyTransformer};
