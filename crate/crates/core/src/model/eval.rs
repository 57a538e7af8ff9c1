use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::matrix::Matrix;

/// Anything that maps a token prefix to per-position next-token logits.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;
    /// One row of `vocab_size` logits per input position.
    fn logits(&self, tokens: &[u32]) -> Result<Matrix, ModelError>;
}

/// Teacher-forced next-token statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub perplexity: f64,
    pub token_accuracy: f64,
    pub n_tokens: usize,
    pub mean_nll: f64,
}

/// Log-softmax of one logit row, computed in f64.
pub fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v as f64 - lse).collect()
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores every next-token prediction in `tokens`, split into
/// non-overlapping windows of at most `window` tokens. Each window of
/// length `w` contributes `w - 1` predictions.
pub fn evaluate(model: &dyn LanguageModel, tokens: &[u32], window: usize) -> Result<EvalResult, ModelError> {
    if window < 2 || window > model.max_seq_len() {
        return Err(ModelError::InvalidArgument(format!(
            "eval window {window} must be in 2..={}",
            model.max_seq_len()
        )));
    }
    if tokens.len() < 2 {
        return Err(ModelError::EmptyCorpus("evaluation needs at least two tokens"));
    }
    let mut nll = 0.0f64;
    let mut correct = 0usize;
    let mut n = 0usize;
    for chunk in tokens.chunks(window) {
        if chunk.len() < 2 {
            continue;
        }
        let logits = model.logits(&chunk[..chunk.len() - 1])?;
        for (t, &target) in chunk[1..].iter().enumerate() {
            let row = logits.row(t);
            nll -= log_softmax(row)[target as usize];
            correct += usize::from(argmax(row) == target as usize);
            n += 1;
        }
    }
    let mean_nll = nll / n as f64;
    Ok(EvalResult { perplexity: mean_nll.exp(), token_accuracy: correct as f64 / n as f64, n_tokens: n, mean_nll })
}

/// Greedy decoding. Returns only the `n_tokens` new tokens.
pub fn generate(model: &dyn LanguageModel, prompt: &[u32], n_tokens: usize) -> Result<Vec<u32>, ModelError> {
    if n_tokens == 0 {
        return Err(ModelError::InvalidArgument("n_tokens must be at least 1".into()));
    }
    if prompt.is_empty() {
        return Err(ModelError::InvalidArgument("empty prompt".into()));
    }
    let requested = prompt.len() + n_tokens;
    if requested > model.max_seq_len() {
        return Err(ModelError::LengthOverflow { requested, max: model.max_seq_len() });
    }
    let mut ctx = prompt.to_vec();
    for _ in 0..n_tokens {
        let logits = model.logits(&ctx)?;
        ctx.push(argmax(logits.row(logits.rows() - 1)) as u32);
    }
    Ok(ctx.split_off(prompt.len()))
}

/// Predicts every symbol with equal probability.
#[derive(Debug, Clone, Copy)]
pub struct UniformLogits {
    pub vocab: usize,
    pub max_seq_len: usize,
}

impl Default for UniformLogits {
    fn default() -> Self {
        Self { vocab: 64, max_seq_len: 512 }
    }
}

impl LanguageModel for UniformLogits {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    fn logits(&self, tokens: &[u32]) -> Result<Matrix, ModelError> {
        Ok(Matrix::zeros(tokens.len(), self.vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Always predicts `next = (last + 1) % vocab` with high confidence.
    struct Successor;

    impl LanguageModel for Successor {
        fn vocab_size(&self) -> usize {
            4
        }
        fn max_seq_len(&self) -> usize {
            8
        }
        fn logits(&self, tokens: &[u32]) -> Result<Matrix, ModelError> {
            Ok(Matrix::from_fn(tokens.len(), 4, |t, v| if v as u32 == (tokens[t] + 1) % 4 { 10.0 } else { 0.0 }))
        }
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let tokens: Vec<u32> = (0..1000).map(|i| (i * 7 % 64) as u32).collect();
        let r = evaluate(&UniformLogits::default(), &tokens, 512).unwrap();
        assert!((r.perplexity - 64.0).abs() < 1e-9, "{}", r.perplexity);
        // 1000 tokens in windows 512 + 488 -> 511 + 487 predictions.
        assert_eq!(r.n_tokens, 998);
    }

    #[test]
    fn accuracy_and_nll_against_hand_values() {
        let r = evaluate(&Successor, &[0, 1, 2, 0, 1], 8).unwrap();
        assert_eq!(r.n_tokens, 4);
        assert_eq!(r.token_accuracy, 0.75);
        // log-sum-exp of [10, 0, 0, 0]
        let lse = (10f64.exp() + 3.0).ln();
        let expected = ((lse - 10.0) * 3.0 + lse) / 4.0;
        assert!((r.mean_nll - expected).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_degenerate_input() {
        assert!(matches!(evaluate(&Successor, &[1], 8), Err(ModelError::EmptyCorpus(_))));
        assert!(evaluate(&Successor, &[1, 2], 9).is_err());
        assert!(evaluate(&Successor, &[1, 2], 1).is_err());
    }

    #[test]
    fn greedy_generation() {
        assert_eq!(generate(&Successor, &[2], 1).unwrap(), vec![3]);
        assert_eq!(generate(&Successor, &[2], 5).unwrap(), vec![3, 0, 1, 2, 3]);
        assert!(matches!(
            generate(&Successor, &[0, 0, 0], 6),
            Err(ModelError::LengthOverflow { requested: 9, max: 8 })
        ));
        assert!(generate(&Successor, &[0], 0).is_err());
    }

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn log_softmax_normalizes() {
        let l = log_softmax(&[1.0, 2.0, 3.0, 1000.0]);
        let s: f64 = l.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
