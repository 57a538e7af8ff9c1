//! Symbol alphabet and the synthetic evaluation corpus.

use crate::error::ModelError;
use crate::matrix::fnv1a;
use crate::rng::SeededRng;

/// The 64 model symbols; token id = index.
pub const ALPHABET: &[u8; 64] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .";

/// Seed and length of the corpus shipped in `fixtures/corpus.txt`.
pub const BUNDLED_CORPUS_SEED: u64 = 1;
pub const BUNDLED_CORPUS_LEN: usize = 8192;
/// The shipped corpus, equal to `synthetic_corpus(BUNDLED_CORPUS_SEED, BUNDLED_CORPUS_LEN)`.
pub const BUNDLED_CORPUS: &str = include_str!("../../fixtures/corpus.txt");

const SUCCESSORS: usize = 4;
const SUCCESSOR_CDF: [f64; SUCCESSORS] = [0.55, 0.80, 0.93, 1.0];
const LINE_WIDTH: usize = 64;

/// Maps text to token ids. Line breaks are layout only and are skipped.
pub fn tokenize(text: &str) -> Result<Vec<u32>, ModelError> {
    let mut out = Vec::with_capacity(text.len());
    for (offset, ch) in text.char_indices() {
        if ch == '\n' || ch == '\r' {
            continue;
        }
        let id = u8::try_from(ch)
            .ok()
            .and_then(|b| ALPHABET.iter().position(|&a| a == b))
            .ok_or(ModelError::UnknownSymbol { symbol: ch, offset })?;
        out.push(id as u32);
    }
    Ok(out)
}

pub fn detokenize(tokens: &[u32]) -> Result<String, ModelError> {
    tokens.iter().map(|&t| ALPHABET.get(t as usize).map(|&b| b as char).ok_or(ModelError::TokenOutOfRange(t))).collect()
}

/// Deterministic Markov-chain text of `len` symbols: each symbol has four
/// seeded successors drawn with probabilities 0.55, 0.25, 0.13 and 0.07.
/// Output is wrapped at 64 symbols per line.
pub fn synthetic_corpus(seed: u64, len: usize) -> String {
    let mut rng = SeededRng::new(seed);
    let n = ALPHABET.len();
    let table: Vec<[usize; SUCCESSORS]> = (0..n).map(|_| std::array::from_fn(|_| rng.below(n))).collect();
    let mut state = rng.below(n);
    let mut out = String::with_capacity(len + len / LINE_WIDTH + 1);
    for i in 0..len {
        if i > 0 && i % LINE_WIDTH == 0 {
            out.push('\n');
        }
        out.push(ALPHABET[state] as char);
        let u = rng.unit_f64();
        let pick = SUCCESSOR_CDF.iter().position(|&c| u < c).unwrap_or(SUCCESSORS - 1);
        state = table[state][pick];
    }
    out.push('\n');
    out
}

/// Stable digest of a token stream, used to tie reports to their corpus.
pub fn token_digest(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
    format!("{:016x}", fnv1a(&bytes))
}
