#![no_main]

use int4q::model::{detokenize, tokenize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tokens) = tokenize(text) {
        let back = detokenize(&tokens).expect("tokens are in the alphabet");
        assert_eq!(back, text.replace(['\n', '\r'], ""));
    }
});
