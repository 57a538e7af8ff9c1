#![no_main]

use int4q::tensor_file::{decode_tensor_file, encode_tensor_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(entries) = decode_tensor_file(data) {
        let again = encode_tensor_file(&entries).expect("decoded entries re-encode");
        assert_eq!(again, data);
    }
});
