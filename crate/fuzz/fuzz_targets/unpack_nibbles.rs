#![no_main]

use int4q::quant::{pack_nibbles, unpack_nibbles};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&n, bytes)) = data.split_first() else { return };
    let count = usize::from(n).min(bytes.len() * 2);
    if let Ok(codes) = unpack_nibbles(bytes, count) {
        assert!(codes.iter().all(|c| (-8..=7).contains(c)));
        let packed = pack_nibbles(&codes).expect("unpacked codes are in range");
        assert_eq!(unpack_nibbles(&packed, count).unwrap(), codes);
    }
});
