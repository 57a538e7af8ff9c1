#![no_main]

use int4q::quant::dequantize;
use int4q::tensor_file::decode_q4_payload;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(q) = decode_q4_payload(data) {
        let m = dequantize(&q);
        assert_eq!(m.shape(), q.shape());
    }
});
