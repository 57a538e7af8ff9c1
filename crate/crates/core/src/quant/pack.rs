use crate::error::QuantError;

use super::rtn::{QMAX, QMIN};

/// Sign-extends a 4-bit two's-complement nibble (low four bits of `n`).
#[inline]
pub fn decode_nibble(n: u8) -> i8 {
    ((n << 4) as i8) >> 4
}

#[inline]
pub(crate) fn encode_nibble(code: i8) -> u8 {
    (code as u8) & 0x0f
}

/// Packs signed 4-bit codes two per byte, low nibble first. An odd count
/// leaves a zero high nibble in the last byte.
pub fn pack_nibbles(codes: &[i8]) -> Result<Vec<u8>, QuantError> {
    if let Some(&bad) = codes.iter().find(|&&c| !(QMIN..=QMAX).contains(&c)) {
        return Err(QuantError::CodeOutOfRange(i32::from(bad)));
    }
    Ok(codes
        .chunks(2)
        .map(|pair| encode_nibble(pair[0]) | pair.get(1).map_or(0, |&hi| encode_nibble(hi) << 4))
        .collect())
}

/// Inverse of [`pack_nibbles`]: the first `count` codes of `bytes`.
pub fn unpack_nibbles(bytes: &[u8], count: usize) -> Result<Vec<i8>, QuantError> {
    let needed = count.div_ceil(2);
    if bytes.len() < needed {
        return Err(QuantError::dims("packed nibble buffer", (needed, 1), (bytes.len(), 1)));
    }
    let mut out = Vec::with_capacity(count);
    for &b in &bytes[..needed] {
        out.push(decode_nibble(b));
        if out.len() < count {
            out.push(decode_nibble(b >> 4));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extreme_codes_pack_to_0x78() {
        assert_eq!(pack_nibbles(&[-8, 7]).unwrap(), vec![0x78]);
        assert_eq!(pack_nibbles(&[0, 0]).unwrap(), vec![0x00]);
        assert_eq!(pack_nibbles(&[-1, 1]).unwrap(), vec![0x1f]);
    }

    #[test]
    fn odd_count_pads_high_nibble() {
        assert_eq!(pack_nibbles(&[3, -2, 5]).unwrap(), vec![0xe3, 0x05]);
        assert_eq!(unpack_nibbles(&[0xe3, 0x05], 3).unwrap(), vec![3, -2, 5]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert_eq!(pack_nibbles(&[8]), Err(QuantError::CodeOutOfRange(8)));
        assert_eq!(pack_nibbles(&[-9]), Err(QuantError::CodeOutOfRange(-9)));
    }

    #[test]
    fn short_buffer_rejected() {
        assert!(unpack_nibbles(&[0x12], 3).is_err());
    }

    #[test]
    fn every_nibble_decodes_into_range() {
        for n in 0u8..16 {
            let c = decode_nibble(n);
            assert!((-8..=7).contains(&c));
            assert_eq!(encode_nibble(c), n);
        }
    }

    #[test]
    fn thousand_seeded_codes_roundtrip() {
        let mut rng = crate::rng::SeededRng::new(1000);
        let codes: Vec<i8> = (0..1000).map(|_| rng.below(16) as i8 - 8).collect();
        let packed = pack_nibbles(&codes).unwrap();
        assert_eq!(packed.len(), 500);
        assert_eq!(unpack_nibbles(&packed, codes.len()).unwrap(), codes);
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(codes in proptest::collection::vec(-8i8..=7, 0..300)) {
            let packed = pack_nibbles(&codes).unwrap();
            prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
            prop_assert_eq!(unpack_nibbles(&packed, codes.len()).unwrap(), codes);
        }
    }
}
