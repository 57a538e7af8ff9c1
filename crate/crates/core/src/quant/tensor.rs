use crate::error::QuantError;

use super::pack::{decode_nibble, encode_nibble};

/// Size in bytes of the `{group_size, rows, cols}` header stored with every
/// quantized tensor.
pub const Q4_HEADER_BYTES: usize = 12;

/// Nibble-packed INT4 codes with one FP32 scale per (row, column group).
///
/// Rows are packed independently: row `r` occupies `cols.div_ceil(2)` bytes,
/// column `2i` in the low nibble and `2i + 1` in the high nibble. Odd-width
/// rows end with a zero padding nibble.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    group_size: usize,
    scales: Vec<f32>,
    codes: Vec<u8>,
}

impl QuantizedTensor {
    /// Assembles a tensor from stored parts, checking every layout invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        group_size: usize,
        scales: Vec<f32>,
        codes: Vec<u8>,
    ) -> Result<Self, QuantError> {
        if group_size == 0 || cols % group_size != 0 {
            return Err(QuantError::ShapeMismatch { rows, cols, group_size });
        }
        let groups = cols / group_size;
        let row_bytes = cols.div_ceil(2);
        if scales.len() != rows * groups {
            return Err(QuantError::dims("scale count", (rows, groups), (scales.len(), 1)));
        }
        if codes.len() != rows * row_bytes {
            return Err(QuantError::dims("packed code bytes", (rows, row_bytes), (codes.len(), 1)));
        }
        if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(QuantError::NonFinite { row: i / groups, col: (i % groups) * group_size });
        }
        let qt = Self { rows, cols, group_size, scales, codes };
        if cols % 2 == 1 {
            for r in 0..rows {
                if qt.row_codes(r)[row_bytes - 1] & 0xf0 != 0 {
                    return Err(QuantError::InvalidConfig(format!("row {r}: nonzero padding nibble")));
                }
            }
        }
        for r in 0..rows {
            for g in 0..groups {
                if qt.scale(r, g) == 0.0 {
                    let start = g * group_size;
                    if (start..start + group_size).any(|c| qt.code(r, c) != 0) {
                        return Err(QuantError::InvalidConfig(format!(
                            "row {r} group {g}: zero scale with nonzero codes"
                        )));
                    }
                }
            }
        }
        Ok(qt)
    }

    /// Packs row-major unpacked codes. Callers guarantee the codes are in
    /// range and the dims are consistent.
    pub(crate) fn pack(rows: usize, cols: usize, group_size: usize, scales: Vec<f32>, codes: &[i8]) -> Self {
        debug_assert_eq!(codes.len(), rows * cols);
        let row_bytes = cols.div_ceil(2);
        let mut packed = vec![0u8; rows * row_bytes];
        for r in 0..rows {
            let src = &codes[r * cols..(r + 1) * cols];
            let dst = &mut packed[r * row_bytes..(r + 1) * row_bytes];
            for (c, &q) in src.iter().enumerate() {
                dst[c / 2] |= encode_nibble(q) << ((c % 2) * 4);
            }
        }
        Self { rows, cols, group_size, scales, codes: packed }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    #[inline]
    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_size
    }

    #[inline]
    pub fn row_bytes(&self) -> usize {
        self.cols.div_ceil(2)
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn scale(&self, row: usize, group: usize) -> f32 {
        self.scales[row * self.groups_per_row() + group]
    }

    #[inline]
    pub fn row_codes(&self, row: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.codes[row * rb..(row + 1) * rb]
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> i8 {
        let b = self.row_codes(row)[col / 2];
        decode_nibble(b >> ((col % 2) * 4))
    }

    /// All codes of one row, unpacked.
    pub fn unpack_row(&self, row: usize) -> Vec<i8> {
        (0..self.cols).map(|c| self.code(row, c)).collect()
    }

    /// Bytes held by codes and scales, excluding the header.
    pub fn payload_bytes(&self) -> usize {
        self.codes.len() + 4 * self.scales.len()
    }

    /// Stored size: header + scales + codes.
    pub fn storage_bytes(&self) -> usize {
        Q4_HEADER_BYTES + self.payload_bytes()
    }
}
