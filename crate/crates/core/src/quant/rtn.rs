use crate::error::QuantError;
use crate::matrix::Matrix;

use super::config::{QuantConfig, CLIP_FRACTIONS};
use super::tensor::QuantizedTensor;

pub const QMIN: i8 = -8;
pub const QMAX: i8 = 7;

/// Checks that `matrix` can be group-quantized with `group_size`: the last
/// dimension must divide evenly and every value must be finite.
pub fn validate_shape(matrix: &Matrix, group_size: usize) -> Result<(), QuantError> {
    let (rows, cols) = matrix.shape();
    if group_size == 0 || cols % group_size != 0 {
        return Err(QuantError::ShapeMismatch { rows, cols, group_size });
    }
    matrix.ensure_finite()
}

/// Scale for one group of values. Without clip search this is `max|w| / 7`
/// (zero for an all-zero group). With clip search, each fraction in
/// [`CLIP_FRACTIONS`] is tried and the scale with the lowest group MSE wins,
/// ties going to the earlier (larger) fraction.
pub fn fit_group_scale(values: &[f32], clip_search: bool) -> f32 {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let base = nonzero_scale(max / f32::from(QMAX));
    if !clip_search {
        return base;
    }
    let mut best = (base, group_sq_error(values, base));
    for &c in &CLIP_FRACTIONS[1..] {
        let s = nonzero_scale(c * max / f32::from(QMAX));
        let err = group_sq_error(values, s);
        if err < best.1 {
            best = (s, err);
        }
    }
    best.0
}

// A nonzero group whose max/7 underflows still needs a usable scale.
#[inline]
fn nonzero_scale(s: f32) -> f32 {
    if s == 0.0 {
        f32::from_bits(1)
    } else {
        s
    }
}

fn group_sq_error(values: &[f32], scale: f32) -> f64 {
    values
        .iter()
        .map(|&w| {
            let d = f64::from(w) - f64::from(f32::from(quantize_value(f64::from(w), scale)) * scale);
            d * d
        })
        .sum()
}

/// Code for a single (possibly compensated) weight under `scale`.
///
/// The quotient is formed in f64 so the rounding decision is made on the
/// (nearly) exact ratio. Values beyond the fitted range clamp silently.
#[inline]
pub fn quantize_value(w: f64, scale: f32) -> i8 {
    if scale == 0.0 {
        return 0;
    }
    let q = (w / f64::from(scale)).round_ties_even();
    q.clamp(f64::from(QMIN), f64::from(QMAX)) as i8
}

/// Per-row, per-group scales `max|w| / 7`, row-major.
pub fn compute_group_scales(matrix: &Matrix, group_size: usize) -> Result<Vec<f32>, QuantError> {
    validate_shape(matrix, group_size)?;
    Ok(group_scales(matrix, group_size, false))
}

fn group_scales(matrix: &Matrix, group_size: usize, clip_search: bool) -> Vec<f32> {
    matrix.iter_rows().flat_map(|row| row.chunks(group_size).map(move |g| fit_group_scale(g, clip_search))).collect()
}

/// Round-to-nearest group quantization.
pub fn quantize_rtn(matrix: &Matrix, config: &QuantConfig) -> Result<QuantizedTensor, QuantError> {
    config.validate()?;
    let group_size = config.group_size;
    validate_shape(matrix, group_size)?;
    let (rows, cols) = matrix.shape();
    let scales = group_scales(matrix, group_size, config.clip_search);
    let groups = cols / group_size;
    let mut codes = Vec::with_capacity(rows * cols);
    for (r, row) in matrix.iter_rows().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            codes.push(quantize_value(f64::from(w), scales[r * groups + c / group_size]));
        }
    }
    Ok(QuantizedTensor::pack(rows, cols, group_size, scales, &codes))
}

/// `code * scale` elementwise.
pub fn dequantize(qt: &QuantizedTensor) -> Matrix {
    let gs = qt.group_size();
    Matrix::from_fn(qt.rows(), qt.cols(), |r, c| f32::from(qt.code(r, c)) * qt.scale(r, c / gs))
}

/// Mean squared error between `w` and `dequantize(qt)`.
pub fn reconstruction_mse(w: &Matrix, qt: &QuantizedTensor) -> Result<f64, QuantError> {
    if w.shape() != qt.shape() {
        return Err(QuantError::dims("reconstruction_mse", w.shape(), qt.shape()));
    }
    let deq = dequantize(qt);
    Ok(mse(w, &deq))
}

pub(crate) fn mse(a: &Matrix, b: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    sum / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_random_matrix, Distribution};
    use proptest::prelude::*;

    fn row(v: &[f32]) -> Matrix {
        Matrix::from_rows(&[v]).unwrap()
    }

    #[test]
    fn divisibility_contract() {
        let w = Matrix::zeros(256, 100);
        assert_eq!(validate_shape(&w, 32), Err(QuantError::ShapeMismatch { rows: 256, cols: 100, group_size: 32 }));
        validate_shape(&Matrix::zeros(4, 32), 16).unwrap();
        assert!(matches!(validate_shape(&w, 0), Err(QuantError::ShapeMismatch { .. })));
    }

    #[test]
    fn nan_is_rejected() {
        let mut w = Matrix::zeros(4, 32);
        w.set(1, 5, f32::NAN);
        assert_eq!(validate_shape(&w, 16), Err(QuantError::NonFinite { row: 1, col: 5 }));
    }

    #[test]
    fn group_scale_examples() {
        let s = compute_group_scales(&row(&[-14.0, 7.0, 3.5, 0.0]), 4).unwrap();
        assert_eq!(s, vec![2.0]);
        assert_eq!(compute_group_scales(&row(&[0.0; 4]), 4).unwrap(), vec![0.0]);
        assert_eq!(compute_group_scales(&row(&[7.0; 4]), 4).unwrap(), vec![1.0]);
    }

    #[test]
    fn rtn_examples() {
        let cfg = QuantConfig::rtn(4);
        // scale 2.0 from the -14 anchor
        let qt = quantize_rtn(&row(&[2.0, -14.0, 0.0, 4.0]), &cfg).unwrap();
        assert_eq!(qt.code(0, 0), 1);
        assert_eq!(dequantize(&qt).get(0, 0), 2.0);

        // -16 with scale 2 sits on the clip boundary
        assert_eq!(quantize_value(-16.0, 2.0), -8);
        assert_eq!(f32::from(quantize_value(-16.0, 2.0)) * 2.0, -16.0);
        assert_eq!(quantize_value(-100.0, 2.0), -8);
        assert_eq!(quantize_value(100.0, 2.0), 7);

        let qt = quantize_rtn(&row(&[1.0, -1.0, 0.4, 0.6]), &cfg).unwrap();
        assert_eq!(qt.scale(0, 0), 1.0 / 7.0);
        assert_eq!(qt.unpack_row(0), vec![7, -7, 3, 4]);
    }

    #[test]
    fn ties_round_to_even() {
        assert_eq!(quantize_value(2.5, 1.0), 2);
        assert_eq!(quantize_value(3.5, 1.0), 4);
        assert_eq!(quantize_value(-0.5, 1.0), 0);
    }

    #[test]
    fn zero_group_is_exact() {
        let w = Matrix::from_rows(&[[0.0, 0.0, 1.0, -3.0]]).unwrap();
        let qt = quantize_rtn(&w, &QuantConfig::rtn(2)).unwrap();
        assert_eq!(qt.scale(0, 0), 0.0);
        let d = dequantize(&qt);
        assert_eq!(d.row(0)[..2], [0.0, 0.0]);
    }

    #[test]
    fn single_group_mse_matches_hand_value() {
        let w = row(&[1.0, -1.0, 0.4, 0.6]);
        let qt = quantize_rtn(&w, &QuantConfig::rtn(4)).unwrap();
        let s = 1.0f32 / 7.0;
        // f32 reconstruction of 3/7 and 4/7, as the dequantizer forms them
        let e2 = f64::from(0.4f32) - f64::from(3.0 * s);
        let e3 = f64::from(0.6f32) - f64::from(4.0 * s);
        let e0 = 1.0 - f64::from(7.0 * s);
        let expected = (2.0 * e0 * e0 + e2 * e2 + e3 * e3) / 4.0;
        let got = reconstruction_mse(&w, &qt).unwrap();
        assert_eq!(got, expected);
        let ideal = ((0.4 - 3.0 / 7.0f64).powi(2) + (0.6 - 4.0 / 7.0f64).powi(2)) / 4.0;
        assert!((got - ideal).abs() < 1e-9, "{got} vs {ideal}");
    }

    #[test]
    fn representable_roundtrip() {
        let cfg = QuantConfig::rtn(4);
        let w = row(&[0.75, -0.5, 0.25, 1.75]);
        let qt = quantize_rtn(&w, &cfg).unwrap();
        assert_eq!(dequantize(&qt), w);
        assert_eq!(reconstruction_mse(&w, &qt).unwrap(), 0.0);
    }

    #[test]
    fn mse_shape_mismatch() {
        let qt = quantize_rtn(&Matrix::zeros(2, 4), &QuantConfig::rtn(4)).unwrap();
        assert!(reconstruction_mse(&Matrix::zeros(4, 2), &qt).is_err());
    }

    #[test]
    fn odd_width_padding_does_not_leak() {
        let w = seeded_random_matrix(3, 5, 9, Distribution::Uniform);
        let qt = quantize_rtn(&w, &QuantConfig::rtn(5)).unwrap();
        assert_eq!(qt.row_bytes(), 3);
        for r in 0..3 {
            assert_eq!(qt.row_codes(r)[2] & 0xf0, 0);
        }
        let again = QuantizedTensor::from_parts(3, 5, 5, qt.scales().to_vec(), qt.packed_codes().to_vec()).unwrap();
        assert_eq!(dequantize(&again), dequantize(&qt));
    }

    #[test]
    fn clip_search_never_increases_group_error() {
        for seed in 0..50 {
            let w = seeded_random_matrix(4, 32, seed, Distribution::Gaussian { std_dev: 1.0 });
            let plain = quantize_rtn(&w, &QuantConfig::rtn(16)).unwrap();
            let mut cfg = QuantConfig::rtn(16);
            cfg.clip_search = true;
            let clipped = quantize_rtn(&w, &cfg).unwrap();
            assert!(reconstruction_mse(&w, &clipped).unwrap() <= reconstruction_mse(&w, &plain).unwrap());
        }
    }

    #[test]
    fn finer_groups_can_lose_on_grid_aligned_values() {
        // Every value sits on the coarse grid (scale 1), but the second
        // half's finer scale is 5/7, so 3.0 no longer lands on a code.
        let w = row(&[7.0, 1.0, 5.0, 3.0]);
        let coarse = quantize_rtn(&w, &QuantConfig::rtn(4)).unwrap();
        let fine = quantize_rtn(&w, &QuantConfig::rtn(2)).unwrap();
        assert_eq!(reconstruction_mse(&w, &coarse).unwrap(), 0.0);
        assert!(reconstruction_mse(&w, &fine).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn codes_in_range_and_error_bounded(
            seed in any::<u64>(),
            rows in 1usize..6,
            groups in 1usize..4,
            group_size in prop::sample::select(vec![1usize, 2, 3, 8, 16]),
            std_dev in 0.001f32..100.0,
        ) {
            let cols = groups * group_size;
            let w = seeded_random_matrix(rows, cols, seed, Distribution::Gaussian { std_dev });
            let qt = quantize_rtn(&w, &QuantConfig::rtn(group_size)).unwrap();
            let d = dequantize(&qt);
            for r in 0..rows {
                for c in 0..cols {
                    let q = qt.code(r, c);
                    prop_assert!((QMIN..=QMAX).contains(&q));
                    let s = qt.scale(r, c / group_size);
                    let (x, y) = (w.get(r, c), d.get(r, c));
                    let ulp = f32::EPSILON * x.abs().max(y.abs());
                    prop_assert!(f64::from((x - y).abs()) <= f64::from(s) / 2.0 + f64::from(ulp));
                }
            }
        }

        #[test]
        fn rtn_is_deterministic(seed in any::<u64>()) {
            let w = seeded_random_matrix(4, 32, seed, Distribution::Uniform);
            let a = quantize_rtn(&w, &QuantConfig::rtn(16)).unwrap();
            let b = quantize_rtn(&w, &QuantConfig::rtn(16)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
