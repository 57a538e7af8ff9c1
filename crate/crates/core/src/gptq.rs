//! Hessian-compensated column-sequential quantization.
//!
//! The layer objective is `Σ ‖x·Wᵀ − x·Ŵᵀ‖²` over calibration rows, whose
//! Hessian with respect to any weight row is `H = 2·XᵀX / n`. Columns are
//! quantized left to right; after column `j` is rounded, its error is spread
//! over the still-unquantized columns through the inverse Hessian restricted
//! to them. With `U` the upper Cholesky factor of `H⁻¹` (`H⁻¹ = UᵀU`), row
//! `j` of `U` is exactly that restricted inverse row scaled by `1/√[·]_jj`,
//! so the update is
//!
//! ```text
//! e   = (w_j − ŵ_j) / U_jj
//! w_k ← w_k − e · U_jk      for k > j
//! ```
//!
//! Group scales are fitted when the column pointer enters a group, on the
//! compensated working weights.

use crate::error::QuantError;
use crate::gsq::CalibrationSet;
use crate::matrix::Matrix;
use crate::quant::{fit_group_scale, quantize_value, validate_shape, QuantConfig, QuantizedTensor};

/// Damped `2·XᵀX / n`, stored in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    dim: usize,
    data: Vec<f64>,
    damping_applied: f64,
}

impl Hessian {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data, damping_applied: 0.0 }
    }

    /// Wraps an explicit matrix. It must be finite, symmetric to 1e-6
    /// relative, and positive definite.
    pub fn from_matrix(dim: usize, data: Vec<f64>) -> Result<Self, QuantError> {
        if data.len() != dim * dim {
            return Err(QuantError::dims("hessian", (dim, dim), (data.len(), 1)));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(QuantError::NonFinite { row: i / dim, col: i % dim });
        }
        let h = Self { dim, data, damping_applied: 0.0 };
        if !h.is_symmetric(1e-6) {
            return Err(QuantError::InvalidConfig("hessian is not symmetric".into()));
        }
        cholesky(&h.data, dim)?;
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn damping_applied(&self) -> f64 {
        self.damping_applied
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let n = self.dim;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (0..n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= rel_tol * scale))
    }
}

/// `H = 2·XᵀX / n`; dead channels (zero diagonal) get a unit diagonal, then
/// `damping · mean(diag(H))` is added to the diagonal.
pub fn build_hessian(calib: &CalibrationSet, damping: f32) -> Result<Hessian, QuantError> {
    if !(damping.is_finite() && damping > 0.0) {
        return Err(QuantError::InvalidConfig(format!("damping must be positive, got {damping}")));
    }
    let x = calib.samples();
    let (n, dim) = x.shape();
    let mut data = vec![0.0f64; dim * dim];
    for row in x.iter_rows() {
        for i in 0..dim {
            let xi = f64::from(row[i]);
            if xi == 0.0 {
                continue;
            }
            let dst = &mut data[i * dim..];
            for j in i..dim {
                dst[j] += xi * f64::from(row[j]);
            }
        }
    }
    let norm = 2.0 / n as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = data[i * dim + j] * norm;
            data[i * dim + j] = v;
            data[j * dim + i] = v;
        }
    }
    for i in 0..dim {
        if data[i * dim + i] == 0.0 {
            data[i * dim + i] = 1.0;
        }
    }
    let mean_diag = (0..dim).map(|i| data[i * dim + i]).sum::<f64>() / dim.max(1) as f64;
    let damping_applied = f64::from(damping) * mean_diag;
    for i in 0..dim {
        data[i * dim + i] += damping_applied;
    }
    cholesky(&data, dim)?;
    Ok(Hessian { dim, data, damping_applied })
}

/// Lower Cholesky factor of a row-major SPD matrix.
pub(crate) fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>, QuantError> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0 && sum.is_finite()) {
                    return Err(QuantError::SingularHessian { dim: n, pivot: i });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Inverse of `L` (lower triangular), also lower triangular.
fn invert_lower(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0 / l[i * n + i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum += l[i * n + k] * inv[k * n + j];
            }
            inv[i * n + j] = -sum / l[i * n + i];
        }
    }
    inv
}

/// Upper Cholesky factor `U` of `H⁻¹`, row-major.
fn inverse_upper_factor(h: &Hessian) -> Result<Vec<f64>, QuantError> {
    let n = h.dim;
    let l = cholesky(&h.data, n)?;
    let linv = invert_lower(&l, n);
    // H⁻¹ = L⁻ᵀ L⁻¹
    let mut hinv = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let mut sum = 0.0;
            for k in j..n {
                sum += linv[k * n + i] * linv[k * n + j];
            }
            hinv[i * n + j] = sum;
            hinv[j * n + i] = sum;
        }
    }
    let lower = cholesky(&hinv, n)?;
    let mut upper = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            upper[i * n + j] = lower[j * n + i];
        }
    }
    Ok(upper)
}

/// GPTQ-quantizes `w` against Hessian `h`. Output layout is identical to
/// [`crate::quantize_rtn`].
pub fn gptq_quantize(w: &Matrix, h: &Hessian, config: &QuantConfig) -> Result<QuantizedTensor, QuantError> {
    let mut cfg = config.clone();
    cfg.method = crate::quant::Method::Gptq;
    cfg.validate()?;
    let gs = config.group_size;
    validate_shape(w, gs)?;
    let (rows, cols) = w.shape();
    if h.dim != cols {
        return Err(QuantError::dims("hessian dim vs weight cols", (cols, cols), (h.dim, h.dim)));
    }
    let u = inverse_upper_factor(h)?;
    let groups = cols / gs;
    let mut work: Vec<f64> = w.as_slice().iter().map(|&v| f64::from(v)).collect();
    let mut scales = vec![0.0f32; rows * groups];
    let mut codes = vec![0i8; rows * cols];
    let mut group_buf = vec![0.0f32; gs];

    for j in 0..cols {
        if j % gs == 0 {
            let g = j / gs;
            for r in 0..rows {
                let src = &work[r * cols + j..r * cols + j + gs];
                for (d, s) in group_buf.iter_mut().zip(src) {
                    *d = *s as f32;
                }
                scales[r * groups + g] = fit_group_scale(&group_buf, config.clip_search);
            }
        }
        let d = u[j * cols + j];
        let urow = &u[j * cols + j + 1..(j + 1) * cols];
        for r in 0..rows {
            let scale = scales[r * groups + j / gs];
            let row = &mut work[r * cols..(r + 1) * cols];
            let q = quantize_value(row[j], scale);
            codes[r * cols + j] = q;
            let err = (row[j] - f64::from(f32::from(q) * scale)) / d;
            for (wk, &ujk) in row[j + 1..].iter_mut().zip(urow) {
                *wk -= err * ujk;
            }
        }
    }
    Ok(QuantizedTensor::pack(rows, cols, gs, scales, &codes))
}

/// Mean over calibration rows of `‖x·Wᵀ − x·Ŵᵀ‖²`, accumulated in f64.
pub fn layer_output_error(w: &Matrix, approx: &Matrix, calib: &CalibrationSet) -> Result<f64, QuantError> {
    if w.shape() != approx.shape() {
        return Err(QuantError::dims("layer_output_error weights", w.shape(), approx.shape()));
    }
    if calib.in_features() != w.cols() {
        return Err(QuantError::dims(
            "layer_output_error calibration",
            (calib.n_samples(), w.cols()),
            calib.samples().shape(),
        ));
    }
    let diff: Vec<f64> =
        w.as_slice().iter().zip(approx.as_slice()).map(|(&a, &b)| f64::from(a) - f64::from(b)).collect();
    let cols = w.cols();
    let mut total = 0.0f64;
    for x in calib.samples().iter_rows() {
        for drow in diff.chunks_exact(cols.max(1)).take(w.rows()) {
            let y: f64 = drow.iter().zip(x).map(|(d, &v)| d * f64::from(v)).sum();
            total += y * y;
        }
    }
    Ok(total / calib.n_samples() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{dequantize, quantize_rtn, Method};
    use crate::rng::{seeded_random_matrix, Distribution};
    use proptest::prelude::*;

    fn cfg(group: usize) -> QuantConfig {
        QuantConfig::new(Method::Gptq, group)
    }

    fn calib(m: Matrix) -> CalibrationSet {
        CalibrationSet::new(m).unwrap()
    }

    #[test]
    fn identity_rows_give_diagonal_hessian() {
        let h = build_hessian(&calib(Matrix::identity(4)), 0.01).unwrap();
        // diag 2/4, damping 0.01 * 0.5
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.5 + 0.005 } else { 0.0 };
                assert!((h.get(i, j) - expected).abs() < 1e-9, "{i},{j}");
            }
        }
    }

    #[test]
    fn single_sample_hand_case() {
        let h = build_hessian(&calib(Matrix::from_rows(&[[1.0f32, 2.0]]).unwrap()), 0.01).unwrap();
        assert!((h.damping_applied() - 0.05).abs() < 1e-8);
        let expected = [2.05, 4.0, 4.0, 8.05];
        for (got, want) in h.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn duplicate_samples_do_not_change_hessian() {
        let one = build_hessian(&calib(Matrix::from_rows(&[[1.0f32, -3.0, 0.5]]).unwrap()), 0.01).unwrap();
        let three = build_hessian(
            &calib(Matrix::from_rows(&[[1.0f32, -3.0, 0.5], [1.0, -3.0, 0.5], [1.0, -3.0, 0.5]]).unwrap()),
            0.01,
        )
        .unwrap();
        for (a, b) in one.as_slice().iter().zip(three.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn dead_channel_gets_unit_diagonal() {
        let h = build_hessian(&calib(Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap()), 0.01).unwrap();
        // diag [2, 1] -> mean 1.5
        assert!((h.get(1, 1) - 1.015).abs() < 1e-9);
        assert!((h.get(0, 0) - 2.015).abs() < 1e-9);
    }

    #[test]
    fn damping_must_be_positive() {
        let c = calib(Matrix::identity(2));
        assert!(build_hessian(&c, 0.0).is_err());
        assert!(build_hessian(&c, f32::NAN).is_err());
    }

    #[test]
    fn singular_matrix_is_reported() {
        assert!(matches!(
            Hessian::from_matrix(2, vec![1.0, 1.0, 1.0, 1.0]),
            Err(QuantError::SingularHessian { dim: 2, pivot: 1 })
        ));
        assert!(Hessian::from_matrix(2, vec![2.0, 1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn identity_hessian_matches_rtn() {
        for seed in 0..20 {
            let w = seeded_random_matrix(8, 32, seed, Distribution::Gaussian { std_dev: 1.0 });
            let g = gptq_quantize(&w, &Hessian::identity(32), &cfg(16)).unwrap();
            let r = quantize_rtn(&w, &QuantConfig::rtn(16)).unwrap();
            assert_eq!(g.packed_codes(), r.packed_codes());
            assert_eq!(g.scales(), r.scales());
        }
    }

    #[test]
    fn inverse_factor_reconstructs_inverse() {
        let x = seeded_random_matrix(20, 6, 3, Distribution::Gaussian { std_dev: 1.0 });
        let h = build_hessian(&calib(x), 0.01).unwrap();
        let u = inverse_upper_factor(&h).unwrap();
        let n = 6;
        // (UᵀU) · H == I
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    let hinv_ik: f64 = (0..n).map(|t| u[t * n + i] * u[t * n + k]).sum();
                    v += hinv_ik * h.get(k, j);
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "{i},{j}: {v}");
            }
        }
    }

    /// Textbook OBQ with an explicitly downdated inverse Hessian.
    fn obq_reference(w: &Matrix, h: &Hessian, group: usize) -> Vec<i8> {
        let n = h.dim();
        let l = cholesky(h.as_slice(), n).unwrap();
        let linv = invert_lower(&l, n);
        let mut hinv: Vec<f64> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                (0..n).map(|k| linv[k * n + i] * linv[k * n + j]).sum()
            })
            .collect();
        let mut work: Vec<Vec<f64>> = w.iter_rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        let mut codes = vec![0i8; w.rows() * n];
        let mut scales = vec![0.0f32; w.rows()];
        for j in 0..n {
            if j % group == 0 {
                for (r, row) in work.iter().enumerate() {
                    let g: Vec<f32> = row[j..j + group].iter().map(|&v| v as f32).collect();
                    scales[r] = fit_group_scale(&g, false);
                }
            }
            let djj = hinv[j * n + j];
            for (r, row) in work.iter_mut().enumerate() {
                let q = quantize_value(row[j], scales[r]);
                codes[r * n + j] = q;
                let e = (row[j] - f64::from(f32::from(q) * scales[r])) / djj;
                for k in j + 1..n {
                    row[k] -= e * hinv[j * n + k];
                }
            }
            let pivot_row: Vec<f64> = hinv[j * n..(j + 1) * n].to_vec();
            for a in 0..n {
                let hij = hinv[a * n + j];
                for b in 0..n {
                    hinv[a * n + b] -= hij * pivot_row[b] / djj;
                }
            }
        }
        codes
    }

    #[test]
    fn cholesky_path_matches_explicit_downdate() {
        let mut total = 0;
        let mut same = 0;
        for seed in 0..10 {
            let w = seeded_random_matrix(6, 16, seed, Distribution::Gaussian { std_dev: 1.0 });
            let x = seeded_random_matrix(24, 16, seed + 100, Distribution::Gaussian { std_dev: 1.0 });
            let h = build_hessian(&calib(x), 0.01).unwrap();
            let q = gptq_quantize(&w, &h, &cfg(8)).unwrap();
            let reference = obq_reference(&w, &h, 8);
            for r in 0..6 {
                for c in 0..16 {
                    total += 1;
                    same += usize::from(q.code(r, c) == reference[r * 16 + c]);
                }
            }
        }
        // float reassociation can flip a code sitting on a rounding boundary
        assert!(same * 1000 >= total * 995, "{same}/{total}");
    }

    #[test]
    fn two_weight_case_is_no_worse_than_any_compensated_pair() {
        let w = Matrix::from_rows(&[[1.0f32, 1.0]]).unwrap();
        let c = calib(Matrix::from_rows(&[[1.0f32, 1.0]; 4]).unwrap());
        let h = build_hessian(&c, 0.01).unwrap();
        let g = gptq_quantize(&w, &h, &cfg(2)).unwrap();
        let r = quantize_rtn(&w, &QuantConfig::rtn(2)).unwrap();
        let eg = layer_output_error(&w, &dequantize(&g), &c).unwrap();
        let er = layer_output_error(&w, &dequantize(&r), &c).unwrap();
        assert!(eg <= er);
        // brute force over all 16x16 code pairs at the fitted scale
        let s = g.scale(0, 0);
        let mut best = f64::INFINITY;
        for a in -8i8..=7 {
            for b in -8i8..=7 {
                let approx = Matrix::from_rows(&[[f32::from(a) * s, f32::from(b) * s]]).unwrap();
                best = best.min(layer_output_error(&w, &approx, &c).unwrap());
            }
        }
        assert!(eg <= best + 1e-12);
    }

    #[test]
    fn output_error_examples() {
        let w = seeded_random_matrix(3, 4, 1, Distribution::Uniform);
        let c = calib(seeded_random_matrix(5, 4, 2, Distribution::Uniform));
        assert_eq!(layer_output_error(&w, &w, &c).unwrap(), 0.0);
        let zeros = calib(Matrix::zeros(3, 4));
        assert_eq!(layer_output_error(&w, &Matrix::zeros(3, 4), &zeros).unwrap(), 0.0);
        // hand case: W − Ŵ = [[1, 0], [0, 2]], samples [1, 1] and [2, 0]
        let w = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 2.0]]).unwrap();
        let c = calib(Matrix::from_rows(&[[1.0f32, 1.0], [2.0, 0.0]]).unwrap());
        // sample 1: (1, 2) -> 5; sample 2: (2, 0) -> 4; mean 4.5
        assert_eq!(layer_output_error(&w, &Matrix::zeros(2, 2), &c).unwrap(), 4.5);
        assert!(layer_output_error(&w, &Matrix::zeros(2, 3), &c).is_err());
    }

    #[test]
    fn shape_and_dim_errors() {
        let w = Matrix::zeros(256, 100);
        assert_eq!(
            gptq_quantize(&w, &Hessian::identity(100), &cfg(32)).unwrap_err(),
            QuantError::ShapeMismatch { rows: 256, cols: 100, group_size: 32 }
        );
        assert!(matches!(
            gptq_quantize(&Matrix::zeros(2, 8), &Hessian::identity(4), &cfg(4)),
            Err(QuantError::DimMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn codes_in_range_and_deterministic(seed in any::<u64>(), std_dev in 0.01f32..50.0) {
            let w = seeded_random_matrix(4, 16, seed, Distribution::Gaussian { std_dev });
            let x = seeded_random_matrix(8, 16, seed.wrapping_add(1), Distribution::Gaussian { std_dev: 1.0 });
            let h = build_hessian(&calib(x), 0.01).unwrap();
            prop_assert!(h.is_symmetric(1e-6));
            let a = gptq_quantize(&w, &h, &cfg(8)).unwrap();
            let b = gptq_quantize(&w, &h, &cfg(8)).unwrap();
            prop_assert_eq!(&a, &b);
            for r in 0..4 {
                for c in 0..16 {
                    prop_assert!((-8..=7).contains(&a.code(r, c)));
                }
            }
        }
    }
}
