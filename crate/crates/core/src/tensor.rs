//! Dense row-major buffers and the handful of kernels the decoder needs.
//!
//! Everything is generic over [`Scalar`] so the same forward and backward
//! code runs in `f32` for real checkpoints and in `f64` for gradient checks.

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;

pub trait Scalar: Float + Default + Debug + AddAssign + Send + Sync + 'static {
    fn from_f32(v: f32) -> Self;
    fn lit(v: f64) -> Self;

    /// `c = a · b` (or `c += a · b` when `accumulate`), with `a` an `m×k`
    /// row-major matrix and `b` a `k×n` matrix addressed through its
    /// row and column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        b: &[Self],
        b_row_stride: usize,
        b_col_stride: usize,
        c: &mut [Self],
        accumulate: bool,
    );
}

/// Dot product with eight independent partial sums.
#[inline]
fn dot<T: Copy + std::ops::Add<Output = T> + std::ops::Mul<Output = T> + num_traits::Zero>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f32(v: f32) -> Self {
                v as $t
            }

            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                b: &[Self],
                b_row_stride: usize,
                b_col_stride: usize,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m > 0 && n > 0 && k > 0 {
                    let last = (k - 1) * b_row_stride + (n - 1) * b_col_stride;
                    assert!(b.len() > last, "gemm: rhs too short");
                }
                if m == 1 && (b_col_stride == 1 || b_row_stride == 1) {
                    // matrixmultiply packs all of `b` per call; a single row
                    // (incremental decoding) is cheaper as a direct product.
                    let c = &mut c[..n];
                    if !accumulate {
                        c.fill(0.0);
                    }
                    if b_col_stride == 1 {
                        for (kk, &av) in a[..k].iter().enumerate() {
                            let row = &b[kk * b_row_stride..kk * b_row_stride + n];
                            for (cv, &bv) in c.iter_mut().zip(row) {
                                *cv += av * bv;
                            }
                        }
                    } else {
                        for (j, cv) in c.iter_mut().enumerate() {
                            let col = &b[j * b_col_stride..j * b_col_stride + k];
                            *cv += dot(&a[..k], col);
                        }
                    }
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds on all three operands are asserted above and
                // the output does not alias the inputs (distinct borrows).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        b_row_stride as isize,
                        b_col_stride as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `m×k · k×n` into a fresh buffer.
pub fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, b, n, 1, &mut c, false);
    c
}

/// `m×k · (n×k)ᵀ` into a fresh buffer.
pub fn matmul_bt<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, b, 1, k, &mut c, false);
    c
}

/// `(k×m)ᵀ · k×n` into a fresh buffer.
pub fn matmul_at<T: Scalar>(a: &[T], k: usize, m: usize, b: &[T], n: usize) -> Vec<T> {
    // Transpose the small operand explicitly; gemm only strides the rhs.
    let mut at = vec![T::zero(); m * k];
    for r in 0..k {
        for c in 0..m {
            at[c * k + r] = a[r * m + c];
        }
    }
    matmul(&at, m, k, b, n)
}

/// Adds `bias` to each row of the `rows×bias.len()` matrix `x`.
pub fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Numerically stable in-place softmax over one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Log-softmax of one row, accumulated in `f64`.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row.iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN) - lse)
        .collect()
}

/// `log_softmax(row)[index]` without materializing the whole row.
pub fn log_softmax_at<T: Scalar>(row: &[T], index: usize) -> f64 {
    let max = row
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row[index].to_f64().unwrap_or(f64::NAN) - lse
}

/// Index of the largest element; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_loops() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, m, k, &b, n);
        let got = matmul(&a, m, k, &b, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let got = matmul_bt(&a, m, k, &bt, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let got = matmul_at(&at, k, m, &b, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut row = vec![1.0f32, 2.0, 3.0, -1e9];
        softmax_in_place(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert_eq!(row[3], 0.0);
        let lp = log_softmax(&[0.0f32, 0.0]);
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
