//! Slice-level numeric kernels shared by the differentiable graph and the
//! tape-free inference path. All matrices are row-major.

use crate::scalar::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-wise softmax in place. With `causal`, entries `j > i` of row `i` are zero.
pub fn softmax_rows<T: Scalar>(x: &mut [T], rows: usize, cols: usize, causal: bool) {
    for i in 0..rows {
        let row = &mut x[i * cols..(i + 1) * cols];
        let live = if causal { (i + 1).min(cols) } else { cols };
        let max = row[..live].iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row[..live].iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row[..live].iter_mut() {
            *v /= sum;
        }
        for v in row[live..].iter_mut() {
            *v = T::zero();
        }
    }
}

/// Row-wise log-softmax in place.
pub fn log_softmax_rows<T: Scalar>(x: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        let row = &mut x[i * cols..(i + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each row to zero mean and unit variance, then applies `gamma`/`beta`.
pub fn layer_norm_rows<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], out: &mut [T], rows: usize, cols: usize) {
    let n = T::lit(cols as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        let o = &mut out[i * cols..(i + 1) * cols];
        for j in 0..cols {
            o[j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
