use crate::analysis::AnalysisError;
use crate::diffcore::Tensor;

fn centered(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    for c in 0..d {
        let mean = (0..n).map(|r| out[r * d + c]).sum::<f64>() / n as f64;
        (0..n).for_each(|r| out[r * d + c] -= mean);
    }
    out
}

/// Squared Frobenius norm of `aᵀ b` for row-major `n × da` and `n × db`.
fn cross_norm_sq(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..da {
        for j in 0..db {
            let v: f64 = (0..n).map(|r| a[r * da + i] * b[r * db + j]).sum();
            total += v * v;
        }
    }
    total
}

/// Linear centered kernel alignment between two representations of the same `n` items.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64, AnalysisError> {
    let n = x.rows();
    if x.ndim() != 2 || y.ndim() != 2 || y.rows() != n || n < 2 {
        return Err(AnalysisError::Degenerate(format!("CKA needs two n×d matrices with n ≥ 2, got {:?} and {:?}", x.shape(), y.shape())));
    }
    let (dx, dy) = (x.cols(), y.cols());
    let (xc, yc) = (centered(x), centered(y));
    let xx = cross_norm_sq(&xc, dx, &xc, dx, n).sqrt();
    let yy = cross_norm_sq(&yc, dy, &yc, dy, n).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(AnalysisError::Degenerate("a centered Gram matrix is zero".into()));
    }
    Ok(cross_norm_sq(&xc, dx, &yc, dy, n) / (xx * yy))
}
