//! Small dense linear algebra on row-major slices.
//!
//! The per-sample hot paths factor an N×N Jacobian once per sample, so the LU
//! here works on caller-owned buffers and never allocates after construction.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{GdnError, Result};

/// LU factorization with partial pivoting, `P A = L U`, row-major storage.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl LuFactor {
    pub fn new(n: usize) -> Self {
        LuFactor {
            n,
            lu: vec![0.0; n * n],
            piv: vec![0; n],
            sign: 1.0,
            singular: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Factor `a` (row-major, n×n). Returns `false` when a zero pivot was hit.
    pub fn factor(&mut self, a: &[f64]) -> bool {
        let n = self.n;
        debug_assert_eq!(a.len(), n * n);
        self.lu.copy_from_slice(a);
        self.sign = 1.0;
        self.singular = false;
        let lu = &mut self.lu;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[k] = p;
            if best == 0.0 || !best.is_finite() {
                self.singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                self.sign = -self.sign;
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..];
            for row_i in tail.chunks_exact_mut(n) {
                let f = row_i[k] / pivot;
                row_i[k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        row_i[j] -= f * row_k[j];
                    }
                }
            }
        }
        !self.singular
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// `log|det A|`; `-inf` for a singular matrix.
    pub fn log_abs_det(&self) -> f64 {
        if self.singular {
            return f64::NEG_INFINITY;
        }
        let n = self.n;
        (0..n).map(|i| self.lu[i * n + i].abs().ln()).sum()
    }

    /// Sign of `det A` (0 when singular).
    pub fn det_sign(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        let n = self.n;
        (0..n).fold(self.sign, |s, i| s * self.lu[i * n + i].signum())
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, v)| l * v).sum();
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..]
                .iter()
                .zip(&b[i + 1..])
                .map(|(u, v)| u * v)
                .sum();
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Write `A^{-T}` (row-major) into `out`. Row `j` of `A^{-T}` is the
    /// solution of `A w = e_j`.
    pub fn inverse_transpose_into(&self, out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let row = &mut out[j * n..(j + 1) * n];
            row.fill(0.0);
            row[j] = 1.0;
            self.solve_in_place(row);
        }
    }
}

/// `log|det A|` and `A^{-1}` for a square matrix.
pub fn inverse_and_logdet(a: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    let mut lu = LuFactor::new(n);
    let flat = a.as_standard_layout();
    if !lu.factor(flat.as_slice().expect("standard layout")) {
        return Err(GdnError::Singular("matrix is singular".into()));
    }
    let mut inv_t = vec![0.0; n * n];
    lu.inverse_transpose_into(&mut inv_t);
    let inv_t = Array2::from_shape_vec((n, n), inv_t).expect("shape");
    Ok((
        inv_t.reversed_axes().as_standard_layout().to_owned(),
        lu.log_abs_det(),
    ))
}

/// Eigenvalues of the symmetric part `(A + Aᵀ)/2`, ascending.
pub fn symmetric_part_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Sample covariance (rows are samples) about the sample mean.
pub fn covariance(x: ArrayView2<f64>) -> Array2<f64> {
    let m = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &x - &mean;
    centered.t().dot(&centered) / m
}

/// Symmetric (ZCA) whitening matrix `C^{-1/2}` of the batch covariance.
pub fn zca_whitening(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.ncols();
    if x.nrows() < 2 {
        return Err(GdnError::Degenerate(
            "whitening needs at least two samples".into(),
        ));
    }
    let c = covariance(x);
    let m = DMatrix::from_fn(n, n, |i, j| c[[i, j]]);
    let eig = m.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    if max_ev <= 0.0 {
        return Err(GdnError::Degenerate("zero-variance batch".into()));
    }
    // Floor tiny eigenvalues so rank-deficient patch sets stay invertible.
    let floor = max_ev * 1e-10;
    let mut w = Array2::zeros((n, n));
    for k in 0..n {
        let s = 1.0 / eig.eigenvalues[k].max(floor).sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                w[[i, j]] += s * v[i] * v[j];
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn lu_logdet_and_sign() {
        let a = [0.0, 2.0, 1.0, 1.0, 3.0, 1.0, 4.0, 1.0, 2.0];
        let mut lu = LuFactor::new(3);
        assert!(lu.factor(&a));
        // det = 0*(6-1) - 2*(2-4) + 1*(1-12) = -7
        assert_relative_eq!(lu.log_abs_det(), 7.0_f64.ln(), epsilon = 1e-14);
        assert_eq!(lu.det_sign(), -1.0);
    }

    #[test]
    fn inverse_transpose_matches_definition() {
        let a = array![[2.0, 1.0, 0.5], [0.3, 3.0, -1.0], [1.0, 0.0, 1.5]];
        let mut lu = LuFactor::new(3);
        lu.factor(a.as_slice().unwrap());
        let mut g = vec![0.0; 9];
        lu.inverse_transpose_into(&mut g);
        let g = Array2::from_shape_vec((3, 3), g).unwrap();
        let prod = g.t().dot(&a);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[[i, j]], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let mut lu = LuFactor::new(2);
        assert!(!lu.factor(&a));
        assert_eq!(lu.log_abs_det(), f64::NEG_INFINITY);
        assert!(inverse_and_logdet(&array![[1.0, 2.0], [2.0, 4.0]]).is_err());
    }

    #[test]
    fn zca_whitens() {
        let x = array![
            [1.0, 2.0],
            [2.0, 1.0],
            [-1.0, -3.0],
            [-2.0, 0.0],
            [0.0, 0.5]
        ];
        let w = zca_whitening(x.view()).unwrap();
        let xw = x.dot(&w.t());
        let c = covariance(xw.view());
        assert_relative_eq!(c[[0, 0]], 1.0, epsilon = 1e-10);
        assert_relative_eq!(c[[1, 1]], 1.0, epsilon = 1e-10);
        assert_relative_eq!(c[[0, 1]], 0.0, epsilon = 1e-10);
        assert_relative_eq!(w[[0, 1]], w[[1, 0]], epsilon = 1e-14);
    }
}
