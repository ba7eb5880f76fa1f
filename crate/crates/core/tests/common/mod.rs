//! Independent reference computations shared by the integration tests.
//!
//! Everything here is built only from the public forward map and loss, so it
//! checks the closed-form derivatives without reusing any of their code.
#![allow(dead_code)]

use gdn_core::{forward, loss, GdnParams, BETA_FLOOR};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;
/// Entries closer than this to a constraint are differenced one-sidedly.
pub const BOUNDARY_BAND: f64 = 1e-6;
/// Denominator floor for relative errors, so entries that are zero up to
/// rounding are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn normal_batch(rng: &mut ChaCha8Rng, m: usize, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random parameters satisfying every constraint. With `boundary`, some
/// off-diagonal gamma entries sit exactly at zero (with alpha = 1 there) and
/// one epsilon sits on its upper bound.
pub fn random_params(n: usize, rng: &mut ChaCha8Rng, boundary: bool) -> GdnParams {
    let h = loop {
        let h = Array2::from_shape_fn((n, n), |(i, j)| {
            let e = if i == j { 1.0 } else { 0.0 };
            e + rng.gen_range(-0.4..0.4)
        });
        let det: f64 = nalgebra::DMatrix::from_fn(n, n, |i, j| h[[i, j]]).determinant();
        if det.abs() > 0.2 {
            break h;
        }
    };
    let mut alpha = Array2::from_shape_fn((n, n), |_| rng.gen_range(1.0..2.5));
    let beta = Array1::from_shape_fn(n, |_| rng.gen_range(0.3..1.5));
    let mut gamma = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..0.4));
    let mut epsilon = Array1::from_shape_fn(n, |i| rng.gen_range(0.1..0.9) / alpha[[i, i]]);
    if boundary && n > 1 {
        for k in 0..n {
            let (i, j) = (k, (k + 1) % n);
            if rng.gen_bool(0.5) {
                gamma[[i, j]] = 0.0;
                alpha[[i, j]] = 1.0;
            }
        }
        epsilon[n - 1] = 1.0 / alpha[[n - 1, n - 1]];
    }
    GdnParams {
        h,
        alpha,
        beta,
        gamma,
        epsilon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    Central,
    Forward,
    Backward,
}

/// Which difference to use for flat parameter `k` so the probe never leaves
/// the feasible set.
pub fn side_for(params: &GdnParams, k: usize) -> Side {
    let n = params.dim();
    let nn = n * n;
    let near = |v: f64, b: f64| (v - b).abs() <= BOUNDARY_BAND;
    if k < nn {
        Side::Central
    } else if k < 2 * nn {
        let a = params.alpha.as_slice().unwrap()[k - nn];
        if near(a, 1.0) {
            Side::Forward
        } else {
            Side::Central
        }
    } else if k < 2 * nn + n {
        if near(params.beta[k - 2 * nn], BETA_FLOOR) {
            Side::Forward
        } else {
            Side::Central
        }
    } else if k < 3 * nn + n {
        if near(params.gamma.as_slice().unwrap()[k - 2 * nn - n], 0.0) {
            Side::Forward
        } else {
            Side::Central
        }
    } else {
        let i = k - 3 * nn - n;
        let e = params.epsilon[i];
        if near(e, 0.0) {
            Side::Forward
        } else if near(e, 1.0 / params.alpha[[i, i]]) {
            Side::Backward
        } else {
            Side::Central
        }
    }
}

/// Finite-difference gradient of the batch loss with respect to every flat
/// parameter. One-sided entries use the second-order three-point stencil.
pub fn fd_loss_gradient(params: &GdnParams, x: ArrayView2<f64>) -> (Vec<f64>, Vec<Side>) {
    let n = params.dim();
    let base = params.to_flat();
    let eval = |k: usize, delta: f64| {
        let mut flat = base.clone();
        flat[k] += delta;
        let p = GdnParams::from_flat(n, &flat).unwrap();
        loss(&p, x).unwrap().loss
    };
    let f0 = loss(params, x).unwrap().loss;
    let h = FD_STEP;
    let mut grad = Vec::with_capacity(base.len());
    let mut sides = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let side = side_for(params, k);
        let g = match side {
            Side::Central => (eval(k, h) - eval(k, -h)) / (2.0 * h),
            Side::Forward => (-3.0 * f0 + 4.0 * eval(k, h) - eval(k, 2.0 * h)) / (2.0 * h),
            Side::Backward => (3.0 * f0 - 4.0 * eval(k, -h) + eval(k, -2.0 * h)) / (2.0 * h),
        };
        grad.push(g);
        sides.push(side);
    }
    (grad, sides)
}

/// Central-difference `∂y/∂x` at a single input.
pub fn fd_jacobian(params: &GdnParams, x: ArrayView1<f64>) -> Array2<f64> {
    let n = params.dim();
    let mut jac = Array2::zeros((n, n));
    for k in 0..n {
        let mut plus = x.to_owned().insert_axis(ndarray::Axis(0));
        let mut minus = plus.clone();
        plus[[0, k]] += FD_STEP;
        minus[[0, k]] -= FD_STEP;
        let yp = forward(params, plus.view()).unwrap().y;
        let ym = forward(params, minus.view()).unwrap().y;
        for i in 0..n {
            jac[[i, k]] = (yp[[0, i]] - ym[[0, i]]) / (2.0 * FD_STEP);
        }
    }
    jac
}

/// `log|det A|` through nalgebra's LU, independent of the crate's own.
pub fn log_abs_det(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]])
        .determinant()
        .abs()
        .ln()
}

/// Largest column-wise relative error `‖a_k − b_k‖∞ / ‖b_k‖∞`.
pub fn columnwise_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.ncols() {
        let diff = (&a.column(k) - &b.column(k))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = b
            .column(k)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}
