//! The forward transform, its Jacobian, a positive-definiteness probe and
//! the fixed-point inverse.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{GdnError, Result};
use crate::kernel::{map_chunks, Prepared, Workspace};
use crate::linalg::{self, LuFactor};
use crate::params::GdnParams;

/// Stopping tolerance on `‖z⁽ⁿ⁺¹⁾ − z⁽ⁿ⁾‖∞` for the fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Iteration cap for the fixed-point inverse.
pub const FIXED_POINT_MAX_ITER: usize = 200;
/// Largest accepted `‖g(z) − y‖∞` for an inverted sample.
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 60;

/// Output of [`forward`] for a batch (rows are samples).
#[derive(Debug, Clone)]
pub struct TransformResult {
    /// Linear responses `z = Hx`.
    pub z: Array2<f64>,
    /// Normalized responses.
    pub y: Array2<f64>,
    /// `log|det ∂y/∂x|` per sample.
    pub logdet: Array1<f64>,
}

fn check_dim(params: &GdnParams, got: usize) -> Result<()> {
    if params.dim() != got {
        return Err(GdnError::DimensionMismatch {
            expected: params.dim(),
            got,
        });
    }
    Ok(())
}

/// `log|det H|`, rejecting a singular linear stage.
pub fn log_abs_det_h(params: &GdnParams) -> Result<f64> {
    let n = params.dim();
    let mut lu = LuFactor::new(n);
    if !lu.factor(params.h.as_slice().expect("standard layout")) {
        return Err(GdnError::Singular("linear stage H".into()));
    }
    Ok(lu.log_abs_det())
}

/// Apply the transform to every row of `x`.
pub fn forward(params: &GdnParams, x: ArrayView2<f64>) -> Result<TransformResult> {
    let n = params.dim();
    check_dim(params, x.ncols())?;
    let m = x.nrows();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let prep = Prepared::new(params);
    let logdet_h = log_abs_det_h(params)?;
    let parts = map_chunks(m, |range| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut ws = Workspace::new(n);
        let mut z = Vec::with_capacity(range.len() * n);
        let mut y = Vec::with_capacity(range.len() * n);
        let mut ld = Vec::with_capacity(range.len());
        for s in range {
            let (_, logdet) = ws.evaluate(&prep, &xs[s * n..(s + 1) * n], s, false)?;
            z.extend_from_slice(&ws.z);
            y.extend_from_slice(&ws.y);
            ld.push(logdet + logdet_h);
        }
        Ok((z, y, ld))
    });
    let mut z = Vec::with_capacity(m * n);
    let mut y = Vec::with_capacity(m * n);
    let mut logdet = Vec::with_capacity(m);
    for part in parts {
        let (pz, py, pl) = part?;
        z.extend(pz);
        y.extend(py);
        logdet.extend(pl);
    }
    Ok(TransformResult {
        z: Array2::from_shape_vec((m, n), z).expect("shape"),
        y: Array2::from_shape_vec((m, n), y).expect("shape"),
        logdet: Array1::from(logdet),
    })
}

/// Normalization stage only: `y = g(z)` for one vector of linear responses.
pub fn normalize(params: &GdnParams, z: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_dim(params, z.len())?;
    let prep = Prepared::new(params);
    let mut ws = Workspace::new(params.dim());
    ws.z.iter_mut().zip(z.iter()).for_each(|(a, b)| *a = *b);
    ws.normalize(&prep)
        .map_err(|(component, what)| GdnError::NonFinite {
            sample: 0,
            component,
            what,
        })?;
    Ok(Array1::from(ws.y.clone()))
}

/// `∂y/∂z` at the linear responses `z`.
pub fn jacobian_wrt_z(params: &GdnParams, z: ArrayView1<f64>) -> Result<Array2<f64>> {
    check_dim(params, z.len())?;
    let n = params.dim();
    let prep = Prepared::new(params);
    let mut ws = Workspace::new(n);
    ws.z.iter_mut().zip(z.iter()).for_each(|(a, b)| *a = *b);
    ws.normalize(&prep)
        .map_err(|(component, what)| GdnError::NonFinite {
            sample: 0,
            component,
            what,
        })?;
    ws.jacobian(&prep);
    Ok(Array2::from_shape_vec((n, n), ws.jac.clone()).expect("shape"))
}

/// `∂y/∂x = (∂y/∂z) H` at the input `x`.
pub fn jacobian_wrt_input(params: &GdnParams, x: ArrayView1<f64>) -> Result<Array2<f64>> {
    check_dim(params, x.len())?;
    let z = params.h.dot(&x);
    Ok(jacobian_wrt_z(params, z.view())?.dot(&params.h))
}

/// Result of [`check_pd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdCheck {
    pub positive_definite: bool,
    /// Smallest eigenvalue of the symmetric part of `∂y/∂z`.
    pub min_eigenvalue: f64,
}

/// Whether the symmetric part of `∂y/∂z` is positive definite at `z`.
pub fn check_pd(params: &GdnParams, z: ArrayView1<f64>) -> Result<PdCheck> {
    let jac = jacobian_wrt_z(params, z)?;
    let min_eigenvalue = linalg::symmetric_part_eigenvalues(jac.view())[0];
    Ok(PdCheck {
        positive_definite: min_eigenvalue > 0.0,
        min_eigenvalue,
    })
}

/// Outcome of inverting a batch; samples that failed keep their best iterate.
#[derive(Debug, Clone)]
pub struct InverseReport {
    pub x: Array2<f64>,
    /// `(sample index, final residual)` for every sample that did not converge.
    pub failures: Vec<(usize, f64)>,
}

/// Invert the transform: strict version that fails on the first sample that
/// does not converge.
pub fn inverse(params: &GdnParams, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let report = inverse_report(params, y)?;
    if let Some(&(sample, residual)) = report.failures.first() {
        return Err(GdnError::NotConverged { sample, residual });
    }
    Ok(report.x)
}

/// Invert every row of `y`, collecting per-sample failures instead of
/// aborting.
pub fn inverse_report(params: &GdnParams, y: ArrayView2<f64>) -> Result<InverseReport> {
    let n = params.dim();
    check_dim(params, y.ncols())?;
    let m = y.nrows();
    let (h_inv, _) = linalg::inverse_and_logdet(&params.h)?;
    let y = y.as_standard_layout();
    let ys = y.as_slice().expect("standard layout");
    let prep = Prepared::new(params);
    let parts = map_chunks(m, |range| {
        let mut ws = Workspace::new(n);
        let mut lu = LuFactor::new(n);
        let mut z_out = Vec::with_capacity(range.len() * n);
        let mut failures = Vec::new();
        for s in range {
            let target = &ys[s * n..(s + 1) * n];
            let (z, residual) = invert_normalization(&prep, &mut ws, &mut lu, target);
            if !(residual <= INVERSE_RESIDUAL_TOL) {
                failures.push((s, residual));
            }
            z_out.extend(z);
        }
        (z_out, failures)
    });
    let mut z = Vec::with_capacity(m * n);
    let mut failures = Vec::new();
    for (pz, pf) in parts {
        z.extend(pz);
        failures.extend(pf);
    }
    let z = Array2::from_shape_vec((m, n), z).expect("shape");
    Ok(InverseReport {
        x: z.dot(&h_inv.t()),
        failures,
    })
}

/// Solve `g(z) = y` for one sample. Runs the fixed-point iteration
/// `z_i ← D_i(z)^eps_i y_i`; if that stalls, finishes with damped Newton
/// steps on the same equation. Returns the iterate and `‖g(z) − y‖∞`.
fn invert_normalization(
    prep: &Prepared,
    ws: &mut Workspace,
    lu: &mut LuFactor,
    y: &[f64],
) -> (Vec<f64>, f64) {
    let n = prep.n;
    let mut z: Vec<f64> = (0..n)
        .map(|i| {
            let k = i * n + i;
            let expo = 1.0 - prep.alpha[k] * prep.epsilon[i];
            let g = prep.gamma[k];
            if g > 0.0 && expo > 1e-9 {
                let z0 = y[i].signum() * (g.powf(prep.epsilon[i]) * y[i].abs()).powf(1.0 / expo);
                if z0.is_finite() {
                    return z0;
                }
            }
            y[i]
        })
        .collect();
    let mut next = vec![0.0; n];

    let residual = |ws: &mut Workspace, z: &[f64]| -> f64 {
        ws.z.copy_from_slice(z);
        if ws.normalize(prep).is_err() {
            return f64::INFINITY;
        }
        ws.y.iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };

    for _ in 0..FIXED_POINT_MAX_ITER {
        ws.z.copy_from_slice(&z);
        if ws.normalize(prep).is_err() {
            break;
        }
        let mut delta = 0.0f64;
        for i in 0..n {
            next[i] = y[i] / ws.a[i];
            delta = delta.max((next[i] - z[i]).abs());
        }
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        std::mem::swap(&mut z, &mut next);
        if delta < FIXED_POINT_TOL {
            break;
        }
    }
    let mut res = residual(ws, &z);
    if res <= INVERSE_RESIDUAL_TOL * 1e-3 {
        return (z, res);
    }

    // Newton polish: J Δ = g(z) − y.
    let mut step = vec![0.0; n];
    for _ in 0..NEWTON_MAX_ITER {
        if !res.is_finite() {
            break;
        }
        ws.z.copy_from_slice(&z);
        if ws.normalize(prep).is_err() {
            break;
        }
        ws.jacobian(prep);
        if !lu.factor(&ws.jac) {
            break;
        }
        for i in 0..n {
            step[i] = ws.y[i] - y[i];
        }
        lu.solve_in_place(&mut step);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            for i in 0..n {
                next[i] = z[i] - t * step[i];
            }
            let r = residual(ws, &next);
            if r < res {
                std::mem::swap(&mut z, &mut next);
                res = r;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || res <= INVERSE_RESIDUAL_TOL * 1e-4 {
            break;
        }
    }
    (z, res)
}
