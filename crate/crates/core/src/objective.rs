//! Training loss and its closed-form gradient.
//!
//! The loss is the negentropy of the transformed data with the
//! parameter-independent terms dropped:
//!
//! ```text
//! loss(θ) = mean_x [ ½‖g(x; θ)‖² − log|det ∂g/∂x| ]
//! ```
//!
//! which is also the negative mean log-likelihood of the induced density up
//! to the constant `(N/2) log 2π`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{GdnError, Result};
use crate::kernel::{map_chunks, tree_reduce, GradAccum, Prepared, Workspace};
use crate::linalg;
use crate::params::{GdnParams, Tying};

/// Per-sample pieces of the loss and their batch mean.
#[derive(Debug, Clone)]
pub struct LossTerms {
    /// `½‖y‖²` per sample.
    pub quad: Array1<f64>,
    /// `log|det ∂y/∂x|` per sample.
    pub logdet: Array1<f64>,
    /// `mean(quad − logdet)`.
    pub loss: f64,
}

/// Gradient of the loss, one block per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub h: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array1<f64>,
    pub gamma: Array2<f64>,
    pub epsilon: Array1<f64>,
}

impl ParamGrad {
    /// Flatten in the same block order as [`GdnParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.h.iter());
        out.extend(self.alpha.iter());
        out.extend(self.beta.iter());
        out.extend(self.gamma.iter());
        out.extend(self.epsilon.iter());
        out
    }
}

/// Loss value and gradient for one batch, plus diagnostics the trainer uses.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    /// Mean of `½‖x‖²` over the batch, so `loss − input_quad` is the
    /// negentropy change.
    pub input_quad: f64,
    pub grad: ParamGrad,
    /// Smallest per-sample `log|det ∂y/∂x|`.
    pub min_logdet: f64,
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

/// Evaluate the loss on a batch (rows are samples).
pub fn loss(params: &GdnParams, x: ArrayView2<f64>) -> Result<LossTerms> {
    let out = crate::transform::forward(params, x)?;
    let quad: Array1<f64> = out.y.rows().into_iter().map(|r| 0.5 * r.dot(&r)).collect();
    let m = quad.len().max(1) as f64;
    let loss = quad
        .iter()
        .zip(out.logdet.iter())
        .map(|(q, l)| q - l)
        .sum::<f64>()
        / m;
    Ok(LossTerms {
        quad,
        logdet: out.logdet,
        loss,
    })
}

/// Gradient of [`loss`] with respect to every parameter block.
///
/// Entries tied by `tying` receive the summed gradient of their group;
/// pinned entries receive zero.
pub fn grad_params(params: &GdnParams, x: ArrayView2<f64>, tying: &Tying) -> Result<ParamGrad> {
    Ok(batch_gradient(params, x, tying)?.grad)
}

/// Loss and tied gradient in one pass.
pub fn batch_gradient(
    params: &GdnParams,
    x: ArrayView2<f64>,
    tying: &Tying,
) -> Result<BatchGradient> {
    let n = params.dim();
    check_dim(params, x.ncols())?;
    let m = x.nrows();
    if m == 0 {
        return Err(GdnError::InvalidArgument("empty batch".into()));
    }
    let plan = tying.plan(n)?;
    let (h_inv, logdet_h) = linalg::inverse_and_logdet(&params.h)?;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let prep = Prepared::new(params);

    let parts = map_chunks(m, |range| -> Result<(GradAccum, f64)> {
        let mut ws = Workspace::new(n);
        let mut acc = GradAccum::zeros(n);
        let mut input_quad = 0.0;
        for s in range {
            let xi = &xs[s * n..(s + 1) * n];
            let (quad, logdet) = ws.evaluate(&prep, xi, s, true)?;
            ws.backward(&prep, xi, Some(&mut acc));
            acc.quad += quad;
            acc.logdet += logdet;
            acc.min_logdet = acc.min_logdet.min(logdet);
            acc.count += 1;
            input_quad += 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
        }
        Ok((acc, input_quad))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let (mut acc, input_quad) =
        tree_reduce(parts, |(a, qa), (b, qb)| (a.merge(&b), qa + qb)).expect("non-empty batch");

    let inv_m = 1.0 / m as f64;
    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|g| *g *= inv_m);
    scale(&mut acc.h);
    scale(&mut acc.alpha);
    scale(&mut acc.beta);
    scale(&mut acc.gamma);
    scale(&mut acc.epsilon);
    // −∂ log|det H| / ∂H = −H^{-T}
    for i in 0..n {
        for j in 0..n {
            acc.h[i * n + j] -= h_inv[[j, i]];
        }
    }
    plan.reduce_gradient(
        &mut acc.alpha,
        &mut acc.beta,
        &mut acc.gamma,
        &mut acc.epsilon,
    );

    let mat = |v: Vec<f64>| Array2::from_shape_vec((n, n), v).expect("shape");
    Ok(BatchGradient {
        loss: (acc.quad - acc.logdet) * inv_m - logdet_h,
        input_quad: input_quad * inv_m,
        min_logdet: acc.min_logdet + logdet_h,
        grad: ParamGrad {
            h: mat(acc.h),
            alpha: mat(acc.alpha),
            beta: Array1::from(acc.beta),
            gamma: mat(acc.gamma),
            epsilon: Array1::from(acc.epsilon),
        },
    })
}

/// Gradient of the per-sample loss `½‖y‖² − log|det ∂y/∂x|` with respect to
/// the input, for every row of `x`. The score of the induced density is its
/// negative.
pub fn input_gradient(params: &GdnParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = params.dim();
    check_dim(params, x.ncols())?;
    let m = x.nrows();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let prep = Prepared::new(params);
    let h = prep.h;
    let parts = map_chunks(m, |range| -> Result<Vec<f64>> {
        let mut ws = Workspace::new(n);
        let mut out = Vec::with_capacity(range.len() * n);
        for s in range {
            let xi = &xs[s * n..(s + 1) * n];
            ws.evaluate(&prep, xi, s, true)?;
            ws.backward(&prep, xi, None);
            // ∂l/∂x = Hᵀ ∂l/∂z
            for j in 0..n {
                out.push((0..n).map(|i| h[i * n + j] * ws.gz[i]).sum());
            }
        }
        Ok(out)
    });
    let mut flat = Vec::with_capacity(m * n);
    for p in parts {
        flat.extend(p?);
    }
    Ok(Array2::from_shape_vec((m, n), flat).expect("shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_loss_is_half_squared_norm() {
        let p = GdnParams::identity(2);
        let x = array![[1.0, 2.0], [0.0, -1.0]];
        let l = loss(&p, x.view()).unwrap();
        assert_eq!(l.loss, (2.5 + 0.5) / 2.0);
        assert!(l.logdet.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radial_gamma_gradient_is_uniform() {
        let mut p = crate::params::init_params(3, &Tying::Radial).unwrap();
        p.h = array![[1.0, 0.2, 0.0], [0.1, 0.9, -0.3], [0.0, 0.4, 1.1]];
        let x = array![[0.3, -1.0, 2.0], [1.5, 0.2, -0.7], [-0.4, 0.8, 0.1]];
        let g = grad_params(&p, x.view(), &Tying::Radial).unwrap();
        let first = g.gamma[[0, 0]];
        assert!(first != 0.0);
        assert!(g.gamma.iter().all(|&v| v == first));
        assert!(g.alpha.iter().all(|&v| v == 0.0));
        assert!(g.beta.iter().all(|&v| v == g.beta[0]));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = GdnParams::identity(2);
        let x = Array2::<f64>::zeros((0, 2));
        assert!(batch_gradient(&p, x.view(), &Tying::Full).is_err());
    }
}
