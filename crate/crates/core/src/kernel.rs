//! Per-sample evaluation shared by the transform, the objective and the
//! density: forward pass, normalization Jacobian, its log-determinant, and
//! the reverse pass that yields parameter and input gradients of
//! `½‖y‖² − log|det ∂y/∂z|`.
//!
//! Notation for one sample, with `z = Hx`:
//!
//! ```text
//! P_ik = |z_k|^alpha_ik         Q_ik = |z_k|^(alpha_ik - 1) sgn(z_k)
//! D_i  = beta_i + Σ_k gamma_ik P_ik
//! a_i  = D_i^-eps_i             c_i  = eps_i D_i^-(eps_i + 1)
//! y_i  = z_i a_i
//! J_ik = δ_ik a_i − c_i z_i M_ik,   M_ik = alpha_ik gamma_ik Q_ik
//! ```

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{GdnError, Result};
use crate::linalg::LuFactor;
use crate::params::GdnParams;

/// Samples per work unit. Fixed, so reductions do not depend on the number
/// of worker threads.
pub(crate) const CHUNK: usize = 64;

/// Read-only view of the parameters plus structure detected once per batch.
pub(crate) struct Prepared<'a> {
    pub n: usize,
    pub h: &'a [f64],
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
    pub gamma: &'a [f64],
    pub epsilon: &'a [f64],
    /// Every row of alpha equal: powers need only be computed per column.
    pub alpha_column_tied: bool,
    /// Off-diagonal gamma all zero: the Jacobian is diagonal.
    pub gamma_diagonal: bool,
}

impl<'a> Prepared<'a> {
    pub fn new(params: &'a GdnParams) -> Self {
        let n = params.dim();
        let slice = |a: &'a ndarray::Array2<f64>| a.as_slice().expect("standard layout");
        let alpha = slice(&params.alpha);
        let gamma = slice(&params.gamma);
        let alpha_column_tied = (1..n).all(|i| alpha[i * n..(i + 1) * n] == alpha[..n]);
        let gamma_diagonal = (0..n * n).all(|k| k / n == k % n || gamma[k] == 0.0);
        Prepared {
            n,
            h: slice(&params.h),
            alpha,
            beta: params.beta.as_slice().expect("standard layout"),
            gamma,
            epsilon: params.epsilon.as_slice().expect("standard layout"),
            alpha_column_tied,
            gamma_diagonal,
        }
    }
}

/// Summed parameter gradients over a group of samples, flat row-major.
#[derive(Debug, Clone)]
pub(crate) struct GradAccum {
    pub h: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub quad: f64,
    pub logdet: f64,
    pub min_logdet: f64,
    pub count: usize,
}

impl GradAccum {
    pub fn zeros(n: usize) -> Self {
        GradAccum {
            h: vec![0.0; n * n],
            alpha: vec![0.0; n * n],
            beta: vec![0.0; n],
            gamma: vec![0.0; n * n],
            epsilon: vec![0.0; n],
            quad: 0.0,
            logdet: 0.0,
            min_logdet: f64::INFINITY,
            count: 0,
        }
    }

    pub fn merge(mut self, other: &GradAccum) -> Self {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.h, &other.h);
        add(&mut self.alpha, &other.alpha);
        add(&mut self.beta, &other.beta);
        add(&mut self.gamma, &other.gamma);
        add(&mut self.epsilon, &other.epsilon);
        self.quad += other.quad;
        self.logdet += other.logdet;
        self.min_logdet = self.min_logdet.min(other.min_logdet);
        self.count += other.count;
        self
    }
}

/// Scratch buffers for one sample of dimension N.
pub(crate) struct Workspace {
    pub z: Vec<f64>,
    pub absz: Vec<f64>,
    pub lnz: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    pub lnd: Vec<f64>,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub y: Vec<f64>,
    pub jac: Vec<f64>,
    pub g: Vec<f64>,
    pub r: Vec<f64>,
    pub gz: Vec<f64>,
    gd: Vec<f64>,
    lu: LuFactor,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Workspace {
            z: vec![0.0; n],
            absz: vec![0.0; n],
            lnz: vec![0.0; n],
            p: vec![0.0; n * n],
            q: vec![0.0; n * n],
            d: vec![0.0; n],
            lnd: vec![0.0; n],
            a: vec![0.0; n],
            c: vec![0.0; n],
            y: vec![0.0; n],
            jac: vec![0.0; n * n],
            g: vec![0.0; n * n],
            r: vec![0.0; n],
            gz: vec![0.0; n],
            gd: vec![0.0; n],
            lu: LuFactor::new(n),
        }
    }

    /// `z = Hx`.
    pub fn linear(&mut self, prep: &Prepared, x: &[f64]) {
        let n = prep.n;
        for i in 0..n {
            let row = &prep.h[i * n..(i + 1) * n];
            self.z[i] = row.iter().zip(x).map(|(h, v)| h * v).sum();
        }
    }

    /// Normalization stage from the current `z`: fills `P`, `Q`, `D`, `a`,
    /// `c` and `y`. Returns the first non-finite component, if any.
    pub fn normalize(&mut self, prep: &Prepared) -> std::result::Result<(), (usize, &'static str)> {
        let n = prep.n;
        for k in 0..n {
            let z = self.z[k];
            if !z.is_finite() {
                return Err((k, "linear response"));
            }
            self.absz[k] = z.abs();
            self.lnz[k] = if z == 0.0 { 0.0 } else { z.abs().ln() };
        }
        if prep.alpha_column_tied {
            for k in 0..n {
                let (pk, qk) = power_pair(self.z[k], self.lnz[k], prep.alpha[k]);
                for i in 0..n {
                    self.p[i * n + k] = pk;
                    self.q[i * n + k] = qk;
                }
            }
        } else {
            for i in 0..n {
                for k in 0..n {
                    let (pk, qk) = power_pair(self.z[k], self.lnz[k], prep.alpha[i * n + k]);
                    self.p[i * n + k] = pk;
                    self.q[i * n + k] = qk;
                }
            }
        }
        for i in 0..n {
            let d = if prep.gamma_diagonal {
                prep.beta[i] + prep.gamma[i * n + i] * self.p[i * n + i]
            } else {
                let g = &prep.gamma[i * n..(i + 1) * n];
                let p = &self.p[i * n..(i + 1) * n];
                prep.beta[i] + g.iter().zip(p).map(|(g, p)| g * p).sum::<f64>()
            };
            if !(d.is_finite() && d > 0.0) {
                return Err((i, "normalization pool"));
            }
            let lnd = d.ln();
            let a = (-prep.epsilon[i] * lnd).exp();
            self.d[i] = d;
            self.lnd[i] = lnd;
            self.a[i] = a;
            self.c[i] = prep.epsilon[i] * a / d;
            self.y[i] = self.z[i] * a;
            if !self.y[i].is_finite() {
                return Err((i, "output"));
            }
        }
        Ok(())
    }

    /// `∂y/∂z` into `jac` (row-major).
    pub fn jacobian(&mut self, prep: &Prepared) {
        let n = prep.n;
        if prep.gamma_diagonal {
            self.jac.fill(0.0);
            for i in 0..n {
                let k = i * n + i;
                let m = prep.alpha[k] * prep.gamma[k] * self.q[k];
                self.jac[k] = self.a[i] - self.c[i] * self.z[i] * m;
            }
            return;
        }
        for i in 0..n {
            let cz = self.c[i] * self.z[i];
            for k in 0..n {
                let idx = i * n + k;
                let m = prep.alpha[idx] * prep.gamma[idx] * self.q[idx];
                self.jac[idx] = -cz * m;
            }
            self.jac[i * n + i] += self.a[i];
        }
    }

    /// `log|det ∂y/∂z|` of the Jacobian currently in `jac`. When `inverse` is
    /// set, also leaves `(∂y/∂z)^{-T}` in `g`.
    pub fn log_abs_det(&mut self, prep: &Prepared, inverse: bool) -> f64 {
        let n = prep.n;
        if prep.gamma_diagonal {
            let mut s = 0.0;
            if inverse {
                self.g.fill(0.0);
            }
            for i in 0..n {
                let v = self.jac[i * n + i];
                s += v.abs().ln();
                if inverse {
                    self.g[i * n + i] = 1.0 / v;
                }
            }
            return s;
        }
        if !self.lu.factor(&self.jac) {
            return f64::NEG_INFINITY;
        }
        if inverse {
            self.lu.inverse_transpose_into(&mut self.g);
        }
        self.lu.log_abs_det()
    }

    /// Reverse pass for `l = ½‖y‖² − log|det ∂y/∂z|` after `normalize`,
    /// `jacobian` and `log_abs_det(.., true)`. Leaves `∂l/∂z` in `gz` and, when
    /// `acc` is given, adds the parameter gradients of the normalization
    /// stage plus `gz xᵀ` for `H`.
    pub fn backward(&mut self, prep: &Prepared, x: &[f64], acc: Option<&mut GradAccum>) {
        let n = prep.n;
        let diag = prep.gamma_diagonal;
        // r_i = Σ_k G_ik M_ik
        for i in 0..n {
            self.r[i] = if diag {
                let k = i * n + i;
                self.g[k] * prep.alpha[k] * prep.gamma[k] * self.q[k]
            } else {
                (0..n)
                    .map(|k| {
                        let idx = i * n + k;
                        self.g[idx] * prep.alpha[idx] * prep.gamma[idx] * self.q[idx]
                    })
                    .sum()
            };
        }
        // ∂l/∂D_i, ∂l/∂eps_i, and the direct z_i dependence.
        for i in 0..n {
            let (z, y, a, c, d, e) = (
                self.z[i],
                self.y[i],
                self.a[i],
                self.c[i],
                self.d[i],
                prep.epsilon[i],
            );
            let gii = self.g[i * n + i];
            let r = self.r[i];
            let t_d = -c * gii + (e + 1.0) * c * z * r / d;
            self.gd[i] = -y * z * c - t_d;
            self.gz[i] = y * a + c * r;
        }
        // Through D_i and M_ik into z_k.
        for i in 0..n {
            let gd = self.gd[i];
            let cz = self.c[i] * self.z[i];
            let ks = if diag { i..i + 1 } else { 0..n };
            for k in ks {
                let idx = i * n + k;
                let m = prep.alpha[idx] * prep.gamma[idx] * self.q[idx];
                if m == 0.0 {
                    continue;
                }
                let gm = cz * self.g[idx];
                self.gz[k] += gd * m + gm * (prep.alpha[idx] - 1.0) * m / self.z[k];
            }
        }
        let Some(acc) = acc else { return };
        for i in 0..n {
            let (z, y, a, d, lnd, e) = (
                self.z[i],
                self.y[i],
                self.a[i],
                self.d[i],
                self.lnd[i],
                prep.epsilon[i],
            );
            let gii = self.g[i * n + i];
            let r = self.r[i];
            let t_eps = -gii * a * lnd - z * r * (a / d) * (1.0 - e * lnd);
            acc.epsilon[i] += -y * y * lnd - t_eps;
            let gd = self.gd[i];
            acc.beta[i] += gd;
            let cz = self.c[i] * z;
            for k in 0..n {
                let idx = i * n + k;
                let p = self.p[idx];
                let q = self.q[idx];
                let al = prep.alpha[idx];
                let gm = cz * self.g[idx];
                acc.gamma[idx] += gd * p + gm * al * q;
                let ga = gd * p * self.lnz[k] + gm * q * (1.0 + al * self.lnz[k]);
                acc.alpha[idx] += prep.gamma[idx] * ga;
            }
        }
        for i in 0..n {
            let gzi = self.gz[i];
            let row = &mut acc.h[i * n..(i + 1) * n];
            row.iter_mut().zip(x).for_each(|(h, v)| *h += gzi * v);
        }
    }

    /// Full evaluation of one sample: forward, Jacobian and log-determinant.
    /// Returns `(½‖y‖², log|det ∂y/∂z|)`.
    pub fn evaluate(
        &mut self,
        prep: &Prepared,
        x: &[f64],
        sample: usize,
        inverse: bool,
    ) -> Result<(f64, f64)> {
        self.linear(prep, x);
        self.normalize(prep)
            .map_err(|(component, what)| GdnError::NonFinite {
                sample,
                component,
                what,
            })?;
        self.jacobian(prep);
        let logdet = self.log_abs_det(prep, inverse);
        if !logdet.is_finite() {
            return Err(GdnError::NonFinite {
                sample,
                component: 0,
                what: "log-determinant",
            });
        }
        let quad = 0.5 * self.y.iter().map(|v| v * v).sum::<f64>();
        Ok((quad, logdet))
    }
}

/// `(|z|^alpha, |z|^(alpha-1) sgn z)` given `ln|z|`; both zero at `z = 0`.
#[inline]
fn power_pair(z: f64, lnz: f64, alpha: f64) -> (f64, f64) {
    if z == 0.0 {
        return (0.0, 0.0);
    }
    if alpha == 1.0 {
        return (z.abs(), z.signum());
    }
    if alpha == 2.0 {
        return (z * z, z);
    }
    let p = (alpha * lnz).exp();
    (p, p / z)
}

/// Split `0..m` into fixed-size chunks, evaluate them in parallel, and
/// return the per-chunk results in order.
pub(crate) fn map_chunks<T, F>(m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunks = m.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(m)))
        .collect()
}

/// Pairwise tree reduction with a fixed shape for a given input length.
pub(crate) fn tree_reduce<T, F>(mut items: Vec<T>, combine: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}
