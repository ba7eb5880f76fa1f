//! Pointwise Gaussianizer: the inverse of a generalized logistic function,
//! fitted so that transformed intensities are marginally standard normal.
//!
//! The forward (logistic) direction maps a standard-normal-like value `g` to
//! an intensity,
//!
//! ```text
//! v = lower + (upper − lower) · (1 + exp(−(g − mu)/s))^(−1/nu)
//! ```
//!
//! and [`PointwiseGaussianizer::apply`] is its inverse. `nu` controls the
//! asymmetry; for small intensities the map behaves like `nu · log(v − lower)`,
//! which is why it can stand in for the usual log transform.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GdnError, Result};

/// Probabilities at which quantiles are matched.
const QUANTILES: usize = 99;
/// Smallest sample accepted by [`PointwiseGaussianizer::fit`].
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseGaussianizer {
    pub mu: f64,
    pub s: f64,
    pub nu: f64,
    /// Open interval `(lower, upper)` on which `apply` is defined.
    pub lower: f64,
    pub upper: f64,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logit-like core `t(w) = −ln(w^(−nu) − 1)` for `w` in (0, 1).
fn core(w: f64, nu: f64) -> f64 {
    -(-nu * w.ln()).exp_m1().ln()
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

#[derive(Clone)]
struct Mismatch {
    q: Vec<f64>,
    target: Vec<f64>,
    vmin: f64,
    vmax: f64,
}

impl Mismatch {
    /// Shape parameters from the unconstrained search vector.
    fn shape(&self, theta: &[f64]) -> (f64, f64, f64) {
        let range = self.vmax - self.vmin;
        (
            theta[0].exp(),
            self.vmin - theta[1].exp() * range,
            self.vmax + theta[2].exp() * range,
        )
    }

    /// Best affine part for a given shape, and the squared mismatch.
    fn solve(&self, theta: &[f64]) -> Option<(PointwiseGaussianizer, f64)> {
        let (nu, lower, upper) = self.shape(theta);
        let t: Vec<f64> = self
            .q
            .iter()
            .map(|&v| core((v - lower) / (upper - lower), nu))
            .collect();
        let k = t.len() as f64;
        let mt = t.iter().sum::<f64>() / k;
        let mz = self.target.iter().sum::<f64>() / k;
        let (mut stt, mut stz) = (0.0, 0.0);
        for (a, b) in t.iter().zip(&self.target) {
            stt += (a - mt) * (a - mt);
            stz += (a - mt) * (b - mz);
        }
        let slope = stz / stt;
        if !(slope > 0.0 && slope.is_finite()) {
            return None;
        }
        let g = PointwiseGaussianizer {
            mu: mz - slope * mt,
            s: slope,
            nu,
            lower,
            upper,
        };
        let sse = t
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (g.mu + g.s * a - b).powi(2))
            .sum::<f64>();
        sse.is_finite().then_some((g, sse))
    }
}

impl CostFunction for Mismatch {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.solve(theta).map_or(1e300, |(_, sse)| sse))
    }
}

impl PointwiseGaussianizer {
    /// Fit by least-squares matching of 99 equally spaced quantiles of
    /// `values` to those of the standard normal. The affine part is solved in
    /// closed form; `nu` and the two asymptotes by Nelder–Mead.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < MIN_SAMPLES {
            return Err(GdnError::InvalidArgument(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GdnError::InvalidArgument("non-finite intensity".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (vmin, vmax) = (sorted[0], sorted[sorted.len() - 1]);
        if vmax <= vmin {
            return Err(GdnError::Degenerate("constant intensities".into()));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let probs: Vec<f64> = (1..=QUANTILES)
            .map(|j| j as f64 / (QUANTILES + 1) as f64)
            .collect();
        let problem = Mismatch {
            q: probs.iter().map(|&p| sorted_quantile(&sorted, p)).collect(),
            target: probs.iter().map(|&p| normal.inverse_cdf(p)).collect(),
            vmin,
            vmax,
        };
        let start = vec![0.0, (0.05f64).ln(), (0.05f64).ln()];
        let mut simplex = vec![start.clone()];
        for k in 0..3 {
            let mut v = start.clone();
            v[k] += 1.0;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| GdnError::InvalidArgument(e.to_string()))?;
        let best = Executor::new(problem.clone(), solver)
            .configure(|s| s.max_iters(2000))
            .run()
            .map_err(|e| GdnError::Degenerate(format!("gaussianizer fit failed: {e}")))?;
        let theta = best.state().get_best_param().cloned().unwrap_or(start);
        problem
            .solve(&theta)
            .map(|(g, _)| g)
            .ok_or_else(|| GdnError::Degenerate("no increasing fit".into()))
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }

    /// Gaussianize one intensity.
    pub fn apply(&self, v: f64) -> Result<f64> {
        if !self.contains(v) {
            return Err(GdnError::InvalidArgument(format!(
                "intensity {v} outside ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(self.mu + self.s * core((v - self.lower) / (self.upper - self.lower), self.nu))
    }

    /// Inverse of [`apply`](Self::apply).
    pub fn invert(&self, g: f64) -> f64 {
        let t = (g - self.mu) / self.s;
        let ln_w = -softplus(-t) / self.nu;
        self.lower + (self.upper - self.lower) * ln_w.exp()
    }

    /// `d apply / dv`, positive on the valid range.
    pub fn derivative(&self, v: f64) -> f64 {
        let width = self.upper - self.lower;
        let w = (v - self.lower) / width;
        let a = (-self.nu * w.ln()).exp(); // w^(−nu)
        self.s * self.nu * a / (w * (a - 1.0)) / width
    }

    pub fn apply_all(&self, values: &mut [f64]) -> Result<()> {
        for v in values.iter_mut() {
            *v = self.apply(*v)?;
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "inverse-generalized-logistic(mu={:e},s={:e},nu={:e},lower={:e},upper={:e})",
            self.mu, self.s, self.nu, self.lower, self.upper
        )
    }
}
