//! Projected Adam on the negentropy loss.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GdnError, Result};
use crate::linalg;
use crate::objective::batch_gradient;
use crate::params::{init_params, GdnParams, Tying};
use crate::stats;
use crate::transform;

/// A step is rejected and retried with half the size when some sample in the
/// next batch has `log|det ∂y/∂x| / N` below this, i.e. the geometric mean
/// of the Jacobian's singular values drops under 1e-12.
pub const MIN_LOGDET: f64 = -27.631_021_115_928_547; // ln(1e-12)

fn logdet_floor(dim: usize) -> f64 {
    MIN_LOGDET * dim as f64
}
/// Step halvings tried before giving up.
pub const MAX_HALVINGS: usize = 5;
/// Samples probed per epoch for the smallest symmetric-part eigenvalue.
const PD_PROBES: usize = 32;

/// Starting point of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// `H = I` with the tying's default normalization.
    Standard,
    /// `H` = ZCA whitening matrix of the training data.
    Zca,
    /// The identity configuration (`gamma = 0`), so the fit starts at ΔJ = 0.
    Identity,
}

impl InitMode {
    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Standard => "standard",
            InitMode::Zca => "zca",
            InitMode::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate in the last epoch as a fraction of `learning_rate`;
    /// the rate decays geometrically between the two. 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub tying: Tying,
    pub init: InitMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            batch_size: 256,
            epochs: 50,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            tying: Tying::Full,
            init: InitMode::Standard,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: &str| Err(GdnError::InvalidArgument(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("Adam decay rates must lie in (0, 1)");
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        self.tying.validate(dim)
    }
}

/// Diagnostics for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Mean batch negentropy reduction, nats.
    pub delta_j: f64,
    /// Smallest per-sample `log|det ∂y/∂x|` seen.
    pub min_logdet: f64,
    /// Entries moved by the constraint projection, summed over steps.
    pub clamped: usize,
    /// Smallest symmetric-part eigenvalue of `∂y/∂z` over a few probe samples
    /// at the end of the epoch.
    pub min_eigenvalue: f64,
    /// Step halvings triggered by the log-determinant guard.
    pub halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub config: FitConfig,
    pub epochs: Vec<EpochStats>,
}

impl FitReport {
    pub fn final_delta_j(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.delta_j)
    }
}

/// Starting parameters for `data` under `config`.
pub fn initial_params(data: ArrayView2<f64>, config: &FitConfig) -> Result<GdnParams> {
    let n = data.ncols();
    match config.init {
        InitMode::Standard => init_params(n, &config.tying),
        InitMode::Zca => {
            let mut p = init_params(n, &config.tying)?;
            p.h = linalg::zca_whitening(data)?;
            Ok(p)
        }
        InitMode::Identity => {
            let mut p = init_params(n, &config.tying)?;
            p.gamma.fill(0.0);
            crate::params::project_constraints(&p, &config.tying)
        }
    }
}

/// Fit a transform to the rows of `data`.
pub fn fit(data: ArrayView2<f64>, config: &FitConfig) -> Result<(GdnParams, FitReport)> {
    config.validate(data.ncols())?;
    let start = initial_params(data, config)?;
    fit_from(data, config, start)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Fit starting from `start` (projected onto the tying first).
///
/// Each epoch visits a seeded permutation of the rows in batches of
/// `batch_size`, dropping the remainder. After every Adam step the
/// parameters are projected back onto the constraint set. If the next
/// gradient evaluation finds a non-finite value or a log-determinant below
/// [`MIN_LOGDET`] per coordinate, the step is undone and retried at half the size, up to
/// [`MAX_HALVINGS`] times.
pub fn fit_from(
    data: ArrayView2<f64>,
    config: &FitConfig,
    start: GdnParams,
) -> Result<(GdnParams, FitReport)> {
    let n = data.ncols();
    config.validate(n)?;
    if start.dim() != n {
        return Err(GdnError::DimensionMismatch {
            expected: start.dim(),
            got: n,
        });
    }
    let m = data.nrows();
    let bs = config.batch_size;
    if m < bs {
        return Err(GdnError::InvalidArgument(format!(
            "{m} samples is fewer than one batch of {bs}"
        )));
    }
    let tying = &config.tying;
    let plan = tying.plan(n)?;
    let mut params = crate::params::project_constraints(&start, tying)?;
    params.validate()?;

    let len = params.len();
    let mut adam = Adam {
        m: vec![0.0; len],
        v: vec![0.0; len],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut batch = Array2::zeros((bs, n));
    let mut epochs = Vec::with_capacity(config.epochs);

    // The step taken last, kept so it can be undone and retried smaller.
    struct Pending {
        prev_params: GdnParams,
        prev_m: Vec<f64>,
        prev_v: Vec<f64>,
        grad: Vec<f64>,
        scale: f64,
        halvings: usize,
    }
    let mut pending: Option<Pending> = None;
    let floor = logdet_floor(data.ncols());
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let decay = if config.epochs > 1 {
            config
                .final_lr_fraction
                .powf(epoch as f64 / (config.epochs - 1) as f64)
        } else {
            1.0
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut dj_sum = 0.0;
        let mut min_logdet = f64::INFINITY;
        let mut clamped = 0usize;
        let mut halvings = 0usize;
        let batches = m / bs;
        for b in 0..batches {
            for (r, &idx) in order[b * bs..(b + 1) * bs].iter().enumerate() {
                batch.row_mut(r).assign(&data.row(idx));
            }
            let bg = loop {
                let outcome = batch_gradient(&params, batch.view(), tying);
                let reason = match &outcome {
                    Ok(bg) if bg.min_logdet >= floor && bg.loss.is_finite() => None,
                    Ok(bg) => Some(format!("log-determinant fell to {:.3e}", bg.min_logdet)),
                    Err(e) if e.is_numerical() => Some(e.to_string()),
                    Err(_) => return Err(outcome.expect_err("error")),
                };
                let Some(reason) = reason else {
                    break outcome.expect("checked");
                };
                let Some(p) = pending.as_mut() else {
                    return Err(GdnError::Diverged {
                        epoch,
                        step,
                        reason: format!("initial parameters: {reason}"),
                        last_valid: Box::new(params),
                    });
                };
                if p.halvings == MAX_HALVINGS {
                    return Err(GdnError::Diverged {
                        epoch,
                        step,
                        reason,
                        last_valid: Box::new(p.prev_params.clone()),
                    });
                }
                p.halvings += 1;
                p.scale *= 0.5;
                halvings += 1;
                adam.m.clone_from(&p.prev_m);
                adam.v.clone_from(&p.prev_v);
                adam.t -= 1;
                let (next, c) =
                    adam_step(&mut adam, &p.prev_params, &p.grad, p.scale, config, &plan)?;
                params = next;
                clamped += c;
            };
            loss_sum += bg.loss;
            dj_sum += bg.input_quad - bg.loss;
            min_logdet = min_logdet.min(bg.min_logdet);

            let grad = bg.grad.to_flat();
            let prev_m = adam.m.clone();
            let prev_v = adam.v.clone();
            let (next, c) = adam_step(&mut adam, &params, &grad, decay, config, &plan)?;
            clamped += c;
            pending = Some(Pending {
                prev_params: std::mem::replace(&mut params, next),
                prev_m,
                prev_v,
                grad,
                scale: decay,
                halvings: 0,
            });
            step += 1;
        }
        let probes = data.slice(ndarray::s![..PD_PROBES.min(m), ..]);
        let z = probes.dot(&params.h.t());
        let min_eigenvalue = z
            .axis_iter(Axis(0))
            .map(|zr| transform::check_pd(&params, zr).map(|c| c.min_eigenvalue))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            delta_j: dj_sum / batches as f64,
            min_logdet,
            clamped,
            min_eigenvalue,
            halvings,
        });
    }
    // The last step has not been checked by a gradient evaluation yet.
    if let Some(p) = pending {
        let probe = data.slice(ndarray::s![..bs.min(m), ..]);
        let ok = transform::forward(&params, probe)
            .map(|o| o.logdet.iter().all(|&l| l.is_finite() && l >= floor))
            .unwrap_or(false);
        if !ok {
            params = p.prev_params;
        }
    }
    params.validate()?;
    Ok((
        params,
        FitReport {
            config: config.clone(),
            epochs,
        },
    ))
}

/// One Adam update of `params` with gradient `grad` and step multiplier
/// `scale`, followed by projection. Returns the new parameters and the
/// number of clamped entries.
fn adam_step(
    adam: &mut Adam,
    params: &GdnParams,
    grad: &[f64],
    scale: f64,
    config: &FitConfig,
    plan: &crate::params::TyingPlan,
) -> Result<(GdnParams, usize)> {
    adam.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(adam.t);
    let c2 = 1.0 - b2.powi(adam.t);
    let lr = config.learning_rate * scale;
    let mut flat = params.to_flat();
    for k in 0..flat.len() {
        let g = grad[k];
        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * g;
        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * g * g;
        let mhat = adam.m[k] / c1;
        let vhat = adam.v[k] / c2;
        flat[k] -= lr * mhat / (vhat.sqrt() + config.adam_eps);
    }
    let mut next = GdnParams::from_flat(params.dim(), &flat)?;
    let clamped = plan.project(&mut next);
    Ok((next, clamped))
}

/// ΔJ of one variant fitted by [`fit_special_cases`].
#[derive(Debug, Clone)]
pub struct VariantFit {
    pub tying: Tying,
    pub params: GdnParams,
    /// Negentropy reduction on the full data set, nats.
    pub delta_j: f64,
    pub delta_j_per_dim: f64,
}

/// Fit ICA-MG (diagonal gamma), radial Gaussianization and the full model
/// with the same data, seed and optimizer settings, and report ΔJ of each on
/// all of `data`.
pub fn fit_special_cases(data: ArrayView2<f64>, base: &FitConfig) -> Result<Vec<VariantFit>> {
    fit_variants(
        data,
        data,
        base,
        &[Tying::DiagonalGamma, Tying::Radial, Tying::Full],
    )
}

/// Fit each tying on `train` and score it on `eval`.
pub fn fit_variants(
    train: ArrayView2<f64>,
    eval: ArrayView2<f64>,
    base: &FitConfig,
    tyings: &[Tying],
) -> Result<Vec<VariantFit>> {
    tyings
        .iter()
        .map(|tying| {
            let config = FitConfig {
                tying: tying.clone(),
                ..base.clone()
            };
            let (params, _) = fit(train, &config)?;
            let delta_j = stats::delta_j(&params, eval)?;
            Ok(VariantFit {
                tying: tying.clone(),
                delta_j,
                delta_j_per_dim: delta_j / params.dim() as f64,
                params,
            })
        })
        .collect()
}
