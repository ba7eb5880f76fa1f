//! Greedy stacking of complete transforms: each stage is fitted to the
//! outputs of the stages before it.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{GdnError, Result};
use crate::params::{GdnParams, Tying};
use crate::stats::{self, excess_kurtosis, gaussianity_ks};
use crate::trainer::{self, FitConfig, FitReport};
use crate::transform;

/// One fitted stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub params: GdnParams,
    pub tying: Tying,
}

/// Shape of the data entering a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    /// ΔJ of this stage on its own input, nats.
    pub delta_j: f64,
    /// Mean excess kurtosis of the input marginals.
    pub input_kurtosis: f64,
    /// Mean KS distance of the input marginals to N(0, 1).
    pub input_marginal_ks: f64,
    pub input_radial_ks: f64,
}

#[derive(Debug, Clone)]
pub struct CascadeFit {
    pub stages: Vec<Stage>,
    pub reports: Vec<FitReport>,
    pub diagnostics: Vec<StageDiagnostics>,
}

/// Forward pass through every stage: output and total `log|det|` per row.
pub fn forward_cascade(stages: &[Stage], x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut cur = x.to_owned();
    let mut logdet = Array1::zeros(x.nrows());
    for (k, s) in stages.iter().enumerate() {
        let out = transform::forward(&s.params, cur.view()).map_err(|e| stage_err(k, e))?;
        logdet += &out.logdet;
        cur = out.y;
    }
    Ok((cur, logdet))
}

/// Invert the stages in reverse order.
pub fn invert_cascade(stages: &[Stage], y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut cur = y.to_owned();
    for (k, s) in stages.iter().enumerate().rev() {
        cur = transform::inverse(&s.params, cur.view()).map_err(|e| stage_err(k, e))?;
    }
    Ok(cur)
}

fn stage_err(stage: usize, e: GdnError) -> GdnError {
    GdnError::Stage {
        stage,
        source: Box::new(e),
    }
}

/// ΔJ of the whole composition on `x` and of each stage on its own input.
/// The stage values sum to the total up to rounding.
pub fn cascade_delta_j(stages: &[Stage], x: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
    let mut per_stage = Vec::with_capacity(stages.len());
    let mut cur = x.to_owned();
    for (k, s) in stages.iter().enumerate() {
        per_stage.push(stats::delta_j(&s.params, cur.view()).map_err(|e| stage_err(k, e))?);
        cur = transform::forward(&s.params, cur.view())
            .map_err(|e| stage_err(k, e))?
            .y;
    }
    let (y, logdet) = forward_cascade(stages, x)?;
    let m = x.nrows().max(1) as f64;
    let total = stats::mean_half_sq_norm(x) - stats::mean_half_sq_norm(y.view()) + logdet.sum() / m;
    Ok((total, per_stage))
}

fn diagnose(stage: usize, input: ArrayView2<f64>, params: &GdnParams) -> Result<StageDiagnostics> {
    let n = input.ncols() as f64;
    let input_kurtosis = input
        .columns()
        .into_iter()
        .map(|c| excess_kurtosis(&c.to_vec()))
        .sum::<f64>()
        / n;
    let (marginal, radial) = gaussianity_ks(input);
    Ok(StageDiagnostics {
        stage,
        delta_j: stats::delta_j(params, input)?,
        input_kurtosis,
        input_marginal_ks: marginal.iter().sum::<f64>() / n,
        input_radial_ks: radial,
    })
}

/// Fit `configs.len()` stages greedily. Errors carry the stage index.
pub fn fit_cascade(data: ArrayView2<f64>, configs: &[FitConfig]) -> Result<CascadeFit> {
    if configs.len() < 2 {
        return Err(GdnError::InvalidArgument(
            "a cascade needs at least two stages".into(),
        ));
    }
    let mut cur = data.to_owned();
    let mut out = CascadeFit {
        stages: Vec::new(),
        reports: Vec::new(),
        diagnostics: Vec::new(),
    };
    for (k, config) in configs.iter().enumerate() {
        let (params, report) = trainer::fit(cur.view(), config).map_err(|e| stage_err(k, e))?;
        out.diagnostics
            .push(diagnose(k, cur.view(), &params).map_err(|e| stage_err(k, e))?);
        cur = transform::forward(&params, cur.view())
            .map_err(|e| stage_err(k, e))?
            .y;
        out.stages.push(Stage {
            params,
            tying: config.tying.clone(),
        });
        out.reports.push(report);
    }
    Ok(out)
}
