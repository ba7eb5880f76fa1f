//! Gaussianization diagnostics: negentropy reduction, histogram mutual
//! information, Kolmogorov–Smirnov distances to the normal and Chi laws, and
//! a few helpers used to score synthetic recoveries.

use ndarray::{Array2, ArrayView1, ArrayView2};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image::{oriented_response, GrayImage};
use crate::error::{GdnError, Result};
use crate::objective;
use crate::params::{GdnParams, Tying};
use crate::trainer::{self, FitConfig};
use crate::transform;

/// Largest number of bins per axis the MI estimator will use.
pub const MI_MAX_BINS: usize = 64;

/// Mean of `½‖x‖²` over the rows of `x`, summed the same way as the loss.
pub fn mean_half_sq_norm(x: ArrayView2<f64>) -> f64 {
    let m = x.nrows().max(1) as f64;
    x.rows().into_iter().map(|r| 0.5 * r.dot(&r)).sum::<f64>() / m
}

/// Negentropy reduction achieved by the transform on `x`, in nats:
///
/// ```text
/// ΔJ = mean[ ½‖x‖² − ½‖y‖² + log|det ∂y/∂x| ]
/// ```
///
/// Positive when `y` is closer to a standard normal than `x`; zero for the
/// identity configuration. Equals `mean(½‖x‖²) − loss` exactly.
pub fn delta_j(params: &GdnParams, x: ArrayView2<f64>) -> Result<f64> {
    let terms = objective::loss(params, x)?;
    Ok(mean_half_sq_norm(x) - terms.loss)
}

/// [`delta_j`] divided by the dimension.
pub fn delta_j_per_dim(params: &GdnParams, x: ArrayView2<f64>) -> Result<f64> {
    Ok(delta_j(params, x)? / params.dim() as f64)
}

/// Default bin count for `m` samples: `floor(m^(1/3))`, capped.
pub fn default_bins(m: usize) -> usize {
    ((m as f64).cbrt().floor() as usize).clamp(2, MI_MAX_BINS)
}

/// Equiquantile bin index of every value: ranks split into `bins` groups of
/// (nearly) equal size. Ties are broken by position.
fn quantile_bins(v: ArrayView1<f64>, bins: usize) -> Vec<usize> {
    let m = v.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut out = vec![0; m];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / m;
    }
    out
}

fn plugin_entropy(counts: &[usize], m: f64) -> (f64, usize) {
    let mut h = 0.0;
    let mut occupied = 0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / m;
            h -= p * p.ln();
            occupied += 1;
        }
    }
    (h, occupied)
}

/// Mutual information between the two columns of `pairs`, in nats.
///
/// Histogram estimate on equiquantile bins with the Miller–Madow correction
/// applied to each entropy. `bins = None` uses [`default_bins`]. Equiquantile
/// binning makes the estimate invariant to strictly increasing transforms of
/// either coordinate.
pub fn mutual_information(pairs: ArrayView2<f64>, bins: Option<usize>) -> Result<f64> {
    if pairs.ncols() != 2 {
        return Err(GdnError::DimensionMismatch {
            expected: 2,
            got: pairs.ncols(),
        });
    }
    let m = pairs.nrows();
    if m < 4 {
        return Err(GdnError::Degenerate(
            "too few pairs for an MI estimate".into(),
        ));
    }
    for c in 0..2 {
        let col = pairs.column(c);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(GdnError::Degenerate(format!(
                "non-finite value in coordinate {c}"
            )));
        }
        if col.iter().all(|&v| v == col[0]) {
            return Err(GdnError::Degenerate(format!(
                "coordinate {c} has zero variance"
            )));
        }
    }
    let b = bins.unwrap_or_else(|| default_bins(m));
    if b < 2 {
        return Err(GdnError::InvalidArgument("need at least two bins".into()));
    }
    let bx = quantile_bins(pairs.column(0), b);
    let by = quantile_bins(pairs.column(1), b);
    let mut joint = vec![0usize; b * b];
    let mut cx = vec![0usize; b];
    let mut cy = vec![0usize; b];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * b + j] += 1;
        cx[i] += 1;
        cy[j] += 1;
    }
    let mf = m as f64;
    let (hx, kx) = plugin_entropy(&cx, mf);
    let (hy, ky) = plugin_entropy(&cy, mf);
    let (hxy, kxy) = plugin_entropy(&joint, mf);
    // Miller–Madow: H ≈ H_plugin + (K − 1) / 2M for K occupied bins.
    let mm = |k: usize| (k as f64 - 1.0) / (2.0 * mf);
    Ok((hx + mm(kx)) + (hy + mm(ky)) - (hxy + mm(kxy)))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of the Chi distribution with `k` degrees of freedom (the norm of a
/// k-dimensional standard normal vector).
pub fn chi_cdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(0.5 * k as f64, 0.5 * x * x)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// a continuous reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &v)| {
        let f = cdf(v);
        d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m)
    })
}

/// Quantitative Gaussianity summary of a fitted transform on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Negentropy reduction in nats.
    pub delta_j: f64,
    pub delta_j_per_dim: f64,
    /// Mean log-likelihood in nats per vector.
    pub log_likelihood: f64,
    /// Histogram MI of the two outputs; only for two-dimensional data.
    pub mi: Option<f64>,
    /// KS distance of each output marginal to the standard normal.
    pub marginal_ks: Vec<f64>,
    /// KS distance of `‖y‖` to Chi(N).
    pub radial_ks: f64,
}

impl EvalReport {
    pub fn max_marginal_ks(&self) -> f64 {
        self.marginal_ks.iter().copied().fold(0.0, f64::max)
    }
}

/// KS distances of the marginals of `y` to N(0, 1) and of its row norms to
/// Chi(N).
pub fn gaussianity_ks(y: ArrayView2<f64>) -> (Vec<f64>, f64) {
    let n = y.ncols();
    let marginal = y
        .columns()
        .into_iter()
        .map(|c| ks_statistic(&c.to_vec(), normal_cdf))
        .collect();
    let radii: Vec<f64> = y.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let radial = ks_statistic(&radii, |r| chi_cdf(r, n));
    (marginal, radial)
}

/// Evaluate a fitted transform on `x`: ΔJ, likelihood, and marginal and
/// radial KS distances of the outputs.
pub fn marginal_radial_report(params: &GdnParams, x: ArrayView2<f64>) -> Result<EvalReport> {
    let out = transform::forward(params, x)?;
    let n = params.dim();
    let m = x.nrows().max(1) as f64;
    let quad_y: f64 = out
        .y
        .rows()
        .into_iter()
        .map(|r| 0.5 * r.dot(&r))
        .sum::<f64>()
        / m;
    let mean_logdet = out.logdet.sum() / m;
    let delta_j = mean_half_sq_norm(x) - (quad_y - mean_logdet);
    let log_likelihood = mean_logdet - quad_y - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let (marginal_ks, radial_ks) = gaussianity_ks(out.y.view());
    let mi = if n == 2 {
        Some(mutual_information(out.y.view(), None)?)
    } else {
        None
    };
    Ok(EvalReport {
        delta_j,
        delta_j_per_dim: delta_j / n as f64,
        log_likelihood,
        mi,
        marginal_ks,
        radial_ks,
    })
}

/// Sample excess kurtosis `m4 / m2² − 3`.
pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = (x - mean) * (x - mean);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / m, m4 / m);
    m4 / (m2 * m2) - 3.0
}

/// Normalized Amari index of `p = W A`, in `[0, 1]`; zero exactly when `W`
/// inverts `A` up to permutation and scaling of the rows.
pub fn amari_index(unmixing: &Array2<f64>, mixing: &Array2<f64>) -> f64 {
    let p = unmixing.dot(mixing).mapv(f64::abs);
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    let rows: f64 = p
        .rows()
        .into_iter()
        .map(|r| r.sum() / r.iter().copied().fold(0.0, f64::max) - 1.0)
        .sum();
    let cols: f64 = p
        .columns()
        .into_iter()
        .map(|c| c.sum() / c.iter().copied().fold(0.0, f64::max) - 1.0)
        .sum();
    (rows + cols) / (2.0 * n as f64 * (n as f64 - 1.0))
}

/// Fewest coefficient pairs accepted at any distance of an MI curve.
pub const MIN_CURVE_PAIRS: usize = 1000;

/// Settings for [`pairwise_mi_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct MiCurveConfig {
    /// Horizontal offsets between the two coefficients, in pixels.
    pub distances: Vec<usize>,
    /// Pairs kept per distance; a seeded subset is drawn when more exist.
    pub max_pairs: usize,
    pub seed: u64,
    /// Optimizer settings shared by the fitted variants; the tying is
    /// overridden per variant.
    pub fit: FitConfig,
    pub bins: Option<usize>,
    /// Start the full model from the best special case (by ΔJ) fitted before
    /// it in the variant list, and keep that start if the fit ends with a
    /// lower ΔJ.
    pub warm_start_full: bool,
}

/// One row of an MI curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MiPoint {
    pub distance: usize,
    /// `raw`, or the name of the tying fitted to the pairs.
    pub variant: String,
    pub mi: f64,
}

/// Coefficient pairs `(r[i][j], r[i][j + d])` pooled over the responses.
pub fn response_pairs(
    responses: &[Array2<f64>],
    d: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let counts: Vec<usize> = responses
        .iter()
        .map(|r| r.nrows() * r.ncols().saturating_sub(d))
        .collect();
    let total: usize = counts.iter().sum();
    if total < MIN_CURVE_PAIRS {
        return Err(GdnError::InvalidArgument(format!(
            "only {total} pairs at distance {d}, need {MIN_CURVE_PAIRS}"
        )));
    }
    let mut picks: Vec<usize> = if total > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, max_pairs).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();
    let mut out = Array2::zeros((picks.len(), 2));
    let (mut img, mut base) = (0, 0);
    for (row, &k) in picks.iter().enumerate() {
        while k >= base + counts[img] {
            base += counts[img];
            img += 1;
        }
        let r = &responses[img];
        let w = r.ncols() - d;
        let (i, j) = ((k - base) / w, (k - base) % w);
        out[[row, 0]] = r[[i, j]];
        out[[row, 1]] = r[[i, j + d]];
    }
    Ok(out)
}

/// Mutual information between coefficient pairs of the oriented-filter
/// response at each horizontal distance, before (`raw`) and after fitting
/// each two-dimensional variant in `variants` to those pairs. Variants are
/// fitted in the order given.
pub fn pairwise_mi_curve(
    images: &[GrayImage],
    variants: &[Tying],
    config: &MiCurveConfig,
) -> Result<Vec<MiPoint>> {
    let responses = images
        .iter()
        .map(oriented_response)
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &d in &config.distances {
        let pairs = response_pairs(&responses, d, config.max_pairs, config.seed)?;
        rows.push(MiPoint {
            distance: d,
            variant: "raw".into(),
            mi: mutual_information(pairs.view(), config.bins)?,
        });
        // Best (ΔJ, params) among the fitted special cases.
        let mut best: Option<(f64, GdnParams)> = None;
        for tying in variants {
            let fit_config = FitConfig {
                tying: tying.clone(),
                ..config.fit.clone()
            };
            let params = match (&best, tying) {
                (Some((start_dj, start)), Tying::Full) if config.warm_start_full => {
                    let fitted = trainer::fit_from(pairs.view(), &fit_config, start.clone())?.0;
                    // Never hand back something worse than the starting point.
                    if delta_j(&fitted, pairs.view())? >= *start_dj {
                        fitted
                    } else {
                        start.clone()
                    }
                }
                _ => trainer::fit(pairs.view(), &fit_config)?.0,
            };
            if *tying != Tying::Full {
                let dj = delta_j(&params, pairs.view())?;
                if best.as_ref().is_none_or(|(b, _)| dj > *b) {
                    best = Some((dj, params.clone()));
                }
            }
            let y = transform::forward(&params, pairs.view())?.y;
            rows.push(MiPoint {
                distance: d,
                variant: tying.name().to_string(),
                mi: mutual_information(y.view(), config.bins)?,
            });
        }
    }
    Ok(rows)
}
