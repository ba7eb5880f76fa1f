//! The density a fitted transform induces on its inputs: evaluation,
//! sampling, empirical-Bayes denoising, and image quality metrics.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::GrayImage;
use crate::error::{GdnError, Result};
use crate::objective::input_gradient;
use crate::params::GdnParams;
use crate::transform;

/// `log p(x) = log|det ∂y/∂x| − ½‖y‖² − (N/2) log 2π` for every row.
pub fn log_density(params: &GdnParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    let out = transform::forward(params, x)?;
    let c = 0.5 * params.dim() as f64 * (2.0 * PI).ln();
    Ok(out
        .y
        .rows()
        .into_iter()
        .zip(out.logdet.iter())
        .map(|(r, l)| l - 0.5 * r.dot(&r) - c)
        .collect())
}

/// Draws from the model plus the samples whose inversion did not converge.
#[derive(Debug, Clone)]
pub struct Samples {
    pub x: Array2<f64>,
    pub failures: Vec<(usize, f64)>,
}

/// Standard normal rows, one ChaCha stream per block of 64 rows.
pub fn standard_normal(count: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut y = Array2::zeros((count, dim));
    if dim == 0 {
        return y;
    }
    y.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(64 * dim)
        .enumerate()
        .for_each(|(c, block)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for v in block.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        });
    y
}

/// Sample by pushing standard normal draws through the inverse transform.
pub fn sample(params: &GdnParams, count: usize, seed: u64) -> Result<Samples> {
    let y = standard_normal(count, params.dim(), seed);
    let report = transform::inverse_report(params, y.view())?;
    Ok(Samples {
        x: report.x,
        failures: report.failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Closed-form gradient of the log-density.
    Analytic,
    /// Central differences of [`log_density`] per coordinate.
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    /// Noise standard deviation, in data units.
    pub sigma: f64,
    pub score_mode: ScoreMode,
    pub fd_step: f64,
}

impl DenoiseConfig {
    pub fn new(sigma: f64) -> Self {
        DenoiseConfig {
            sigma,
            score_mode: ScoreMode::Analytic,
            fd_step: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(GdnError::InvalidArgument("sigma must be positive".into()));
        }
        if self.score_mode == ScoreMode::Fd && !(self.fd_step > 0.0) {
            return Err(GdnError::InvalidArgument("fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// `∇_x log p(x)` for every row.
pub fn score(
    params: &GdnParams,
    x: ArrayView2<f64>,
    mode: ScoreMode,
    fd_step: f64,
) -> Result<Array2<f64>> {
    let s = match mode {
        ScoreMode::Analytic => input_gradient(params, x)?.mapv(|v| -v),
        ScoreMode::Fd => {
            let mut s = Array2::zeros(x.raw_dim());
            let mut probe = x.to_owned();
            for k in 0..x.ncols() {
                probe.column_mut(k).assign(&(&x.column(k) + fd_step));
                let up = log_density(params, probe.view())?;
                probe.column_mut(k).assign(&(&x.column(k) - fd_step));
                let down = log_density(params, probe.view())?;
                probe.column_mut(k).assign(&x.column(k));
                s.column_mut(k).assign(&((up - down) / (2.0 * fd_step)));
            }
            s
        }
    };
    if let Some((idx, _)) = s.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(GdnError::NonFinite {
            sample: idx.0,
            component: idx.1,
            what: "score",
        });
    }
    Ok(s)
}

/// Largest relative disagreement between the analytic and finite-difference
/// scores, `|a − f| / max(|a|, |f|, 1e-4)` over all entries.
pub fn score_self_check(params: &GdnParams, x: ArrayView2<f64>, fd_step: f64) -> Result<f64> {
    let a = score(params, x, ScoreMode::Analytic, fd_step)?;
    let f = score(params, x, ScoreMode::Fd, fd_step)?;
    Ok(a.iter()
        .zip(f.iter())
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-4))
        .fold(0.0, f64::max))
}

/// Least-squares estimate of clean vectors from noisy ones,
/// `x̂ = x̃ + σ² ∇ log p(x̃)`, where `params` models the noisy data.
pub fn denoise(
    params: &GdnParams,
    x_tilde: ArrayView2<f64>,
    config: &DenoiseConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let s = score(params, x_tilde, config.score_mode, config.fd_step)?;
    Ok(&x_tilde + &(s * (config.sigma * config.sigma)))
}

/// `image + sigma · n` with i.i.d. standard normal `n`, in the image's own
/// units and without clipping. The noise field depends only on the image
/// size and `seed`.
pub fn add_gaussian_noise(image: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GdnError::InvalidArgument(
            "noise sigma must be non-negative".into(),
        ));
    }
    let noise = standard_normal(image.height, image.width, seed);
    let pixels = image
        .pixels
        .iter()
        .zip(noise.iter())
        .map(|(p, n)| p + sigma * n)
        .collect();
    GrayImage::new(image.width, image.height, pixels, image.peak)
}

/// Patch geometry for [`denoise_image`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchDenoise {
    pub size: usize,
    pub stride: usize,
    /// Subtracted from every pixel before the model sees a patch.
    pub offset: f64,
}

fn positions(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = len - size;
    let mut p: Vec<usize> = (0..=last).step_by(stride).collect();
    if *p.last().expect("non-empty") != last {
        p.push(last);
    }
    p
}

/// Denoise an image patch by patch and average the overlapping estimates.
/// The last row and column of patches are always included, so every pixel
/// is covered as long as `stride <= size`.
pub fn denoise_image(
    params: &GdnParams,
    noisy: &GrayImage,
    geometry: &PatchDenoise,
    config: &DenoiseConfig,
) -> Result<GrayImage> {
    let size = geometry.size;
    if size * size != params.dim() {
        return Err(GdnError::DimensionMismatch {
            expected: params.dim(),
            got: size * size,
        });
    }
    if geometry.stride == 0 || geometry.stride > size || noisy.width < size || noisy.height < size {
        return Err(GdnError::InvalidArgument(
            "bad patch geometry for this image".into(),
        ));
    }
    let rows = positions(noisy.height, size, geometry.stride);
    let cols = positions(noisy.width, size, geometry.stride);
    let mut sum = vec![0.0; noisy.pixels.len()];
    let mut weight = vec![0u32; noisy.pixels.len()];
    // One band of patches at a time keeps memory bounded on large images.
    for &r0 in &rows {
        let mut batch = Array2::zeros((cols.len(), size * size));
        for (k, &c0) in cols.iter().enumerate() {
            for i in 0..size {
                for j in 0..size {
                    batch[[k, i * size + j]] = noisy.get(r0 + i, c0 + j) - geometry.offset;
                }
            }
        }
        let clean = denoise(params, batch.view(), config)?;
        for (k, &c0) in cols.iter().enumerate() {
            for i in 0..size {
                for j in 0..size {
                    let idx = (r0 + i) * noisy.width + c0 + j;
                    sum[idx] += clean[[k, i * size + j]] + geometry.offset;
                    weight[idx] += 1;
                }
            }
        }
    }
    let pixels = sum
        .iter()
        .zip(&weight)
        .map(|(s, &w)| s / w as f64)
        .collect();
    GrayImage::new(noisy.width, noisy.height, pixels, noisy.peak)
}

fn check_same(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(GdnError::DimensionMismatch {
            expected: a.pixels.len(),
            got: b.pixels.len(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 8;

/// Mean structural similarity over all 8×8 windows (stride 1, uniform
/// weights, unbiased window statistics), with dynamic range `peak`.
pub fn ssim(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let w = SSIM_WINDOW;
    if a.width < w || a.height < w {
        return Err(GdnError::InvalidArgument(
            "image smaller than the SSIM window".into(),
        ));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let np = (w * w) as f64;
    let (rows, cols) = (a.height - w + 1, a.width - w + 1);
    let total: f64 = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..cols {
                let (mut sa, mut sb) = (0.0, 0.0);
                for i in 0..w {
                    for j in 0..w {
                        sa += a.get(r + i, c + j);
                        sb += b.get(r + i, c + j);
                    }
                }
                let (ma, mb) = (sa / np, sb / np);
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                for i in 0..w {
                    for j in 0..w {
                        let da = a.get(r + i, c + j) - ma;
                        let db = b.get(r + i, c + j) - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                let (vaa, vbb, vab) = (vaa / (np - 1.0), vbb / (np - 1.0), vab / (np - 1.0));
                acc += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                    / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            }
            acc
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total / (rows * cols) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, normal_cdf};
    use ndarray::array;

    fn test_image(seed: u64) -> GrayImage {
        let px = standard_normal(32, 32, seed);
        GrayImage::from_array(&px.mapv(|v| 0.5 + 0.1 * v), 1.0)
    }

    #[test]
    fn identity_density_is_standard_normal() {
        let x = array![[0.0, 0.0], [1.0, -2.0]];
        let ld = log_density(&GdnParams::identity(2), x.view()).unwrap();
        let c = (2.0 * PI).ln();
        assert_eq!(ld[0], -c);
        assert_eq!(ld[1], -2.5 - c);
    }

    #[test]
    fn identity_samples_are_normal_and_reproducible() {
        let p = GdnParams::identity(3);
        let s = sample(&p, 5000, 11).unwrap();
        assert!(s.failures.is_empty());
        for c in s.x.columns() {
            assert!(ks_statistic(&c.to_vec(), normal_cdf) < 1.63 / (5000f64).sqrt());
        }
        assert_eq!(sample(&p, 5000, 11).unwrap().x, s.x);
    }

    #[test]
    fn gaussian_prior_gives_the_wiener_estimate() {
        let (s2, sigma) = (2.0f64, 0.7f64);
        let v = s2 + sigma * sigma;
        let mut p = GdnParams::identity(4);
        p.h = Array2::eye(4) / v.sqrt();
        let x = standard_normal(50, 4, 3) * v.sqrt();
        let est = denoise(&p, x.view(), &DenoiseConfig::new(sigma)).unwrap();
        for (e, xt) in est.iter().zip(x.iter()) {
            let w = xt * s2 / v;
            assert!((e - w).abs() <= 1e-10 * w.abs());
        }
    }

    #[test]
    fn vanishing_noise_leaves_input_unchanged() {
        let mut p = crate::params::init_params(3, &crate::params::Tying::Full).unwrap();
        p.gamma.fill(0.2);
        let x = standard_normal(20, 3, 5);
        let est = denoise(&p, x.view(), &DenoiseConfig::new(1e-6)).unwrap();
        assert!((&est - &x).iter().all(|d| d.abs() <= 1e-4));
    }

    #[test]
    fn bad_config_is_rejected() {
        let p = GdnParams::identity(2);
        let x = array![[0.0, 1.0]];
        assert!(denoise(&p, x.view(), &DenoiseConfig::new(0.0)).is_err());
        let cfg = DenoiseConfig {
            score_mode: ScoreMode::Fd,
            fd_step: 0.0,
            ..DenoiseConfig::new(0.1)
        };
        assert!(denoise(&p, x.view(), &cfg).is_err());
    }

    #[test]
    fn metrics_closed_forms() {
        let a = test_image(1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let b = GrayImage {
            pixels: a.pixels.iter().map(|v| v + 10.0 / 255.0).collect(),
            ..a.clone()
        };
        let expected = 10.0 * (1.0 / (10.0f64 / 255.0).powi(2)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 28.13).abs() < 0.01);
        let c = test_image(2);
        assert_eq!(ssim(&a, &c, 1.0).unwrap(), ssim(&c, &a, 1.0).unwrap());
        assert!(ssim(&a, &c, 1.0).unwrap() < 0.5);
    }

    #[test]
    fn identity_model_image_denoising_is_uniform_shrinkage() {
        // With an identity model every patch estimate is x̃ (1 − σ²) about
        // the offset, so overlap averaging returns the same per pixel.
        let p = GdnParams::identity(4);
        let img = test_image(4).crop(0, 0, 31, 31).unwrap();
        let geometry = PatchDenoise {
            size: 2,
            stride: 2,
            offset: 0.5,
        };
        let out = denoise_image(&p, &img, &geometry, &DenoiseConfig::new(0.5)).unwrap();
        for (o, i) in out.pixels.iter().zip(&img.pixels) {
            assert!((o - (0.5 + 0.75 * (i - 0.5))).abs() < 1e-12, "{o} {i}");
        }
    }
}
