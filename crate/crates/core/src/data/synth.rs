//! Exact samplers for distribution families with known structure, used as
//! ground truth for the fitting and evaluation code.
//!
//! Sample `s` is drawn from the ChaCha8 stream `s / 64` of the master seed,
//! so the output does not depend on how chunks are scheduled across threads.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{GdnError, Result};

use super::PatchSet;

const STREAM_CHUNK: usize = 64;

/// Distribution of the positive multiplier of a Gaussian scale mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleDist {
    Constant(f64),
    /// Uniform on `[lo, hi]`.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `exp(sigma · n)` with `n` standard normal.
    LogNormal {
        sigma: f64,
    },
}

impl ScaleDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScaleDist::Constant(c) => c > 0.0 && c.is_finite(),
            ScaleDist::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
            ScaleDist::LogNormal { sigma } => sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(GdnError::InvalidArgument(format!(
                "invalid scale distribution {self:?}"
            )))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ScaleDist::Constant(c) => c,
            ScaleDist::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            ScaleDist::LogNormal { sigma } => (sigma * rng.sample::<f64, _>(StandardNormal)).exp(),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            ScaleDist::Constant(c) => format!("constant({c})"),
            ScaleDist::Uniform { lo, hi } => format!("uniform({lo},{hi})"),
            ScaleDist::LogNormal { sigma } => format!("lognormal({sigma})"),
        }
    }
}

/// Fill `count` rows of width `dim`, one ChaCha stream per chunk of rows.
fn generate<F>(dim: usize, count: usize, seed: u64, row: F) -> Array2<f64>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let mut out = Array2::zeros((count, dim));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(STREAM_CHUNK * dim.max(1))
        .enumerate()
        .for_each(|(c, block)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for r in block.chunks_exact_mut(dim) {
                row(&mut rng, r);
            }
        });
    out
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(GdnError::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Gaussian scale mixture `x = s · g`, `g ~ N(0, I)`, `s ~ scale`.
pub fn gen_gsm(dim: usize, scale: ScaleDist, count: usize, seed: u64) -> Result<PatchSet> {
    check_dim(dim)?;
    scale.validate()?;
    let data = generate(dim, count, seed, |rng, r| {
        let s = scale.sample(rng);
        for v in r.iter_mut() {
            *v = s * rng.sample::<f64, _>(StandardNormal);
        }
    });
    Ok(PatchSet::new(
        data,
        format!("gsm:{}", scale.describe()),
        "none",
    ))
}

/// Unit-variance Laplacian sources mixed linearly: `x = A s`.
pub fn gen_ica_laplace(mixing: ArrayView2<f64>, count: usize, seed: u64) -> Result<PatchSet> {
    let dim = mixing.nrows();
    check_dim(dim)?;
    if mixing.ncols() != dim {
        return Err(GdnError::DimensionMismatch {
            expected: dim,
            got: mixing.ncols(),
        });
    }
    let b = std::f64::consts::FRAC_1_SQRT_2;
    let sources = generate(dim, count, seed, |rng, r| {
        for v in r.iter_mut() {
            let u: f64 = rng.gen::<f64>() - 0.5;
            // Inverse CDF of the Laplace law with scale b (variance 2b² = 1).
            *v = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    });
    let data = sources.dot(&mixing.t());
    Ok(PatchSet::new(data, "ica-laplace".to_string(), "none"))
}

/// Lp-symmetric scale mixture: coordinates of `u` are i.i.d. with density
/// proportional to `exp(−|u|^p)`, and `x = s · u` with a log-normal
/// multiplier `s = exp(0.5 n)`. For `p = 2` this is spherically symmetric.
pub fn gen_lp_radial(dim: usize, p: f64, count: usize, seed: u64) -> Result<PatchSet> {
    check_dim(dim)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(GdnError::InvalidArgument(format!(
            "exponent {p} must be positive"
        )));
    }
    let shape = Gamma::new(1.0 / p, 1.0).expect("positive shape");
    let data = generate(dim, count, seed, |rng, r| {
        let s = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        for v in r.iter_mut() {
            let g: f64 = shape.sample(rng);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            *v = s * sign * g.powf(1.0 / p);
        }
    });
    Ok(PatchSet::new(data, format!("lp-radial:{p}"), "none"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, mutual_information, normal_cdf};
    use ndarray::array;

    #[test]
    fn constant_scale_gsm_is_standard_normal() {
        let x = gen_gsm(2, ScaleDist::Constant(1.0), 20_000, 3)
            .unwrap()
            .data;
        for c in x.columns() {
            assert!(ks_statistic(&c.to_vec(), normal_cdf) < 1.63 / (20_000f64).sqrt());
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_gsm(3, ScaleDist::Uniform { lo: 0.5, hi: 2.0 }, 1000, 9).unwrap();
        let b = gen_gsm(3, ScaleDist::Uniform { lo: 0.5, hi: 2.0 }, 1000, 9).unwrap();
        assert_eq!(a.data, b.data);
        let c = gen_gsm(3, ScaleDist::Uniform { lo: 0.5, hi: 2.0 }, 1000, 10).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn prefix_does_not_depend_on_count() {
        let a = gen_lp_radial(2, 1.0, 100, 5).unwrap().data;
        let b = gen_lp_radial(2, 1.0, 1000, 5).unwrap().data;
        assert_eq!(a, b.slice(ndarray::s![..100, ..]));
    }

    #[test]
    fn unmixed_laplacians_are_independent() {
        let x = gen_ica_laplace(ndarray::Array2::eye(2).view(), 1_000_000, 1)
            .unwrap()
            .data;
        assert!(mutual_information(x.view(), Some(64)).unwrap() <= 0.01);
        let var = x.column(0).mapv(|v| v * v).mean().unwrap();
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn spherical_lp_is_rotation_invariant() {
        let x = gen_lp_radial(2, 2.0, 200_000, 2).unwrap().data;
        let t = std::f64::consts::FRAC_PI_6;
        let rot = array![[t.cos(), -t.sin()], [t.sin(), t.cos()]];
        let xr = x.dot(&rot.t());
        let a = mutual_information(x.view(), None).unwrap();
        let b = mutual_information(xr.view(), None).unwrap();
        assert!((a - b).abs() <= 0.01, "{a} vs {b}");
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(gen_gsm(0, ScaleDist::Constant(1.0), 10, 0).is_err());
        assert!(gen_gsm(2, ScaleDist::Uniform { lo: 0.0, hi: 1.0 }, 10, 0).is_err());
        assert!(gen_lp_radial(2, -1.0, 10, 0).is_err());
        assert!(gen_ica_laplace(array![[1.0, 0.0]].view(), 10, 0).is_err());
    }
}
