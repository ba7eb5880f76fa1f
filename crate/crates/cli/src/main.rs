//! `gdn`: fit, apply and evaluate GDN density models from the command line.
//!
//! Exit codes: 0 success, 2 usage or invalid argument, 3 unreadable or
//! malformed input, 4 numerical failure. Failures print one line to stderr:
//! `error: kind=<usage|format|numerical> code=<n> message=<text>`.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gdn_core::cascade::{self, Stage};
use gdn_core::data::image::{
    extract_patches, filter_saturated, read_gray, write_pgm, GrayImage, PatchSampling,
};
use gdn_core::data::{
    gen_gsm, gen_ica_laplace, gen_lp_radial, PatchSet, PointwiseGaussianizer, ScaleDist,
};
use gdn_core::density::{add_gaussian_noise, denoise_image, PatchDenoise, ScoreMode};
use gdn_core::model_io::{is_cascade, load_cascade, save_cascade};
use gdn_core::{
    fit, forward, load_model, marginal_radial_report, pairwise_mi_curve, psnr, sample, save_model,
    ssim, DenoiseConfig, FitConfig, GdnError, InitMode, MiCurveConfig, Model, Preprocessing, Tying,
};
use ndarray::Array2;

use config::FitFile;

type Result<T, E = GdnError> = std::result::Result<T, E>;

#[derive(Parser, Debug)]
#[command(
    name = "gdn",
    version,
    about = "Gaussianizing GDN transforms and the densities they induce"
)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model (or a cascade) to a patch file.
    Fit(FitArgs),
    /// Apply a model to a patch file.
    Transform(ApplyArgs),
    /// Invert a model on a patch file.
    Invert(ApplyArgs),
    /// Draw samples from the density a model induces.
    Sample(SampleArgs),
    /// Denoise a grayscale image with a model of noisy patches.
    Denoise(DenoiseArgs),
    /// ΔJ, likelihood and Gaussianity statistics of a model on data.
    Eval(EvalArgs),
    /// Pairwise MI of oriented-filter coefficients against distance.
    Micurve(MicurveArgs),
    /// Write a patch file from a synthetic generator or from images.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML key-value file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Report destination; defaults to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Noisy image, or the clean image when `--noise-seed` is given.
    #[arg(long)]
    image: PathBuf,
    /// Noise standard deviation in units of the image peak.
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
    /// Add noise with this seed to `--image` first and score against it.
    #[arg(long, conflicts_with = "reference")]
    noise_seed: Option<u64>,
    /// Clean image for PSNR and SSIM.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Crop `row,col,width,height` applied to every image read.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<[usize; 4]>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Subtracted before the model sees a patch; defaults to the mean of the
    /// noisy image.
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long, default_value = "analytic", value_parser = ["analytic", "fd"])]
    score: String,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MicurveArgs {
    #[arg(long = "image", required = true, num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    distances: Vec<usize>,
    #[arg(long, default_value_t = 50_000)]
    max_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optimizer settings for the per-distance fits; tying is ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fit the full model from scratch instead of from the best special case.
    #[arg(long)]
    cold_start: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    /// Gaussian scale mixture `s·g`.
    Gsm {
        #[arg(long)]
        dim: usize,
        /// `lognormal:SIGMA`, `uniform:LO:HI` or `constant:C`.
        #[arg(long, default_value = "lognormal:1", value_parser = parse_scale)]
        scale: ScaleDist,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Linearly mixed unit-variance Laplacian sources.
    Ica {
        /// Row-major mixing matrix, rows separated by `;`, e.g. `1,0.6;0.4,1`.
        #[arg(long, value_parser = parse_matrix)]
        mixing: Array2<f64>,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Lp-symmetric scale mixture.
    Lp {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Square patches from PGM/PPM images, intensities scaled to [0, 1].
    Patches(PatchArgs),
}

#[derive(Args, Debug)]
struct GenCommon {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PatchArgs {
    #[arg(long = "image", required = true, num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Random patches per image; without it every `--stride`-th patch is taken.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_crop)]
    crop: Option<[usize; 4]>,
    /// Drop images whose top-bin fraction exceeds this.
    #[arg(long)]
    saturation: Option<f64>,
    /// Fit one pointwise Gaussianizer to all pixels and apply it.
    #[arg(long)]
    gaussianize: bool,
    /// Add Gaussian noise of this standard deviation to every image first.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 7)]
    noise_seed: u64,
    /// Subtract the mean of all pixels of all images.
    #[arg(long, conflicts_with = "patch_mean")]
    remove_mean: bool,
    /// Subtract each patch's own mean.
    #[arg(long)]
    patch_mean: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_crop(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected row,col,width,height".to_string())
}

fn parse_scale(s: &str) -> Result<ScaleDist, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("{t}: {e}"));
    match parts.as_slice() {
        ["lognormal", sigma] => Ok(ScaleDist::LogNormal { sigma: num(sigma)? }),
        ["uniform", lo, hi] => Ok(ScaleDist::Uniform {
            lo: num(lo)?,
            hi: num(hi)?,
        }),
        ["constant", c] => Ok(ScaleDist::Constant(num(c)?)),
        _ => Err("expected lognormal:SIGMA, uniform:LO:HI or constant:C".into()),
    }
}

fn parse_matrix(s: &str) -> Result<Array2<f64>, String> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err("mixing matrix must be square".into());
    }
    Array2::from_shape_vec((n, n), rows.concat()).map_err(|e| e.to_string())
}

fn exit_code(e: &GdnError) -> (u8, &'static str) {
    if e.is_numerical() {
        return (4, "numerical");
    }
    match e {
        GdnError::InvalidArgument(_) | GdnError::InvalidTying(_) => (2, "usage"),
        GdnError::Stage { source, .. } => exit_code(source),
        _ => (3, "format"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| GdnError::InvalidArgument(e.to_string()))
        .and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: kind={kind} code={code} message={message}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Transform(a) => cmd_apply(a, false),
        Command::Invert(a) => cmd_apply(a, true),
        Command::Sample(a) => cmd_sample(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Micurve(a) => cmd_micurve(a),
        Command::Gen(g) => cmd_gen(g),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GdnError::Format(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| GdnError::Format(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A single model or the stages of a cascade.
fn load_stages(path: &Path) -> Result<Vec<Model>> {
    let bytes = read(path)?;
    if is_cascade(&bytes) {
        load_cascade(&bytes)
    } else {
        Ok(vec![load_model(&bytes)?])
    }
}

fn as_stages(models: &[Model]) -> Vec<Stage> {
    models
        .iter()
        .map(|m| Stage {
            params: m.params.clone(),
            tying: m.tying.clone(),
        })
        .collect()
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let data = PatchSet::load(&a.data)?;
    let file = match &a.config {
        Some(p) => FitFile::parse(&String::from_utf8_lossy(&read(p)?))?,
        None => FitFile::default(),
    };
    let config = file.resolve(data.dim())?;
    let preproc = Preprocessing {
        note: format!("source={}; preproc={}", data.source, data.preproc),
        ..Preprocessing::default()
    };
    let model = |params, tying| Model {
        params,
        tying,
        preproc: preproc.clone(),
    };
    let (bytes, stage_reports, delta_j) = if file.stages == 1 {
        let (params, rep) = fit(data.data.view(), &config)?;
        let dj = gdn_core::delta_j(&params, data.data.view())?;
        (
            save_model(&model(params, config.tying.clone()))?,
            vec![rep],
            dj,
        )
    } else {
        let configs: Vec<FitConfig> = (0..file.stages)
            .map(|k| FitConfig {
                init: if k == 0 {
                    config.init
                } else {
                    InitMode::Identity
                },
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            })
            .collect();
        let fitted = cascade::fit_cascade(data.data.view(), &configs)?;
        let (dj, _) = cascade::cascade_delta_j(&fitted.stages, data.data.view())?;
        let models: Vec<Model> = fitted
            .stages
            .into_iter()
            .map(|s| model(s.params, s.tying))
            .collect();
        (save_cascade(&models)?, fitted.reports, dj)
    };
    write(&a.out, &bytes)?;
    let text = report::fit_report(&file, &data, &stage_reports, delta_j);
    emit(a.report.as_deref(), &text)
}

fn cmd_apply(a: ApplyArgs, invert: bool) -> Result<()> {
    let models = load_stages(&a.model)?;
    let data = PatchSet::load(&a.data)?;
    let stages = as_stages(&models);
    let (out, step) = if invert {
        (
            cascade::invert_cascade(&stages, data.data.view())?,
            "inverse",
        )
    } else if stages.len() == 1 {
        (forward(&stages[0].params, data.data.view())?.y, "transform")
    } else {
        (
            cascade::forward_cascade(&stages, data.data.view())?.0,
            "transform",
        )
    };
    let mut set = PatchSet::new(out, data.source.clone(), &data.preproc);
    set.append_preproc(&format!("gdn-{step}:{}", a.model.display()));
    set.save(&a.out)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let models = load_stages(&a.model)?;
    if models.len() != 1 {
        return Err(GdnError::InvalidArgument(
            "sampling needs a single-stage model".into(),
        ));
    }
    let s = sample(&models[0].params, a.count, a.seed)?;
    if let Some(&(sample, residual)) = s.failures.first() {
        eprintln!(
            "warning: {} samples did not invert (first: {sample}, residual {residual:e})",
            s.failures.len()
        );
    }
    let set = PatchSet::new(
        s.x,
        format!("sample:{}:seed={}", a.model.display(), a.seed),
        "none",
    );
    set.save(&a.out)
}

fn load_image(path: &Path, crop: Option<[usize; 4]>) -> Result<GrayImage> {
    let image = read_gray(path)?.normalized();
    match crop {
        Some([r, c, w, h]) => image.crop(r, c, w, h),
        None => Ok(image),
    }
}

fn cmd_denoise(a: DenoiseArgs) -> Result<()> {
    let models = load_stages(&a.model)?;
    if models.len() != 1 {
        return Err(GdnError::InvalidArgument(
            "denoising needs a single-stage model".into(),
        ));
    }
    let input = load_image(&a.image, a.crop)?;
    let (noisy, reference) = match (a.noise_seed, &a.reference) {
        (Some(seed), _) => (add_gaussian_noise(&input, a.sigma, seed)?, Some(input)),
        (None, Some(r)) => (input, Some(load_image(r, a.crop)?)),
        (None, None) => (input, None),
    };
    let offset = a
        .offset
        .unwrap_or_else(|| noisy.pixels.iter().sum::<f64>() / noisy.pixels.len() as f64);
    let size = (models[0].params.dim() as f64).sqrt().round() as usize;
    let geometry = PatchDenoise {
        size,
        stride: a.stride,
        offset,
    };
    let config = DenoiseConfig {
        score_mode: if a.score == "fd" {
            ScoreMode::Fd
        } else {
            ScoreMode::Analytic
        },
        ..DenoiseConfig::new(a.sigma)
    };
    let clean = denoise_image(&models[0].params, &noisy, &geometry, &config)?;
    write_pgm(&a.out, &clean, a.sixteen_bit)?;
    let mut rows = vec![
        ("sigma".to_string(), a.sigma),
        ("offset".to_string(), offset),
    ];
    if let Some(r) = reference {
        rows.push(("psnr_noisy".into(), psnr(&r, &noisy, 1.0)?));
        rows.push(("psnr_denoised".into(), psnr(&r, &clean, 1.0)?));
        rows.push(("ssim_noisy".into(), ssim(&r, &noisy, 1.0)?));
        rows.push(("ssim_denoised".into(), ssim(&r, &clean, 1.0)?));
    }
    print!("{}", report::key_values(&rows));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let models = load_stages(&a.model)?;
    let data = PatchSet::load(&a.data)?;
    let text = if models.len() == 1 {
        report::eval_report(&marginal_radial_report(
            &models[0].params,
            data.data.view(),
        )?)
    } else {
        let stages = as_stages(&models);
        let (total, parts) = cascade::cascade_delta_j(&stages, data.data.view())?;
        let (y, _) = cascade::forward_cascade(&stages, data.data.view())?;
        let (marginal, radial) = gdn_core::stats::gaussianity_ks(y.view());
        report::cascade_eval_report(total, &parts, data.dim(), &marginal, radial)
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_micurve(a: MicurveArgs) -> Result<()> {
    let images = a
        .images
        .iter()
        .map(|p| read_gray(p))
        .collect::<Result<Vec<_>>>()?;
    let file = match &a.config {
        Some(p) => FitFile::parse(&String::from_utf8_lossy(&read(p)?))?,
        None => FitFile {
            epochs: 30,
            learning_rate: 1e-2,
            final_lr_fraction: 0.03,
            init: "zca".into(),
            ..FitFile::default()
        },
    };
    let config = MiCurveConfig {
        distances: a.distances,
        max_pairs: a.max_pairs,
        seed: a.seed,
        fit: file.resolve(2)?,
        bins: None,
        warm_start_full: !a.cold_start,
    };
    let rows = pairwise_mi_curve(
        &images,
        &[Tying::DiagonalGamma, Tying::Radial, Tying::Full],
        &config,
    )?;
    emit(a.out.as_deref(), &report::mi_table(&rows))
}

fn cmd_gen(g: GenCommand) -> Result<()> {
    let (set, out) = match g {
        GenCommand::Gsm { dim, scale, common } => {
            (gen_gsm(dim, scale, common.count, common.seed)?, common.out)
        }
        GenCommand::Ica { mixing, common } => (
            gen_ica_laplace(mixing.view(), common.count, common.seed)?,
            common.out,
        ),
        GenCommand::Lp { dim, p, common } => (
            gen_lp_radial(dim, p, common.count, common.seed)?,
            common.out,
        ),
        GenCommand::Patches(a) => {
            let out = a.out.clone();
            (gen_patches(a)?, out)
        }
    };
    set.save(&out)
}

fn gen_patches(a: PatchArgs) -> Result<PatchSet> {
    let mut images = a
        .images
        .iter()
        .map(|p| load_image(p, a.crop))
        .collect::<Result<Vec<_>>>()?;
    let mut steps = Vec::new();
    if let Some(max) = a.saturation {
        let (kept, removed) = filter_saturated(images, max);
        images = kept;
        steps.push(format!("saturation<={max}:dropped={removed}"));
        if images.is_empty() {
            return Err(GdnError::InvalidArgument(
                "every image was saturated".into(),
            ));
        }
    }
    if let Some(sigma) = a.noise_sigma {
        images = images
            .iter()
            .enumerate()
            .map(|(k, im)| add_gaussian_noise(im, sigma, a.noise_seed.wrapping_add(k as u64)))
            .collect::<Result<_>>()?;
        steps.push(format!("noise:sigma={sigma}:seed={}", a.noise_seed));
    }
    if a.gaussianize {
        let pooled: Vec<f64> = images
            .iter()
            .flat_map(|i| i.pixels.iter().copied())
            .collect();
        let g = PointwiseGaussianizer::fit(&pooled)?;
        for im in images.iter_mut() {
            g.apply_all(&mut im.pixels)?;
        }
        steps.push(g.describe());
    }
    if a.remove_mean {
        let total: usize = images.iter().map(|i| i.pixels.len()).sum();
        let mean = images.iter().flat_map(|i| i.pixels.iter()).sum::<f64>() / total as f64;
        for im in images.iter_mut() {
            im.pixels.iter_mut().for_each(|p| *p -= mean);
        }
        steps.push(format!("mean-removed:{mean}"));
    }
    let sets = images
        .iter()
        .enumerate()
        .map(|(k, im)| {
            let sampling = match a.count {
                Some(count) => PatchSampling::Random {
                    count,
                    seed: a.seed.wrapping_add(k as u64),
                },
                None => PatchSampling::Grid { stride: a.stride },
            };
            extract_patches(im, a.size, sampling)
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = a.images.iter().map(|p| p.display().to_string()).collect();
    let mut set = PatchSet::concat(&sets, names.join(","))?;
    for s in steps {
        set.append_preproc(&s);
    }
    if a.patch_mean {
        set.remove_patch_means();
    }
    Ok(set)
}
