//! Grayscale images: PNM input/output, sRGB linearization, saturation
//! screening, patch extraction and a small oriented filter.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GdnError, Result};

use super::PatchSet;

/// Single-channel image, row-major, with the value of full white.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    /// Largest representable intensity (255 for 8-bit files, 1 for linear
    /// luminance).
    pub peak: f64,
}

/// An RGB image with 8-bit channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// Contents of a portable graymap or pixmap.
#[derive(Debug, Clone, PartialEq)]
pub enum Pnm {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, peak: f64) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(GdnError::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            peak,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.height, self.width), self.pixels.clone()).expect("shape")
    }

    pub fn from_array(a: &Array2<f64>, peak: f64) -> Self {
        GrayImage {
            width: a.ncols(),
            height: a.nrows(),
            pixels: a.iter().copied().collect(),
            peak,
        }
    }

    /// Same pixels with intensities divided by `peak`.
    pub fn normalized(&self) -> GrayImage {
        GrayImage {
            pixels: self.pixels.iter().map(|v| v / self.peak).collect(),
            peak: 1.0,
            ..self.clone()
        }
    }

    /// Top-left aligned `width × height` crop starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<GrayImage> {
        if row + height > self.height || col + width > self.width {
            return Err(GdnError::InvalidArgument("crop exceeds the image".into()));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for r in row..row + height {
            pixels.extend_from_slice(
                &self.pixels[r * self.width + col..r * self.width + col + width],
            );
        }
        GrayImage::new(width, height, pixels, self.peak)
    }
}

fn format_err(e: image::ImageError) -> GdnError {
    match e {
        image::ImageError::IoError(io) => GdnError::Io(io),
        other => GdnError::Format(other.to_string()),
    }
}

/// Read a PGM (8 or 16 bit) or PPM (8 bit) file.
pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(format_err)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok(Pnm::Gray(GrayImage::new(
            w,
            h,
            b.into_raw().into_iter().map(f64::from).collect(),
            255.0,
        )?)),
        DynamicImage::ImageLuma16(b) => Ok(Pnm::Gray(GrayImage::new(
            w,
            h,
            b.into_raw().into_iter().map(f64::from).collect(),
            65535.0,
        )?)),
        DynamicImage::ImageRgb8(b) => Ok(Pnm::Rgb(RgbImage {
            width: w,
            height: h,
            pixels: b.pixels().map(|p| p.0).collect(),
        })),
        other => Err(GdnError::Format(format!(
            "unsupported pixel layout {:?}",
            other.color()
        ))),
    }
}

/// Read a file as grayscale: PGM as-is, PPM through [`srgb_to_linear`]
/// (peak 1).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    match read_pnm(path)? {
        Pnm::Gray(g) => Ok(g),
        Pnm::Rgb(rgb) => Ok(srgb_to_linear(&rgb)),
    }
}

/// Write a binary PGM, quantizing `image.pixels / image.peak` to 8 or 16
/// bits with clipping.
pub fn write_pgm(path: &Path, image: &GrayImage, sixteen_bit: bool) -> Result<()> {
    let (w, h) = (image.width as u32, image.height as u32);
    let scaled = image
        .pixels
        .iter()
        .map(|v| (v / image.peak).clamp(0.0, 1.0));
    let res = if sixteen_bit {
        let raw: Vec<u16> = scaled.map(|v| (v * 65535.0).round() as u16).collect();
        ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
            .expect("size")
            .save_with_format(path, image::ImageFormat::Pnm)
    } else {
        let raw: Vec<u8> = scaled.map(|v| (v * 255.0).round() as u8).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
            .expect("size")
            .save_with_format(path, image::ImageFormat::Pnm)
    };
    res.map_err(format_err)
}

/// sRGB decoding of one 8-bit channel to linear light in [0, 1].
pub fn srgb_channel_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_channel_to_linear`] on [0, 1] (unquantized).
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Rec. 709 weights applied to linear RGB.
const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Linear luminance of an 8-bit sRGB image (peak 1).
pub fn srgb_to_linear(rgb: &RgbImage) -> GrayImage {
    let lut: Vec<f64> = (0..=255u8).map(srgb_channel_to_linear).collect();
    let pixels = rgb
        .pixels
        .iter()
        .map(|p| (0..3).map(|c| LUMA[c] * lut[p[c] as usize]).sum())
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        pixels,
        peak: 1.0,
    }
}

/// Fraction of pixels in the highest of 256 equal-width bins over
/// `[0, peak]`.
pub fn top_bin_fraction(image: &GrayImage) -> f64 {
    let threshold = image.peak * 255.0 / 256.0;
    let top = image.pixels.iter().filter(|&&v| v >= threshold).count();
    top as f64 / image.pixels.len().max(1) as f64
}

/// Drop images whose top histogram bin holds strictly more than
/// `max_fraction` of the pixels. Returns the kept images and the number
/// removed.
pub fn filter_saturated(images: Vec<GrayImage>, max_fraction: f64) -> (Vec<GrayImage>, usize) {
    let before = images.len();
    let kept: Vec<GrayImage> = images
        .into_iter()
        .filter(|im| top_bin_fraction(im) <= max_fraction)
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// How patch positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchSampling {
    /// Every position on a grid with the given stride.
    Grid { stride: usize },
    /// `count` positions drawn uniformly (with replacement) from a seeded
    /// generator.
    Random { count: usize, seed: u64 },
}

/// Vectorize `size × size` patches (row-major within the patch). Pixel
/// values are copied unchanged.
pub fn extract_patches(
    image: &GrayImage,
    size: usize,
    sampling: PatchSampling,
) -> Result<PatchSet> {
    if size == 0 || image.width < size || image.height < size {
        return Err(GdnError::InvalidArgument(format!(
            "image {}×{} is smaller than patch size {size}",
            image.width, image.height
        )));
    }
    let (rows, cols) = (image.height - size + 1, image.width - size + 1);
    let offsets: Vec<(usize, usize)> = match sampling {
        PatchSampling::Grid { stride } => {
            if stride == 0 {
                return Err(GdnError::InvalidArgument("stride must be positive".into()));
            }
            (0..rows)
                .step_by(stride)
                .flat_map(|r| (0..cols).step_by(stride).map(move |c| (r, c)))
                .collect()
        }
        PatchSampling::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols)))
                .collect()
        }
    };
    let n = size * size;
    let mut data = Array2::zeros((offsets.len(), n));
    for (k, &(r0, c0)) in offsets.iter().enumerate() {
        let mut row = data.row_mut(k);
        for i in 0..size {
            for j in 0..size {
                row[i * size + j] = image.get(r0 + i, c0 + j);
            }
        }
    }
    let mut set = PatchSet::new(
        data,
        format!("image:{}x{}", image.width, image.height),
        "none",
    );
    set.offsets = offsets;
    Ok(set)
}

/// 5×5 horizontal derivative-of-Gaussian kernel (sigma 1), zero mean and
/// unit L1 norm, responding to vertical edges.
pub fn oriented_kernel() -> [[f64; 5]; 5] {
    let mut k = [[0.0; 5]; 5];
    let mut l1 = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 2.0, j as f64 - 2.0);
            *v = -x * (-(x * x + y * y) / 2.0).exp();
            l1 += v.abs();
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= l1;
        }
    }
    k
}

/// Correlate with the oriented kernel over the valid region; the output is
/// `(height − 4) × (width − 4)`.
pub fn oriented_response(image: &GrayImage) -> Result<Array2<f64>> {
    if image.width < 5 || image.height < 5 {
        return Err(GdnError::InvalidArgument(
            "image smaller than the 5×5 filter".into(),
        ));
    }
    let k = oriented_kernel();
    let (h, w) = (image.height - 4, image.width - 4);
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let mut s = 0.0;
        for (i, row) in k.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                s += v * image.get(r + i, c + j);
            }
        }
        s
    }))
}
