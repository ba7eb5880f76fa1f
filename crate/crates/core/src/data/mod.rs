//! Data sets: patch matrices with provenance, their file format, image
//! preprocessing and synthetic generators.

pub mod gaussianizer;
pub mod image;
pub mod synth;

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};

use crate::error::{GdnError, Result};

pub use gaussianizer::PointwiseGaussianizer;
pub use image::{extract_patches, filter_saturated, srgb_to_linear, GrayImage, PatchSampling};
pub use synth::{gen_gsm, gen_ica_laplace, gen_lp_radial, ScaleDist};

const PATCH_MAGIC: &[u8; 8] = b"GDNPATCH";
const PATCH_VERSION: u32 = 1;

/// M samples of dimension N, one per row, with a note on where they came
/// from and what was done to them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub data: Array2<f64>,
    pub source: String,
    pub preproc: String,
    /// Top-left corner of each patch for image-derived sets; empty otherwise.
    /// Not stored on disk.
    pub offsets: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn new(data: Array2<f64>, source: String, preproc: &str) -> Self {
        PatchSet {
            data,
            source,
            preproc: preproc.to_string(),
            offsets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Stack several sets of equal dimension.
    pub fn concat(sets: &[PatchSet], source: String) -> Result<PatchSet> {
        let views: Vec<_> = sets.iter().map(|s| s.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| GdnError::InvalidArgument(format!("cannot stack patch sets: {e}")))?;
        let preproc = sets.first().map(|s| s.preproc.clone()).unwrap_or_default();
        let mut out = PatchSet::new(data, source, &preproc);
        out.offsets = sets
            .iter()
            .flat_map(|s| s.offsets.iter().copied())
            .collect();
        Ok(out)
    }

    /// Subtract each row's own mean ("mean removed" mode).
    pub fn remove_patch_means(&mut self) {
        let means = self
            .data
            .mean_axis(Axis(1))
            .unwrap_or_else(|| Array1::zeros(0));
        self.data -= &means.insert_axis(Axis(1));
        self.append_preproc("patch-mean-removed");
    }

    pub fn append_preproc(&mut self, step: &str) {
        if self.preproc.is_empty() || self.preproc == "none" {
            self.preproc = step.to_string();
        } else {
            self.preproc = format!("{};{}", self.preproc, step);
        }
    }

    /// The first `count` rows.
    pub fn head(&self, count: usize) -> PatchSet {
        let count = count.min(self.len());
        PatchSet {
            data: self.data.slice(ndarray::s![..count, ..]).to_owned(),
            source: self.source.clone(),
            preproc: self.preproc.clone(),
            offsets: self.offsets.iter().take(count).copied().collect(),
        }
    }

    /// Binary form: magic, version, M, N, source and preprocessing strings,
    /// then M·N little-endian f64 values row by row.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PATCH_MAGIC)?;
        w.write_all(&PATCH_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        write_str(&mut w, &self.source)?;
        write_str(&mut w, &self.preproc)?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<PatchSet> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != PATCH_MAGIC {
            return Err(GdnError::Format("not a patch set file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != PATCH_VERSION {
            return Err(GdnError::Format(format!(
                "unsupported patch set version {version}"
            )));
        }
        let m = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let source = read_str(&mut r)?;
        let preproc = read_str(&mut r)?;
        let total = m
            .checked_mul(n)
            .filter(|t| *t <= (1 << 40))
            .ok_or_else(|| GdnError::Format("implausible patch set size".into()))?;
        let values = read_f64s(&mut r, total)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GdnError::Format(
                "patch set contains non-finite values".into(),
            ));
        }
        let data = Array2::from_shape_vec((m, n), values).expect("shape");
        Ok(PatchSet::new(data, source, &preproc))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<PatchSet> {
        let f = std::fs::File::open(path)?;
        PatchSet::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            GdnError::Format("truncated stream".into())
        } else {
            GdnError::Io(e)
        }
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..count {
        read_exact(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(GdnError::Format("string field too long".into()));
    }
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| GdnError::Format("string field is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn file_round_trip() {
        let set = PatchSet::new(array![[1.0, -2.5], [3.0, 1e-300]], "test".into(), "none");
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = PatchSet::read_from(&buf[..]).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let set = PatchSet::new(array![[1.0, -2.5], [3.0, 4.0]], "test".into(), "none");
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            PatchSet::read_from(&buf[..]),
            Err(GdnError::Format(_))
        ));
        assert!(matches!(
            PatchSet::read_from(&b"nonsense"[..]),
            Err(GdnError::Format(_))
        ));
    }

    #[test]
    fn patch_means_are_removed() {
        let mut set = PatchSet::new(array![[1.0, 3.0], [0.0, -4.0]], "t".into(), "none");
        set.remove_patch_means();
        assert_eq!(set.data, array![[-1.0, 1.0], [2.0, -2.0]]);
        assert_eq!(set.preproc, "patch-mean-removed");
    }
}
