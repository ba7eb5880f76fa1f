//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "GDNMODEL" | version u32 | dim u64 | tying tag u8 + payload
//! | preprocessing block | H, alpha, beta, gamma, epsilon as f64 row-major
//! ```
//!
//! A cascade file is `"GDNCASCD" | version u32 | stage count u32` followed by
//! one length-prefixed model block per stage.

use std::io::{Read, Write};

use crate::data::{
    read_exact, read_f64s, read_str, read_u32, read_u64, write_str, PointwiseGaussianizer,
};
use crate::error::{GdnError, Result};
use crate::params::{project_constraints, GdnParams, Tying};

const MODEL_MAGIC: &[u8; 8] = b"GDNMODEL";
const CASCADE_MAGIC: &[u8; 8] = b"GDNCASCD";
pub const FORMAT_VERSION: u32 = 1;

/// How raw data must be transformed before the model applies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    /// Pointwise nonlinearity applied to every intensity.
    pub gaussianizer: Option<PointwiseGaussianizer>,
    /// Constant subtracted from every value after the nonlinearity.
    pub offset: f64,
    /// Whether each patch had its own mean removed.
    pub patch_mean_removed: bool,
    /// Free-form description.
    pub note: String,
}

/// A model with everything needed to use it again.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: GdnParams,
    pub tying: Tying,
    pub preproc: Preprocessing,
}

fn tying_tag(t: &Tying) -> u8 {
    match t {
        Tying::Full => 0,
        Tying::ColumnTiedAlpha => 1,
        Tying::DiagonalGamma => 2,
        Tying::Radial => 3,
        Tying::LpRadial { .. } => 4,
        Tying::Subspaces { .. } => 5,
        Tying::ClassicDn => 6,
    }
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(read_f64s(r, 1)?[0])
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

/// Serialize a model.
pub fn write_model<W: Write>(mut w: W, model: &Model) -> Result<()> {
    model.params.validate()?;
    let n = model.params.dim();
    model.tying.validate(n)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&[tying_tag(&model.tying)])?;
    match &model.tying {
        Tying::LpRadial { p } => write_f64(&mut w, *p)?,
        Tying::Subspaces { partition } => {
            w.write_all(&(partition.len() as u32).to_le_bytes())?;
            for set in partition {
                w.write_all(&(set.len() as u32).to_le_bytes())?;
                for &i in set {
                    w.write_all(&(i as u64).to_le_bytes())?;
                }
            }
        }
        _ => {}
    }
    let pre = &model.preproc;
    match &pre.gaussianizer {
        Some(g) => {
            w.write_all(&[1])?;
            for v in [g.mu, g.s, g.nu, g.lower, g.upper] {
                write_f64(&mut w, v)?;
            }
        }
        None => w.write_all(&[0])?,
    }
    write_f64(&mut w, pre.offset)?;
    w.write_all(&[pre.patch_mean_removed as u8])?;
    write_str(&mut w, &pre.note)?;
    for v in model.params.to_flat() {
        write_f64(&mut w, v)?;
    }
    Ok(())
}

/// Deserialize a model, rejecting malformed streams and parameters that
/// break a constraint or the declared tying.
pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(GdnError::Format("not a model file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(GdnError::Format(format!(
            "model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = read_u64(&mut r)? as usize;
    if n == 0 || n > 1 << 16 {
        return Err(GdnError::Format(format!("implausible dimension {n}")));
    }
    let tying = match read_u8(&mut r)? {
        0 => Tying::Full,
        1 => Tying::ColumnTiedAlpha,
        2 => Tying::DiagonalGamma,
        3 => Tying::Radial,
        4 => Tying::LpRadial {
            p: read_f64(&mut r)?,
        },
        5 => {
            let k = read_u32(&mut r)? as usize;
            if k > n {
                return Err(GdnError::Format("more subspaces than dimensions".into()));
            }
            let mut partition = Vec::with_capacity(k);
            for _ in 0..k {
                let len = read_u32(&mut r)? as usize;
                if len > n {
                    return Err(GdnError::Format(
                        "subspace larger than the dimension".into(),
                    ));
                }
                let set = (0..len)
                    .map(|_| read_u64(&mut r).map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?;
                partition.push(set);
            }
            Tying::Subspaces { partition }
        }
        6 => Tying::ClassicDn,
        t => return Err(GdnError::Format(format!("unknown tying tag {t}"))),
    };
    let gaussianizer = match read_u8(&mut r)? {
        0 => None,
        1 => {
            let v = read_f64s(&mut r, 5)?;
            Some(PointwiseGaussianizer {
                mu: v[0],
                s: v[1],
                nu: v[2],
                lower: v[3],
                upper: v[4],
            })
        }
        t => return Err(GdnError::Format(format!("bad preprocessing flag {t}"))),
    };
    let offset = read_f64(&mut r)?;
    let patch_mean_removed = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        t => return Err(GdnError::Format(format!("bad mean-removal flag {t}"))),
    };
    let note = read_str(&mut r)?;
    let flat = read_f64s(&mut r, 3 * n * n + 2 * n)?;
    let params = GdnParams::from_flat(n, &flat)?;
    tying
        .validate(n)
        .map_err(|e| GdnError::InvariantViolation(e.to_string()))?;
    params.validate()?;
    if project_constraints(&params, &tying)? != params {
        return Err(GdnError::InvariantViolation(format!(
            "parameters do not conform to the {} tying",
            tying.name()
        )));
    }
    Ok(Model {
        params,
        tying,
        preproc: Preprocessing {
            gaussianizer,
            offset,
            patch_mean_removed,
            note,
        },
    })
}

pub fn save_model(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    Ok(buf)
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let mut r = bytes;
    let model = read_model(&mut r)?;
    if !r.is_empty() {
        return Err(GdnError::Format(format!(
            "{} trailing bytes after model",
            r.len()
        )));
    }
    Ok(model)
}

/// Serialize a cascade of models, first stage first.
pub fn save_cascade(stages: &[Model]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CASCADE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stages.len() as u32).to_le_bytes());
    for m in stages {
        let block = save_model(m)?;
        buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
        buf.extend_from_slice(&block);
    }
    Ok(buf)
}

pub fn load_cascade(bytes: &[u8]) -> Result<Vec<Model>> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != CASCADE_MAGIC {
        return Err(GdnError::Format("not a cascade file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(GdnError::Format(format!(
            "cascade format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut stages = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        if len > r.len() {
            return Err(GdnError::Format("truncated stream".into()));
        }
        let (block, rest) = r.split_at(len);
        stages.push(load_model(block)?);
        r = rest;
    }
    if !r.is_empty() {
        return Err(GdnError::Format("trailing bytes after cascade".into()));
    }
    Ok(stages)
}

/// True if `bytes` starts like a cascade file.
pub fn is_cascade(bytes: &[u8]) -> bool {
    bytes.starts_with(CASCADE_MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;

    fn model(n: usize, tying: Tying) -> Model {
        let mut params = init_params(n, &tying).unwrap();
        params.h[[0, n - 1]] = 0.25;
        params.beta[0] = 1.0 / 3.0;
        Model {
            params: project_constraints(&params, &tying).unwrap(),
            tying,
            preproc: Preprocessing {
                gaussianizer: Some(PointwiseGaussianizer {
                    mu: 0.1,
                    s: 0.9,
                    nu: 0.3,
                    lower: -0.01,
                    upper: 1.2,
                }),
                offset: 0.125,
                patch_mean_removed: true,
                note: "unit".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for tying in [
            Tying::Full,
            Tying::Radial,
            Tying::LpRadial { p: 1.5 },
            Tying::Subspaces {
                partition: vec![(0..8).collect(), (8..16).collect()],
            },
        ] {
            let m = model(16, tying);
            let bytes = save_model(&m).unwrap();
            assert_eq!(load_model(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn truncated_stream_is_a_parse_error() {
        let bytes = save_model(&model(4, Tying::Full)).unwrap();
        for cut in [3, 12, 30, bytes.len() - 1] {
            assert!(matches!(
                load_model(&bytes[..cut]),
                Err(GdnError::Format(_))
            ));
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = save_model(&model(2, Tying::Full)).unwrap();
        bytes[8] = 9;
        let err = load_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn zero_beta_violates_an_invariant() {
        let m = model(2, Tying::Full);
        let mut bytes = save_model(&m).unwrap();
        // beta[0] sits after H (4) and alpha (4) in the trailing arrays.
        let beta_at = bytes.len() - 8 * (3 * 4 + 2 * 2) + 8 * 8;
        bytes[beta_at..beta_at + 8].copy_from_slice(&0.0f64.to_le_bytes());
        assert!(matches!(
            load_model(&bytes),
            Err(GdnError::InvariantViolation(_))
        ));
    }

    #[test]
    fn cascade_round_trip() {
        let stages = vec![model(3, Tying::Full), model(3, Tying::DiagonalGamma)];
        let bytes = save_cascade(&stages).unwrap();
        assert!(is_cascade(&bytes));
        assert_eq!(load_cascade(&bytes).unwrap(), stages);
        assert!(load_cascade(&bytes[..bytes.len() - 2]).is_err());
    }
}
