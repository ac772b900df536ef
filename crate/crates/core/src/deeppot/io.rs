//! Binary model files.
//!
//! Layout, all integers `u32` little-endian and all reals `f64` little-endian:
//!
//! ```text
//! magic          b"DPMD"
//! version        1
//! n_types d_z n_max m m_r d_a n_attn
//! n_embed_hidden, embed_hidden[..]
//! n_fit_hidden, fit_hidden[..]
//! gate_norm      1 (rows of R·Rᵀ over Σ s²)
//! seed           u64
//! rc rcs         f64
//! n_tensors, then (rows, cols) per tensor
//! tensor data in the same order, row-major
//! ```
//!
//! Tensor order: type embedding; embedding layers (W, b); attention layers
//! (Wq, Wk, Wv, Wo); fitting layers (W, b); descriptor shift; descriptor scale.

use std::fs;
use std::path::Path;

use super::model::{DPConfig, DPModel, GATE_NORM_S2};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DPMD";
pub const FORMAT_VERSION: u32 = 1;

pub fn model_to_bytes(model: &DPModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    let u32s = |out: &mut Vec<u8>, v: &[usize]| {
        for &x in v {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
    };
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    u32s(&mut out, &[c.n_types, c.d_z, c.n_max, c.m, c.m_r, c.d_a, c.n_attn]);
    u32s(&mut out, &[c.embed_hidden.len()]);
    u32s(&mut out, &c.embed_hidden);
    u32s(&mut out, &[c.fit_hidden.len()]);
    u32s(&mut out, &c.fit_hidden);
    out.extend_from_slice(&GATE_NORM_S2.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&c.rc.to_le_bytes());
    out.extend_from_slice(&c.rcs.to_le_bytes());
    let shapes = model.shapes();
    u32s(&mut out, &[shapes.len()]);
    for (r, col) in &shapes {
        u32s(&mut out, &[*r, *col]);
    }
    for t in model.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat(format!("file truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::ModelFormat(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DPModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic, not a model file".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {version} not supported (expected {FORMAT_VERSION})"
        )));
    }
    let n_types = r.u32()?;
    let d_z = r.u32()?;
    let n_max = r.u32()?;
    let m = r.u32()?;
    let m_r = r.u32()?;
    let d_a = r.u32()?;
    let n_attn = r.u32()?;
    let embed_hidden = r.list()?;
    let fit_hidden = r.list()?;
    let gate = r.u32()? as u32;
    if gate != GATE_NORM_S2 {
        return Err(Error::ModelFormat(format!("unknown gate normalisation {gate}")));
    }
    let seed = r.u64()?;
    let rc = r.f64()?;
    let rcs = r.f64()?;
    let config = DPConfig {
        n_types,
        rc,
        rcs,
        n_max,
        d_z,
        embed_hidden,
        m,
        m_r,
        d_a,
        n_attn,
        fit_hidden,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::ModelFormat(format!("header describes an invalid model: {e}")))?;
    let mut model = DPModel::new(config)?;
    let expected = model.shapes();
    let n_tensors = r.u32()?;
    if n_tensors != expected.len() {
        return Err(Error::ModelFormat(format!(
            "shape mismatch: {n_tensors} tensors in table, header implies {}",
            expected.len()
        )));
    }
    for (k, want) in expected.iter().enumerate() {
        let got = (r.u32()?, r.u32()?);
        if got != *want {
            return Err(Error::ModelFormat(format!(
                "shape mismatch in tensor {k}: file has {got:?}, header implies {want:?}"
            )));
        }
    }
    for t in model.tensors_mut() {
        for x in t.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_model(model: &DPModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DPModel> {
    model_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed() -> DPModel {
        let mut m = DPModel::new(DPConfig::default()).unwrap();
        for (k, x) in m.fit_shift.iter_mut().enumerate() {
            *x = 0.1 * k as f64 + 1.0 / 3.0;
        }
        *m.energy_bias_mut() = -std::f64::consts::PI;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dp");
        let m = perturbed();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_header() {
        let m = perturbed();
        let mut bytes = model_to_bytes(&m);
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(Error::ModelFormat(_))));

        let mut bytes = model_to_bytes(&m);
        bytes[4] = 9;
        let err = model_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));

        let bytes = model_to_bytes(&m);
        assert!(model_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn shape_table_mismatch() {
        let m = perturbed();
        let mut bytes = model_to_bytes(&m);
        // first shape entry follows the fixed header
        let c = &m.config;
        let header = 4 + 4 + 7 * 4 + 4 + 4 * c.embed_hidden.len() + 4 + 4 * c.fit_hidden.len() + 4 + 8 + 16 + 4;
        bytes[header..header + 4].copy_from_slice(&5u32.to_le_bytes());
        let err = model_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }
}
