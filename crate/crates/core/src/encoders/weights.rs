//! `TRW1` model weight files.
//!
//! Layout (little-endian): magic `TRW1`, `u32` format version, then named
//! tensors back to back as `(u32 name length, name bytes, u32 rows, u32 cols,
//! rows·cols f32)`, then the CRC32 of all preceding bytes. Tensors run until
//! the trailer; there is no count field.
//!
//! The first tensor, `meta.config`, is a 1×7 row holding the encoder
//! dimensions so a reader can rebuild the architecture.

use std::fs;
use std::path::Path;

use crate::diffcore::{Parameterized, Tensor};
use crate::encoders::{EncoderConfig, ReidModel};
use crate::error::{Error, Result};
use crate::io::binary::{len_u32, Reader, Writer};

pub const MAGIC: &[u8; 4] = b"TRW1";
pub const VERSION: u32 = 1;
const META: &str = "meta.config";
const KIND: &str = "TRW1 weight";

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    for (name, t) in tensors {
        w.str(name)?;
        w.u32(len_u32(t.rows())?);
        w.u32(len_u32(t.cols())?);
        for &v in t.data() {
            w.f32(v as f32);
        }
    }
    Ok(w.finish())
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let (mut r, version) = Reader::open(KIND, bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let name = r.str()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.f32s(rows * cols)?.into_iter().map(f64::from).collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

fn config_row(cfg: &EncoderConfig) -> Tensor {
    let v = [
        cfg.feature_dim,
        cfg.hidden_dim,
        cfg.embed_dim,
        cfg.heads,
        cfg.ffn_dim,
        cfg.blocks,
        cfg.max_views,
    ];
    Tensor::row_vector(&v.map(|x| x as f64))
}

fn config_from_row(t: &Tensor) -> Result<EncoderConfig> {
    if t.shape() != (1, 7) {
        return Err(Error::format(KIND, format!("meta.config has shape {:?}", t.shape())));
    }
    let d = t.data();
    for &v in d {
        if v < 0.0 || v.fract() != 0.0 || v > 16_777_216.0 {
            return Err(Error::format(KIND, format!("meta.config value {v} is not a dimension")));
        }
    }
    let cfg = EncoderConfig {
        feature_dim: d[0] as usize,
        hidden_dim: d[1] as usize,
        embed_dim: d[2] as usize,
        heads: d[3] as usize,
        ffn_dim: d[4] as usize,
        blocks: d[5] as usize,
        max_views: d[6] as usize,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_to_bytes(model: &ReidModel) -> Result<Vec<u8>> {
    let meta = config_row(&model.config);
    let params = model.params();
    let all = std::iter::once((META, &meta)).chain(params.iter().map(|(n, t)| (n.as_str(), *t)));
    encode_tensors(all)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ReidModel> {
    let tensors = decode_tensors(bytes)?;
    let (first, rest) = tensors
        .split_first()
        .ok_or_else(|| Error::format(KIND, "no tensors"))?;
    if first.0 != META {
        return Err(Error::format(KIND, "first tensor must be meta.config"));
    }
    let cfg = config_from_row(&first.1)?;
    let mut model = ReidModel::init(&cfg, 0)?;
    let mut slots = model.params_mut();
    if slots.len() != rest.len() {
        return Err(Error::format(
            KIND,
            format!("expected {} parameter tensors, found {}", slots.len(), rest.len()),
        ));
    }
    for ((name, slot), (file_name, t)) in slots.iter_mut().zip(rest) {
        if name != file_name {
            return Err(Error::format(KIND, format!("expected tensor {name}, found {file_name}")));
        }
        if slot.shape() != t.shape() {
            return Err(Error::format(
                KIND,
                format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            ));
        }
        **slot = t.clone();
    }
    drop(slots);
    Ok(model)
}

pub fn save(model: &ReidModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ReidModel> {
    model_from_bytes(&fs::read(path)?)
}
