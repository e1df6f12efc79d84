//! Model checkpoints: a single binary file carrying the model
//! configuration, a tensor manifest, and little-endian f32 payloads.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NVF1"                                      magic
//! u32 config_len, config JSON                 ModelConfig, f64 scalars
//! u32 entry_count, per entry:
//!     u32 name_len, name bytes,
//!     u32 ndim, u64 dims...,
//!     u64 offset                              element offset into payload
//! u64 element_count, f32 payload              parameters in layout order
//! ```
//!
//! Writing is a pure function of the model, so identical models produce
//! byte-identical files. Loading rebuilds the architecture from the embedded
//! config and refuses any manifest that disagrees with it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{build_layout, Model, ModelConfig};
use crate::scalar::{rl, Real};

const MAGIC: &[u8; 4] = b"NVF1";

pub fn save_model<S: Real>(model: &Model<S>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<S: Real>(path: &Path) -> Result<Model<S>> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn write_model<S: Real, W: Write>(w: &mut W, model: &Model<S>) -> Result<()> {
    w.write_all(MAGIC)?;
    // Config scalars always serialize via f64 so the file does not depend on
    // the in-memory scalar type.
    let config = serde_json::to_vec(&config_to_f64(&model.cfg))?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;

    let entries = model.layout.entries();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(e.offset as u64).to_le_bytes())?;
    }

    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for &p in &model.params {
        w.write_all(&(p.to_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model<S: Real, R: Read>(r: &mut R) -> Result<Model<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let config_len = read_u32(r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let cfg: ModelConfig<S> = config_from_f64(serde_json::from_slice(&config_bytes)?);

    // The manifest must match the architecture the config describes.
    let (layout, encoder, mlp) = build_layout(&cfg);
    let expected = layout.entries();
    let entry_count = read_u32(r)? as usize;
    if entry_count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "manifest has {entry_count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    for want in expected {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let offset = read_u64(r)? as usize;
        if name != want.name || shape != want.shape || offset != want.offset {
            return Err(Error::Checkpoint(format!(
                "tensor {name} {shape:?} at {offset} does not match architecture \
                 ({} {:?} at {})",
                want.name, want.shape, want.offset
            )));
        }
    }

    let element_count = read_u64(r)? as usize;
    if element_count != layout.total() {
        return Err(Error::Checkpoint(format!(
            "payload has {element_count} elements, architecture needs {}",
            layout.total()
        )));
    }
    let mut params = Vec::with_capacity(element_count);
    let mut buf = [0u8; 4];
    for _ in 0..element_count {
        r.read_exact(&mut buf)?;
        params.push(rl::<S>(f32::from_le_bytes(buf) as f64));
    }

    Ok(Model {
        cfg,
        encoder,
        mlp,
        layout,
        params,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn config_to_f64<S: Real>(cfg: &ModelConfig<S>) -> ModelConfig<f64> {
    round_trip(cfg)
}

fn config_from_f64<S: Real>(cfg: ModelConfig<f64>) -> ModelConfig<S> {
    round_trip(&cfg)
}

/// Casts a config between scalar types through its JSON form; configs hold
/// a handful of numbers, so clarity beats a handwritten field-by-field cast.
fn round_trip<A: Real, B: Real>(cfg: &ModelConfig<A>) -> ModelConfig<B> {
    serde_json::from_value(serde_json::to_value(cfg).expect("config serializes"))
        .expect("config scalars fit both float types")
}
