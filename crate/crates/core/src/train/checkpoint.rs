//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "SYNBRDG\0" | u32 version | u32 meta_len | meta (key=value lines)
//! u32 n_params | n × (u32 name_len, name, u32 rank, rank × u32 dim, f32 data)
//! u8 has_optimizer | [u64 t, n × (f64 m, f64 v)]
//! u32 crc32 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::AdamW;
use super::TrainError;
use crate::chemgraph::ELEMENT_SYMBOLS;
use crate::model::{Model, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SYNBRDG\0";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub optimizer: Option<AdamW>,
    /// Free-form run metadata stored alongside the model description.
    pub meta: BTreeMap<String, String>,
}

fn err(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn put_u32(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&(x as u32).to_le_bytes());
}

fn encode(ck: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    let cfg = &ck.model.config;
    let mut meta = BTreeMap::new();
    for (k, v) in &ck.meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(err(format!("metadata entry {k:?} is not representable")));
        }
        meta.insert(k.clone(), v.clone());
    }
    for (k, v) in [
        ("d_model", cfg.d_model),
        ("n_enc_layers", cfg.n_enc_layers),
        ("n_merge_layers", cfg.n_merge_layers),
        ("n_dec_layers", cfg.n_dec_layers),
        ("n_heads", cfg.n_heads),
        ("max_atoms", cfg.max_atoms),
    ] {
        meta.insert(k.to_string(), v.to_string());
    }
    meta.insert("step".into(), ck.step.to_string());
    meta.insert("vocab".into(), ELEMENT_SYMBOLS.join(","));
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    put_u32(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    put_u32(&mut buf, ck.model.params.len());
    for p in ck.model.params.iter() {
        put_u32(&mut buf, p.name.len());
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.value.shape.len());
        p.value.shape.iter().for_each(|&d| put_u32(&mut buf, d));
        for &x in &p.value.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    match &ck.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.t.to_le_bytes());
            for (m, v) in opt.m.iter().zip(&opt.v) {
                m.iter().chain(v).for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| err("truncated file"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TrainError> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    if crc32fast::hash(body) != stored {
        return Err(err("checksum mismatch; file is corrupt"));
    }
    let meta_len = r.u32()?;
    let text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| err("metadata is not UTF-8"))?;
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("bad metadata line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let vocab = meta.remove("vocab").ok_or_else(|| err("missing element vocabulary"))?;
    if vocab != ELEMENT_SYMBOLS.join(",") {
        return Err(err("element vocabulary differs from this build"));
    }
    let mut field = |k: &str| -> Result<u64, TrainError> {
        meta.remove(k)
            .ok_or_else(|| err(format!("missing metadata {k}")))?
            .parse()
            .map_err(|_| err(format!("metadata {k} is not an integer")))
    };
    let config = ModelConfig {
        d_model: field("d_model")? as usize,
        n_enc_layers: field("n_enc_layers")? as usize,
        n_merge_layers: field("n_merge_layers")? as usize,
        n_dec_layers: field("n_dec_layers")? as usize,
        n_heads: field("n_heads")? as usize,
        max_atoms: field("max_atoms")? as usize,
    };
    let step = field("step")?;
    let mut model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;

    let n_params = r.u32()?;
    if n_params != model.params.len() {
        return Err(err(format!("{n_params} parameters stored, configuration defines {}", model.params.len())));
    }
    for p in model.params.iter_mut() {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| err("parameter name is not UTF-8"))?;
        if name != p.name {
            return Err(err(format!("expected parameter {}, found {name}", p.name)));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if shape != p.value.shape {
            return Err(err(format!("{name}: stored shape {shape:?}, expected {:?}", p.value.shape)));
        }
        let raw = r.take(p.value.len() * 4)?;
        for (x, c) in p.value.data.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let mut opt = AdamW::new(&model.params, 0.0);
            opt.t = r.u64()?;
            for (m, v) in opt.m.iter_mut().zip(opt.v.iter_mut()) {
                *m = r.f64s(m.len())?;
                *v = r.f64s(v.len())?;
            }
            Some(opt)
        }
        b => return Err(err(format!("bad optimizer flag {b}"))),
    };
    if r.pos != body.len() {
        return Err(err("trailing bytes after optimizer state"));
    }
    Ok(Checkpoint { model, step, optimizer, meta })
}

/// Loads a checkpoint; the optimizer's weight decay is not stored and must be set by
/// the caller if training resumes.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    decode(&fs::read(path)?)
}
