//! Versioned binary container for trained classifiers.
//!
//! Layout: 8 magic bytes, a `u32` length-prefixed `key=value` header
//! carrying the architecture and provenance, then the parameter blobs in
//! registry order as little-endian `f32`. Floats that must round-trip
//! bit-exactly (parameters, recorded metrics) are stored as raw bits.

use super::{build_classifier, ArchConfig, BlockSpec, Classifier, TrainMeta};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ADVDETM1";

pub fn save_classifier(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);

    let arch = model.arch();
    let mut header = String::new();
    header.push_str("format=1\n");
    header.push_str(&format!(
        "input={}x{}x{}\n",
        arch.input.0, arch.input.1, arch.input.2
    ));
    header.push_str(&format!("stem={}\n", arch.stem_filters));
    let blocks: Vec<String> = arch
        .blocks
        .iter()
        .map(|b| format!("{}/{}/{}", b.filters, b.stride, u8::from(b.residual)))
        .collect();
    header.push_str(&format!("blocks={}\n", blocks.join(";")));
    header.push_str(&format!("penultimate={}\n", arch.penultimate_width));
    header.push_str(&format!("classes={}\n", arch.classes));
    header.push_str(&format!("seed={}\n", model.seed()));
    match model.meta() {
        Some(meta) => {
            header.push_str("trained=1\n");
            header.push_str(&format!("epochs={}\n", meta.epochs));
            header.push_str(&format!("heldout_bits={:08x}\n", meta.heldout_accuracy.to_bits()));
            header.push_str(&format!("loss_bits={:08x}\n", meta.final_train_loss.to_bits()));
        }
        None => header.push_str("trained=0\n"),
    }
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());

    let params = model.graph().params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.tensor.numel() as u32).to_le_bytes());
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(Error::Data(format!("{}: bad magic bytes", path.display())));
    }
    let header_len = cur.u32()? as usize;
    let header = std::str::from_utf8(cur.take(header_len)?)
        .map_err(|_| Error::Data(format!("{}: header is not UTF-8", path.display())))?;
    let kv: BTreeMap<&str, &str> = header
        .lines()
        .filter_map(|l| l.split_once('='))
        .collect();
    let get = |key: &str| -> Result<&str> {
        kv.get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("{}: header missing '{key}'", path.display())))
    };
    if get("format")? != "1" {
        return Err(Error::Data(format!("{}: unsupported container format", path.display())));
    }
    let input: Vec<usize> = get("input")?
        .split('x')
        .map(|v| v.parse().map_err(|_| Error::Data("bad input dims".into())))
        .collect::<Result<_>>()?;
    if input.len() != 3 {
        return Err(Error::Data("input dims must be CxHxW".into()));
    }
    let blocks = get("blocks")?;
    let blocks: Vec<BlockSpec> = if blocks.is_empty() {
        Vec::new()
    } else {
        blocks
            .split(';')
            .map(|b| {
                let parts: Vec<&str> = b.split('/').collect();
                if parts.len() != 3 {
                    return Err(Error::Data(format!("bad block spec '{b}'")));
                }
                Ok(BlockSpec {
                    filters: parts[0].parse().map_err(|_| Error::Data("bad block filters".into()))?,
                    stride: parts[1].parse().map_err(|_| Error::Data("bad block stride".into()))?,
                    residual: parts[2] == "1",
                })
            })
            .collect::<Result<_>>()?
    };
    let arch = ArchConfig {
        input: (input[0], input[1], input[2]),
        stem_filters: parse_usize(get("stem")?)?,
        blocks,
        penultimate_width: parse_usize(get("penultimate")?)?,
        classes: parse_usize(get("classes")?)?,
    };
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Data("bad seed".into()))?;

    let mut model = build_classifier(&arch, seed)?;
    if get("trained")? == "1" {
        model.set_meta(TrainMeta {
            epochs: parse_usize(get("epochs")?)?,
            heldout_accuracy: f32::from_bits(parse_bits(get("heldout_bits")?)?),
            final_train_loss: f32::from_bits(parse_bits(get("loss_bits")?)?),
        });
    }

    let count = cur.u32()? as usize;
    if count != model.graph().params().len() {
        return Err(Error::Data(format!(
            "{}: container has {count} parameters, architecture expects {}",
            path.display(),
            model.graph().params().len()
        )));
    }
    for i in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Data("parameter name is not UTF-8".into()))?
            .to_string();
        let numel = cur.u32()? as usize;
        let param = &mut model.graph_mut().params_mut()[i];
        if param.name != name || param.tensor.numel() != numel {
            return Err(Error::Data(format!(
                "parameter {i}: container has '{name}' ({numel}), architecture expects '{}' ({})",
                param.name,
                param.tensor.numel()
            )));
        }
        let raw = cur.take(numel * 4)?;
        for (dst, chunk) in param.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    Ok(model)
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Data(format!("bad integer '{s}'")))
}

fn parse_bits(s: &str) -> Result<u32> {
    u32::from_str_radix(s, 16).map_err(|_| Error::Data(format!("bad float bits '{s}'")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!("{}: truncated container", self.path.display())));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}
