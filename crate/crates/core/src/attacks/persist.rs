//! Adversarial-set container and image-grid export.
//!
//! The container stores provenance (attack kind, every hyperparameter, the
//! attacked model id, toolkit version) followed by clean and perturbed
//! image planes as raw bytes on the 0..255 grid — post-processing has
//! already quantized every pixel, so bytes are lossless.

use super::{AdversarialSet, AttackConfig, BimParams, CwParams, FgsmParams};
use crate::data::{pixel_level, PairedSet};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ADVDETA1";

pub fn save_adversarial_set(set: &AdversarialSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = set.pairs.len();
    let (c, h, w) = set.pairs.dims();

    let mut header = String::new();
    header.push_str("format=1\n");
    header.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
    header.push_str(&format!("model={}\n", set.attacked_model));
    header.push_str(&format!("kind={}\n", set.config.kind()));
    match &set.config {
        AttackConfig::Fgsm(p) => {
            header.push_str(&format!("epsilon_bits={:08x}\n", p.epsilon.to_bits()));
        }
        AttackConfig::Bim(p) => {
            header.push_str(&format!("epsilon_bits={:08x}\n", p.epsilon.to_bits()));
            header.push_str(&format!("alpha_bits={:08x}\n", p.alpha.to_bits()));
            header.push_str(&format!("iterations={}\n", p.iterations));
        }
        AttackConfig::Cw(p) => {
            header.push_str(&format!("lr_bits={:08x}\n", p.learning_rate.to_bits()));
            header.push_str(&format!("bsearch={}\n", p.binary_search_steps));
            header.push_str(&format!("max_iter={}\n", p.max_iterations));
            header.push_str(&format!("kappa_bits={:08x}\n", p.confidence.to_bits()));
            header.push_str(&format!("c_bits={:08x}\n", p.initial_c.to_bits()));
        }
    }
    header.push_str(&format!("n={n}\nchannels={c}\nheight={h}\nwidth={w}\n"));

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    buf.extend_from_slice(set.pairs.labels());
    buf.extend(set.fooled.iter().map(|&f| u8::from(f)));
    for &idx in set.pairs.source_indices() {
        buf.extend_from_slice(&idx.to_le_bytes());
    }
    for i in 0..n {
        buf.extend(set.pairs.clean_image(i).iter().map(|&v| pixel_level(v)));
    }
    for i in 0..n {
        buf.extend(set.pairs.adversarial_image(i).iter().map(|&v| pixel_level(v)));
    }

    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_adversarial_set(path: impl AsRef<Path>) -> Result<AdversarialSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Data(format!("{}: truncated container", path.display())));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    let mut pos = 0usize;
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Data(format!("{}: bad magic bytes", path.display())));
    }
    let hlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let header = std::str::from_utf8(take(&mut pos, hlen)?)
        .map_err(|_| Error::Data("header is not UTF-8".into()))?
        .to_string();
    let kv: BTreeMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |key: &str| -> Result<&str> {
        kv.get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("{}: header missing '{key}'", path.display())))
    };
    let f32_bits = |s: &str| -> Result<f32> {
        Ok(f32::from_bits(
            u32::from_str_radix(s, 16).map_err(|_| Error::Data(format!("bad bits '{s}'")))?,
        ))
    };
    let int = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Data(format!("bad integer '{s}'")))
    };

    let config = match get("kind")? {
        "fgsm" => AttackConfig::Fgsm(FgsmParams { epsilon: f32_bits(get("epsilon_bits")?)? }),
        "bim" => AttackConfig::Bim(BimParams {
            epsilon: f32_bits(get("epsilon_bits")?)?,
            alpha: f32_bits(get("alpha_bits")?)?,
            iterations: int(get("iterations")?)?,
        }),
        "cw" => AttackConfig::Cw(CwParams {
            learning_rate: f32_bits(get("lr_bits")?)?,
            binary_search_steps: int(get("bsearch")?)?,
            max_iterations: int(get("max_iter")?)?,
            confidence: f32_bits(get("kappa_bits")?)?,
            initial_c: f32_bits(get("c_bits")?)?,
        }),
        other => return Err(Error::Data(format!("unknown attack kind '{other}'"))),
    };
    let attacked_model = get("model")?.to_string();
    let n = int(get("n")?)?;
    let (c, h, w) = (int(get("channels")?)?, int(get("height")?)?, int(get("width")?)?);
    let chw = c * h * w;

    let labels = take(&mut pos, n)?.to_vec();
    let fooled: Vec<bool> = take(&mut pos, n)?.iter().map(|&b| b != 0).collect();
    let mut source_idx = Vec::with_capacity(n);
    for chunk in take(&mut pos, n * 4)?.chunks_exact(4) {
        source_idx.push(u32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let clean: Vec<f32> = take(&mut pos, n * chw)?.iter().map(|&b| b as f32 / 255.0).collect();
    let adv: Vec<f32> = take(&mut pos, n * chw)?.iter().map(|&b| b as f32 / 255.0).collect();

    Ok(AdversarialSet {
        pairs: PairedSet::new(clean, adv, labels, source_idx, (c, h, w))?,
        config,
        attacked_model,
        fooled,
    })
}

/// Write a binary PPM (P6) image grid: one row per class, one column for the
/// original image plus one per attack set, separated by white gutters. Each
/// row shows the first pair of its class from the first set carrying it.
pub fn write_attack_grid(
    sets: &[(&str, &AdversarialSet)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let Some((_, first)) = sets.first() else {
        return Err(Error::Data("attack grid needs at least one set".into()));
    };
    let (c, h, w) = first.pairs.dims();
    if c != 1 && c != 3 {
        return Err(Error::Config(format!("attack grid supports 1 or 3 channels, got {c}")));
    }
    let classes = first.pairs.labels().iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    // first pair index per class
    let mut row_pair: Vec<Option<usize>> = vec![None; classes];
    for (i, &label) in first.pairs.labels().iter().enumerate() {
        let slot = &mut row_pair[label as usize];
        if slot.is_none() {
            *slot = Some(i);
        }
    }

    const GUTTER: usize = 2;
    let cols = 1 + sets.len();
    let width_px = cols * w + (cols + 1) * GUTTER;
    let rows = row_pair.iter().filter(|r| r.is_some()).count();
    let height_px = rows * h + (rows + 1) * GUTTER;
    let mut rgb = vec![255u8; width_px * height_px * 3];

    let mut paint = |tile_row: usize, tile_col: usize, image: &[f32]| {
        let y0 = GUTTER + tile_row * (h + GUTTER);
        let x0 = GUTTER + tile_col * (w + GUTTER);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let src_ch = if c == 3 { ch } else { 0 };
                    let v = pixel_level(image[(src_ch * h + y) * w + x]);
                    rgb[((y0 + y) * width_px + x0 + x) * 3 + ch] = v;
                }
            }
        }
    };

    let mut tile_row = 0usize;
    for class in 0..classes {
        let Some(pair) = row_pair[class] else { continue };
        let source = first.pairs.source_indices()[pair];
        paint(tile_row, 0, first.pairs.clean_image(pair));
        for (col, (_, set)) in sets.iter().enumerate() {
            // align by source image so each column shows the same instance
            let idx = set
                .pairs
                .source_indices()
                .iter()
                .position(|&s| s == source)
                .unwrap_or(pair);
            paint(tile_row, col + 1, set.pairs.adversarial_image(idx));
        }
        tile_row += 1;
    }

    let mut out = Vec::with_capacity(rgb.len() + 32);
    out.extend_from_slice(format!("P6\n{width_px} {height_px}\n255\n").as_bytes());
    out.extend_from_slice(&rgb);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}
