//! Binary model format.
//!
//! ```text
//! "DRM1" | u32 LE metadata length | metadata (UTF-8 key=value lines)
//!        | f32 LE tensors in serialization order | u32 LE CRC32
//! ```
//! The checksum covers everything between the magic and itself.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{pad_row_is_zero, Hyperparams, ModelParams, Weights};
use crate::frontend::Vocabulary;
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"DRM1";
const FORMAT_VERSION: u32 = 1;

fn metadata(params: &ModelParams<impl Scalar>) -> String {
    let hp = &params.hp;
    let windows: Vec<String> = hp.window_sizes.iter().map(|w| w.to_string()).collect();
    let mut m = String::new();
    let mut kv = |k: &str, v: String| m.push_str(&format!("{k}={v}\n"));
    kv("format_version", FORMAT_VERSION.to_string());
    kv("embed_dim", hp.embed_dim.to_string());
    kv("window_sizes", windows.join(","));
    kv("filters", hp.filters.to_string());
    kv("dropout", hp.dropout.to_string());
    kv("epochs", hp.epochs.to_string());
    kv("batch_size", hp.batch_size.to_string());
    kv("learning_rate", hp.learning_rate.to_string());
    kv("beta1", hp.beta1.to_string());
    kv("beta2", hp.beta2.to_string());
    kv("epsilon", hp.epsilon.to_string());
    kv("seed", hp.seed.to_string());
    kv("l_max", hp.l_max.to_string());
    kv("threshold", hp.threshold.to_string());
    kv("vocab", params.vocab.classes().join(","));
    m
}

/// Serialize to bytes. Weights are stored as `f32` whatever `T` is.
pub fn write_model<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let meta = metadata(params);
    let mut body = Vec::with_capacity(8 + meta.len() + 4 * params.weights.param_count());
    body.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    body.extend_from_slice(meta.as_bytes());
    for (_, t) in params.weights.tensors() {
        for x in t {
            body.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Atomic write via a sibling temp file.
pub fn save_model<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = write_model(params);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

fn bad(offset: usize, message: impl Into<String>) -> Error {
    Error::ModelFormat {
        offset,
        message: message.into(),
    }
}

pub fn read_model(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(bad(0, "not a model file (expected magic DRM1)"));
    }
    if bytes.len() < 12 {
        return Err(bad(bytes.len(), "truncated header"));
    }
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    if crc32fast::hash(&bytes[4..crc_at]) != stored {
        return Err(bad(crc_at, "checksum mismatch"));
    }
    let meta_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let meta_end = 8usize
        .checked_add(meta_len)
        .filter(|&e| e <= crc_at)
        .ok_or_else(|| bad(4, format!("metadata length {meta_len} runs past the end")))?;
    let meta = std::str::from_utf8(&bytes[8..meta_end])
        .map_err(|e| bad(8 + e.valid_up_to(), "metadata is not UTF-8"))?;
    let (hp, vocab) = parse_metadata(meta)?;
    hp.validate().map_err(|e| bad(8, e.to_string()))?;

    let mut weights = Weights::<f32>::zeros(vocab.rows(), &hp);
    let expected = 4 * weights.param_count();
    if crc_at - meta_end != expected {
        return Err(bad(
            meta_end,
            format!(
                "expected {expected} bytes of weights, found {}",
                crc_at - meta_end
            ),
        ));
    }
    let mut at = meta_end;
    for (_, t) in weights.tensors_mut() {
        for x in t.iter_mut() {
            *x = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            at += 4;
        }
    }
    let params = ModelParams { weights, vocab, hp };
    if !params.weights.is_finite() {
        return Err(bad(meta_end, "non-finite weight"));
    }
    if !pad_row_is_zero(&params.weights, params.hp.embed_dim) {
        return Err(bad(meta_end, "padding embedding row is not zero"));
    }
    Ok(params)
}

fn parse_metadata(meta: &str) -> Result<(Hyperparams, Vocabulary)> {
    let mut hp = Hyperparams::default();
    let mut vocab = None;
    let mut version = None;
    let mut offset = 8;
    for line in meta.lines() {
        let here = offset;
        offset += line.len() + 1;
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(here, format!("malformed metadata line {line:?}")))?;
        let num = |what: &str| bad(here, format!("bad {what} value {v:?}"));
        macro_rules! parse {
            ($field:expr) => {
                $field = v.parse().map_err(|_| num(k))?
            };
        }
        match k {
            "format_version" => version = Some(v.parse::<u32>().map_err(|_| num(k))?),
            "embed_dim" => parse!(hp.embed_dim),
            "window_sizes" => {
                hp.window_sizes = v
                    .split(',')
                    .map(|w| w.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| num(k))?
            }
            "filters" => parse!(hp.filters),
            "dropout" => parse!(hp.dropout),
            "epochs" => parse!(hp.epochs),
            "batch_size" => parse!(hp.batch_size),
            "learning_rate" => parse!(hp.learning_rate),
            "beta1" => parse!(hp.beta1),
            "beta2" => parse!(hp.beta2),
            "epsilon" => parse!(hp.epsilon),
            "seed" => parse!(hp.seed),
            "l_max" => parse!(hp.l_max),
            "threshold" => parse!(hp.threshold),
            "vocab" => {
                let classes = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(String::from).collect()
                };
                vocab =
                    Some(Vocabulary::from_classes(classes).map_err(|e| bad(here, e.to_string()))?);
            }
            _ => return Err(bad(here, format!("unknown metadata key {k:?}"))),
        }
    }
    match version {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(bad(8, format!("unsupported format version {v}"))),
        None => return Err(bad(8, "missing format_version")),
    }
    let vocab = vocab.ok_or_else(|| bad(8, "missing vocab"))?;
    Ok((hp, vocab))
}
