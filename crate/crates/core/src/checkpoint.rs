//! Self-describing checkpoint container.
//!
//! Layout:
//!
//! ```text
//! attengluco-checkpoint
//! version=1
//! model=attengluco
//! window=80
//! ...                      (config and pipeline fields, key=value)
//! blocks=<n>
//!                          (blank line)
//! block <name>
//! shape <d0>,<d1>,...
//! <numel × f64, little-endian>
//! ...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::csv_io::write_file;
use crate::data::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::{BaselineConfig, Model, ModelConfig, ModelKind, ModelSpec};
use crate::tensor::Tensor;

const MAGIC: &str = "attengluco-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model plus the pipeline settings its inputs were built with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub pipeline: PipelineConfig,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(model: &Model, pipeline: &PipelineConfig) -> Vec<u8> {
    let mut header = vec![MAGIC.to_string(), format!("version={FORMAT_VERSION}")];
    header.push(format!("model={}", model.kind()));
    match model.spec() {
        ModelSpec::AttenGluco(c) => {
            header.push(format!("window={}", c.window));
            header.push(format!("horizon={}", c.horizon));
            header.push(format!("d_model={}", c.d_model));
            header.push(format!("heads={}", c.heads));
            header.push(format!("d_ff={}", c.d_ff));
        }
        ModelSpec::Baseline(c) => {
            header.push(format!("window={}", c.window));
            header.push(format!("horizon={}", c.horizon));
        }
    }
    header.push(format!("pipeline.max_gap_minutes={}", pipeline.max_gap_minutes));
    header.push(format!(
        "pipeline.interval_cap_minutes={}",
        pipeline.interval_cap_minutes
    ));
    header.push(format!("pipeline.stride={}", pipeline.stride));
    header.push(format!("pipeline.train_fraction={}", pipeline.train_fraction));
    header.push(format!("blocks={}", model.params().len()));

    let mut out = header.join("\n").into_bytes();
    out.extend_from_slice(b"\n\n");
    for (name, t) in model.params().iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("block {name}\nshape {}\n", shape.join(",")).as_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated file"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(bad("truncated parameter block"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn field<T: std::str::FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = kv
        .get(key)
        .ok_or_else(|| bad(format!("missing header field '{key}'")))?;
    raw.parse()
        .map_err(|_| bad(format!("bad value '{raw}' for header field '{key}'")))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.line()? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut kv = BTreeMap::new();
    loop {
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        kv.insert(k, v);
    }
    let version: u32 = field(&kv, "version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let kind: ModelKind = field::<String>(&kv, "model")?.parse()?;
    let window = field(&kv, "window")?;
    let horizon = field(&kv, "horizon")?;
    let spec = match kind {
        ModelKind::AttenGluco => ModelSpec::AttenGluco(ModelConfig {
            window,
            horizon,
            d_model: field(&kv, "d_model")?,
            heads: field(&kv, "heads")?,
            d_ff: field(&kv, "d_ff")?,
        }),
        ModelKind::Baseline => ModelSpec::Baseline(BaselineConfig { window, horizon }),
    };
    let pipeline = PipelineConfig {
        max_gap_minutes: field(&kv, "pipeline.max_gap_minutes")?,
        interval_cap_minutes: field(&kv, "pipeline.interval_cap_minutes")?,
        stride: field(&kv, "pipeline.stride")?,
        train_fraction: field(&kv, "pipeline.train_fraction")?,
    };

    let mut model = spec.build(0)?;
    let n_blocks: usize = field(&kv, "blocks")?;
    if n_blocks != model.params().len() {
        return Err(bad(format!(
            "{n_blocks} parameter blocks, the {kind} config needs {}",
            model.params().len()
        )));
    }
    for i in 0..n_blocks {
        let name = cur
            .line()?
            .strip_prefix("block ")
            .ok_or_else(|| bad("expected 'block <name>'"))?;
        let expected = &model.params().names()[i];
        if name != expected {
            return Err(bad(format!("block {i} is '{name}', expected '{expected}'")));
        }
        let shape: Vec<usize> = cur
            .line()?
            .strip_prefix("shape ")
            .ok_or_else(|| bad("expected 'shape <dims>'"))?
            .split(',')
            .map(|d| d.parse().map_err(|_| bad(format!("bad shape in block '{name}'"))))
            .collect::<Result<_>>()?;
        let slot = &mut model.params_mut().tensors_mut()[i];
        if shape != slot.shape() {
            return Err(bad(format!(
                "block '{name}' has shape {shape:?}, the config needs {:?}",
                slot.shape()
            )));
        }
        let raw = cur.take(8 * slot.numel())?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *slot = Tensor::new(&shape, data)?;
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after the last block"));
    }
    Ok(Checkpoint { model, pipeline })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, pipeline: &PipelineConfig) -> Result<()> {
    write_file(path.as_ref(), &encode(model, pipeline))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
