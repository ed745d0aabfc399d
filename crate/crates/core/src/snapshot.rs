//! Trained-model container and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MNPAD\0\0\0"
//! version    u32
//! body_len   u64
//! body       body_len bytes
//!   header_len u32, header JSON {d, h, k, config}
//!   n_blocks   u32
//!   per block: name_len u32, name (UTF-8), rows u32, cols u32,
//!              rows * cols f64 values
//! checksum   32 bytes  SHA-256 of everything before it
//! ```
//!
//! Parameter blocks appear in model order (encoder, decoder, prototypes,
//! scorer) followed by `scorer.in_shift`, `scorer.in_scale`, `norm.min`
//! and `norm.max`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Inference, Model};
use crate::prototypes::PrototypeBank;
use crate::trainer::TrainConfig;

pub const MAGIC: [u8; 8] = *b"MNPAD\0\0\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;
/// Blocks after the trainable parameters.
const EXTRA_BLOCKS: usize = 4;

/// Everything needed to score raw feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub model: Model,
    pub norm: NormStats,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    h: usize,
    k: usize,
    config: TrainConfig,
}

impl ModelSnapshot {
    pub fn new(model: Model, norm: NormStats, config: TrainConfig) -> Result<Self> {
        if norm.dim() != model.input_dim() {
            return Err(Error::dim("normalization statistics", model.input_dim(), norm.dim()));
        }
        if config.latent_dim != model.latent_dim() {
            return Err(Error::dim("configured latent dimension", model.latent_dim(), config.latent_dim));
        }
        if config.ablation.use_decoder != model.uses_decoder() {
            return Err(Error::InvalidConfig(
                "config use_decoder disagrees with the scorer input layout".into(),
            ));
        }
        Ok(Self { model, norm, config })
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// Normalizes one raw row and runs the model on it.
    pub fn infer_one(&self, raw: &[f64]) -> Result<Inference> {
        if raw.len() != self.input_dim() {
            return Err(Error::dim("input features", self.input_dim(), raw.len()));
        }
        self.model.infer_normalized(&self.norm.transform(raw)?)
    }

    /// Scores raw rows in input order.
    pub fn infer(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.par_iter()
            .map(|r| self.infer_one(r).map(|i| i.score))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            d: self.model.input_dim(),
            h: self.model.latent_dim(),
            k: self.model.bank.k(),
            config: self.config.clone(),
        };
        let header = serde_json::to_vec(&header)
            .map_err(|e| Error::SnapshotCorrupt(format!("cannot encode header: {e}")))?;

        let mut body = Vec::new();
        put_u32(&mut body, header.len())?;
        body.extend_from_slice(&header);
        let params = self.model.params();
        put_u32(&mut body, params.len() + EXTRA_BLOCKS)?;
        for p in params {
            let (r, c) = p.shape().dims();
            put_block(&mut body, p.name(), r, c, p.values())?;
        }
        let scorer = &self.model.scorer;
        let w = scorer.input_shift.len();
        put_block(&mut body, "scorer.in_shift", 1, w, &scorer.input_shift)?;
        put_block(&mut body, "scorer.in_scale", 1, w, &scorer.input_scale)?;
        let d = self.norm.dim();
        put_block(&mut body, "norm.min", 1, d, &self.norm.min)?;
        put_block(&mut body, "norm.max", 1, d, &self.norm.max)?;

        let mut out = Vec::with_capacity(PREAMBLE_LEN + body.len() + CHECKSUM_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE_LEN {
            return Err(Error::SnapshotTruncated);
        }
        if bytes[..8] != MAGIC {
            return Err(Error::SnapshotCorrupt("not a model snapshot (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::SnapshotVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let expected_len = usize::try_from(body_len)
            .ok()
            .and_then(|b| b.checked_add(PREAMBLE_LEN + CHECKSUM_LEN))
            .ok_or_else(|| Error::SnapshotCorrupt("body length overflows".into()))?;
        if bytes.len() < expected_len {
            return Err(Error::SnapshotTruncated);
        }
        if bytes.len() > expected_len {
            return Err(Error::SnapshotCorrupt("trailing bytes after checksum".into()));
        }
        let (signed, checksum) = bytes.split_at(expected_len - CHECKSUM_LEN);
        if Sha256::digest(signed).as_slice() != checksum {
            return Err(Error::SnapshotChecksum);
        }

        let mut r = Reader { buf: &signed[PREAMBLE_LEN..] };
        let header_len = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::SnapshotCorrupt(format!("bad header: {e}")))?;
        let cfg = &header.config;
        if header.h != cfg.latent_dim {
            return Err(Error::SnapshotCorrupt("header latent dimension disagrees with config".into()));
        }

        // Build a template of the recorded architecture and fill it in.
        let placeholder = vec![vec![1.0; header.h]; header.k];
        let bank = PrototypeBank::new(&placeholder, cfg.alpha, cfg.beta)?;
        let mut model = Model::new(
            header.d,
            header.h,
            cfg.hidden_dim,
            cfg.scorer_hidden,
            bank,
            cfg.ablation.use_decoder,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let n_blocks = r.u32()?;
        let n_params = model.params().len();
        if n_blocks != n_params + EXTRA_BLOCKS {
            return Err(Error::SnapshotCorrupt(format!(
                "expected {} parameter blocks, found {n_blocks}",
                n_params + EXTRA_BLOCKS
            )));
        }
        for p in model.params_mut() {
            let (r_exp, c_exp) = p.shape().dims();
            let values = r.block(p.name(), r_exp, c_exp)?;
            p.values_mut().copy_from_slice(&values);
        }
        let w = model.scorer.input_shift.len();
        model.scorer.input_shift = r.block("scorer.in_shift", 1, w)?;
        model.scorer.input_scale = r.block("scorer.in_scale", 1, w)?;
        let min = r.block("norm.min", 1, header.d)?;
        let max = r.block("norm.max", 1, header.d)?;
        if !r.buf.is_empty() {
            return Err(Error::SnapshotCorrupt("unexpected bytes after the last block".into()));
        }
        Self::new(model, NormStats { min, max }, header.config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::SnapshotCorrupt(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_block(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    debug_assert_eq!(rows * cols, values.len());
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, rows)?;
    put_u32(out, cols)?;
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::SnapshotCorrupt("block runs past the end of the body".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let len = self.u32()?;
        let found = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::SnapshotCorrupt("block name is not UTF-8".into()))?;
        if found != name {
            return Err(Error::SnapshotCorrupt(format!("expected block '{name}', found '{found}'")));
        }
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != (rows, cols) {
            return Err(Error::SnapshotCorrupt(format!(
                "block '{name}' has shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        let raw = self.take(r * c * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}
