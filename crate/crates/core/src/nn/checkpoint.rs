//! Binary model checkpoints.
//!
//! ```text
//! "MIRM" | version u32 | config_len u32 | config JSON
//! n_params u32 | { name_len u16 | name | rows u32 | cols u32 | f32 LE data }*
//! SHA-256 of everything above (32 bytes)
//! ```
//! Only parameters are stored; optimizer moments start fresh after loading.

use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::model::{ModelConfig, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MIRM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &ModelState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for id in model.params.ids() {
        let name = model.params.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let v = model.params.value(id);
        out.extend_from_slice(&(v.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(v.ncols() as u32).to_le_bytes());
        for x in v.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < 4 + 32 {
        return Err(Error::Truncated("checkpoint shorter than header and checksum".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let n = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(n, "config")?)?;
    let mut model = ModelState::new(config, 0)?;
    let count = r.u32("parameter count")? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameters stored, layout has {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if model.params.value(id).dim() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "{name}: stored {rows}x{cols}, layout {:?}",
                model.params.value(id).dim()
            )));
        }
        let raw = r.take(rows * cols * 4, &name)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        model.params.set(id, Array2::from_shape_vec((rows, cols), data).unwrap());
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::EncoderConfig;
    use crate::tokenizer::TokenizerConfig;

    fn model() -> ModelState {
        let cfg = ModelConfig {
            n_channels: 2,
            n_samples: 40,
            tokenizer: TokenizerConfig { k_t: 5, s_t: 5, features: 2, pool: 2, d_model: 4 },
            encoder: EncoderConfig { layers: 1, d_model: 4, heads: 2, ff_mult: 2, dropout: 0.1, decoder_layers: 1 },
            classes: vec!["left_hand".into(), "right_hand".into()],
        };
        ModelState::new(cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_to_f32_precision() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        for id in m.params.ids() {
            let a = m.params.value(id);
            let b = back.params.value(id);
            assert_eq!(m.params.name(id), back.params.name(id));
            assert!(a.iter().zip(b).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        // a second save of the loaded model is byte-identical
        assert_eq!(encode_checkpoint(&back).unwrap(), encode_checkpoint(&m).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let mut flipped = bytes.clone();
        flipped[60] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checkpoint(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic { .. })));
        assert!(decode_checkpoint(&bytes[..20]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mirm");
        let m = model();
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap().n_classes(), 2);
    }
}
