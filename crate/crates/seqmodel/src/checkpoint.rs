//! Checkpoint directory: `config.json`, `params.bin` and `vocab.txt`.
//!
//! `params.bin` holds a magic header, the parameter count and then, per
//! parameter, its name, shape and little-endian f64 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{ModelConfig, Seq2Seq};
use crate::tensor::Matrix;
use crate::tokenizer::Tokenizer;

pub const FORMAT: &str = "cagen-seq2seq/1";
const MAGIC: &[u8; 8] = b"CAGENP01";

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    format: String,
    slot: u8,
    model: ModelConfig,
}

pub fn encode_params(model: &Seq2Seq) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols as u64).to_le_bytes());
        for x in &p.value.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() < n {
            return Err(ModelError::Format("params.bin is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<usize, ModelError> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ModelError::Format("size overflows usize".into()))
    }
}

/// Overwrites the parameters of `model` (which fixes the expected names
/// and shapes) from `bytes`.
pub fn decode_params(model: &mut Seq2Seq, bytes: &[u8]) -> Result<(), ModelError> {
    let mut r = Reader { bytes };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Format("bad params.bin header".into()));
    }
    let count = r.u64()?;
    if count != model.params().len() {
        return Err(ModelError::Format(format!(
            "expected {} parameters, found {count}",
            model.params().len()
        )));
    }
    for p in model.params_mut() {
        let len = r.u64()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(ModelError::Format(format!("expected parameter {}, found {name}", p.name)));
        }
        let (rows, cols) = (r.u64()?, r.u64()?);
        if (rows, cols) != p.value.shape() {
            return Err(ModelError::Format(format!(
                "{name}: expected shape {:?}, found ({rows}, {cols})",
                p.value.shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        p.value = Matrix::from_vec(rows, cols, data);
    }
    if !r.bytes.is_empty() {
        return Err(ModelError::Format("trailing bytes in params.bin".into()));
    }
    Ok(())
}

pub fn save(dir: &Path, model: &Seq2Seq, tokenizer: &Tokenizer) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    let config = ConfigFile {
        format: FORMAT.into(),
        slot: model.slot(),
        model: model.config().clone(),
    };
    let path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&config).map_err(|e| ModelError::Format(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| ModelError::io(&path, e))?;
    let path = dir.join(PARAMS_FILE);
    std::fs::write(&path, encode_params(model)).map_err(|e| ModelError::io(&path, e))?;
    tokenizer.save(&dir.join(VOCAB_FILE))
}

pub fn load(dir: &Path) -> Result<(Seq2Seq, Tokenizer), ModelError> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
    let config: ConfigFile = serde_json::from_str(&text).map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))?;
    if config.format != FORMAT {
        return Err(ModelError::Format(format!("unsupported checkpoint format {:?}", config.format)));
    }
    let tokenizer = Tokenizer::load(&dir.join(VOCAB_FILE))?;
    if tokenizer.vocab_size() != config.model.vocab_size {
        return Err(ModelError::Format(format!(
            "vocabulary has {} entries, model expects {}",
            tokenizer.vocab_size(),
            config.model.vocab_size
        )));
    }
    let mut model = Seq2Seq::new(config.model, config.slot)?;
    let path = dir.join(PARAMS_FILE);
    let bytes = std::fs::read(&path).map_err(|e| ModelError::io(&path, e))?;
    decode_params(&mut model, &bytes)?;
    Ok((model, tokenizer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tok = Tokenizer::build(["a b c d e f"], 1);
        let mut config = ModelConfig::tiny(tok.vocab_size());
        config.seed = 9;
        let model = Seq2Seq::new(config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &model, &tok).unwrap();
        let (back, tok2) = load(dir.path()).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.slot(), 1);
        assert_eq!(tok2, tok);
    }

    #[test]
    fn rejects_truncated_params() {
        let model = Seq2Seq::new(ModelConfig::tiny(10), 0).unwrap();
        let bytes = encode_params(&model);
        let mut other = model.clone();
        assert!(decode_params(&mut other, &bytes[..bytes.len() - 3]).is_err());
        assert!(decode_params(&mut other, &bytes).is_ok());
    }
}
