//! Model checkpoints: one JSON file holding every parameter array keyed by
//! its canonical name, plus dims and vocabulary contents with hashes.

use super::{ModelConfig, Seq2SeqModel};
use crate::data::Vocab;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_TAG: &str = "triroute-checkpoint v1";

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    src_vocab_hash: String,
    tgt_vocab_hash: String,
    params: Vec<ParamRecord>,
}

/// Write the model and its vocabularies to `path` as JSON.
pub fn save_checkpoint(
    model: &Seq2SeqModel,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    path: impl AsRef<Path>,
) -> Result<()> {
    let params = model
        .params
        .iter()
        .map(|(_, name, tensor)| ParamRecord {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            values: tensor.values().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_TAG.to_string(),
        config: model.cfg.clone(),
        src_vocab: src_vocab.tokens().to_vec(),
        tgt_vocab: tgt_vocab.tokens().to_vec(),
        src_vocab_hash: format!("{:016x}", src_vocab.hash()),
        tgt_vocab_hash: format!("{:016x}", tgt_vocab.hash()),
        params: file_params_sorted(params),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::format(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path.as_ref(), json)?;
    Ok(())
}

fn file_params_sorted(mut params: Vec<ParamRecord>) -> Vec<ParamRecord> {
    params.sort_by(|a, b| a.name.cmp(&b.name));
    params
}

/// Load a checkpoint: rebuilds the model skeleton from the stored config,
/// then overwrites every parameter by canonical name. Stored vocabulary
/// hashes are verified against the stored token lists.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Seq2SeqModel, Vocab, Vocab)> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("checkpoint parse: {e}")))?;
    if file.format != CHECKPOINT_TAG {
        return Err(Error::format(format!(
            "unrecognized checkpoint format {:?}, expected {CHECKPOINT_TAG:?}",
            file.format
        )));
    }
    let src_vocab = Vocab::from_tokens(file.src_vocab);
    let tgt_vocab = Vocab::from_tokens(file.tgt_vocab);
    for (label, vocab, stored) in [
        ("source", &src_vocab, &file.src_vocab_hash),
        ("target", &tgt_vocab, &file.tgt_vocab_hash),
    ] {
        if format!("{:016x}", vocab.hash()) != *stored {
            return Err(Error::format(format!(
                "{label} vocabulary hash mismatch in checkpoint"
            )));
        }
    }

    let mut model = Seq2SeqModel::new(file.config, 0)?;
    let mut loaded = 0usize;
    for record in &file.params {
        let id = model.params.find(&record.name).ok_or_else(|| {
            Error::format(format!("checkpoint has unknown parameter {}", record.name))
        })?;
        let target = model.params.value_mut(id);
        if target.shape() != record.shape.as_slice() {
            return Err(Error::format(format!(
                "parameter {} has shape {:?} in checkpoint but {:?} in model",
                record.name,
                record.shape,
                target.shape()
            )));
        }
        target.values_mut().copy_from_slice(&record.values);
        loaded += 1;
    }
    if loaded != model.params.len() {
        return Err(Error::format(format!(
            "checkpoint supplies {loaded} of {} model parameters",
            model.params.len()
        )));
    }
    Ok((model, src_vocab, tgt_vocab))
}
