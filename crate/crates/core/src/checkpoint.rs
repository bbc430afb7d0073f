//! JSON checkpoints for the encoder and the classifier head.
//!
//! An encoder checkpoint records the vocabulary hash it was trained with; a
//! classifier checkpoint records the hash of its backbone checkpoint file and
//! of the catalog. Loading verifies all of them. Floats are written with
//! shortest round-trip formatting, so save/load/save is byte-stable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::classifier::{ClassifierConfig, ClassifierState, HeadParams};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderState};
use crate::io;
use crate::nn::Params;
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const ENCODER_FORMAT: &str = "prodintent.encoder.v1";
pub const CLASSIFIER_FORMAT: &str = "prodintent.classifier.v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderCheckpoint {
    format: String,
    config: EncoderConfig,
    vocab_hash: String,
    tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierCheckpoint {
    format: String,
    config: ClassifierConfig,
    catalog_hash: String,
    backbone_hash: String,
    labels: Vec<String>,
    tensors: Vec<NamedTensor>,
}

fn export<P: Params>(p: &P) -> Vec<NamedTensor> {
    p.tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.iter().copied().collect(),
        })
        .collect()
}

fn import<P: Params>(dst: &mut P, tensors: &[NamedTensor]) -> Result<()> {
    let mut slots = dst.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            slots.len(),
            tensors.len()
        )));
    }
    for ((name, slot), t) in slots.iter_mut().zip(tensors) {
        if *name != t.name || slot.shape() != t.shape.as_slice() || t.data.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} {:?} does not fit slot {:?} {:?}",
                t.name,
                t.shape,
                name,
                slot.shape()
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {:?} has non-finite values", t.name)));
        }
        for (dst, src) in slot.iter_mut().zip(&t.data) {
            *dst = *src;
        }
    }
    Ok(())
}

pub fn encoder_bytes(state: &EncoderState, vocab_hash: &str) -> Vec<u8> {
    let ckpt = EncoderCheckpoint {
        format: ENCODER_FORMAT.into(),
        config: state.config.clone(),
        vocab_hash: vocab_hash.into(),
        tensors: export(&state.params),
    };
    serde_json::to_vec(&ckpt).expect("checkpoint serializes")
}

/// Hash of the checkpoint file `save_encoder` would write.
pub fn encoder_hash(state: &EncoderState, vocab_hash: &str) -> String {
    io::sha256_hex(&encoder_bytes(state, vocab_hash))
}

/// Writes the checkpoint and returns its hash.
pub fn save_encoder(path: impl AsRef<Path>, state: &EncoderState, vocab: &Vocab) -> Result<String> {
    let bytes = encoder_bytes(state, &vocab.hash());
    io::write_atomic(path, &bytes)?;
    Ok(io::sha256_hex(&bytes))
}

/// Loads and verifies against `vocab`. Returns the state and the file hash.
pub fn load_encoder(path: impl AsRef<Path>, vocab: &Vocab) -> Result<(EncoderState, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: EncoderCheckpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if ckpt.format != ENCODER_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", ckpt.format)));
    }
    let found = vocab.hash();
    if ckpt.vocab_hash != found {
        return Err(Error::HashMismatch {
            what: "vocabulary",
            expected: ckpt.vocab_hash,
            found,
        });
    }
    if ckpt.config.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "vocab_size {} but vocabulary has {} tokens",
            ckpt.config.vocab_size,
            vocab.len()
        )));
    }
    ckpt.config.validate()?;
    let mut params = EncoderParams::zeros(&ckpt.config);
    import(&mut params, &ckpt.tensors)?;
    let state = EncoderState::from_parts(ckpt.config, params)?;
    Ok((state, io::sha256_hex(&bytes)))
}

pub fn classifier_bytes(state: &ClassifierState, catalog_hash: &str, backbone_hash: &str) -> Vec<u8> {
    let ckpt = ClassifierCheckpoint {
        format: CLASSIFIER_FORMAT.into(),
        config: state.config.clone(),
        catalog_hash: catalog_hash.into(),
        backbone_hash: backbone_hash.into(),
        labels: state.labels.clone(),
        tensors: export(&state.head),
    };
    serde_json::to_vec(&ckpt).expect("checkpoint serializes")
}

/// Writes the backbone to `encoder_path` and the head to `path`; returns
/// (encoder hash, classifier hash).
pub fn save_classifier(
    path: impl AsRef<Path>,
    encoder_path: impl AsRef<Path>,
    state: &ClassifierState,
    vocab: &Vocab,
    catalog: &Catalog,
) -> Result<(String, String)> {
    let backbone_hash = save_encoder(encoder_path, &state.encoder, vocab)?;
    let bytes = classifier_bytes(state, &catalog.hash(), &backbone_hash);
    io::write_atomic(path, &bytes)?;
    Ok((backbone_hash, io::sha256_hex(&bytes)))
}

/// Loads a classifier head and attaches `encoder`, whose checkpoint file hash
/// must be `encoder_hash`.
pub fn load_classifier(
    path: impl AsRef<Path>,
    encoder: EncoderState,
    encoder_hash: &str,
    catalog: &Catalog,
) -> Result<(ClassifierState, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: ClassifierCheckpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if ckpt.format != CLASSIFIER_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", ckpt.format)));
    }
    if ckpt.backbone_hash != encoder_hash {
        return Err(Error::HashMismatch {
            what: "backbone checkpoint",
            expected: ckpt.backbone_hash,
            found: encoder_hash.into(),
        });
    }
    let found = catalog.hash();
    if ckpt.catalog_hash != found {
        return Err(Error::HashMismatch {
            what: "catalog",
            expected: ckpt.catalog_hash,
            found,
        });
    }
    let ids: Vec<&str> = catalog.products().iter().map(|p| p.id.as_str()).collect();
    if ckpt.labels.iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(Error::Checkpoint("label order differs from catalog".into()));
    }
    ckpt.config.validate()?;
    let mut head = HeadParams::zeros(encoder.config.d_model, ckpt.config.hidden, ckpt.labels.len());
    import(&mut head, &ckpt.tensors)?;
    let state = ClassifierState {
        config: ckpt.config,
        labels: ckpt.labels,
        head,
        encoder,
        frozen: false,
    };
    Ok((state, io::sha256_hex(&bytes)))
}
