//! Word-level vocabulary and fixed-length pretraining blocks.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::normalize;
use crate::io;
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const CLS: u32 = 3;
pub const N_RESERVED: u32 = 4;
pub const DEFAULT_BLOCK_LEN: usize = 128;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    min_frequency: usize,
    tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    min_frequency: usize,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBlock {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenBlock {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_tokens(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

fn words(text: &str) -> impl Iterator<Item = String> {
    normalize(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect::<Vec<_>>()
        .into_iter()
}

impl Vocab {
    /// Tokens ordered by descending frequency, then lexicographically.
    pub fn build<I, S>(corpus: I, min_frequency: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for w in words(doc.as_ref()) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_frequency.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens, min_frequency)
    }

    fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Result<Self> {
        if tokens.len() < 5 {
            return Err(Error::VocabTooSmall { size: tokens.len() });
        }
        if tokens.iter().take(4).zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::parse("vocab", "reserved tokens must occupy ids 0..4"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::parse("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab {
            min_frequency,
            tokens,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: VocabFile = io::read_json(path)?;
        Self::from_tokens(file.tokens, file.min_frequency)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, &self.to_file())
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            min_frequency: self.min_frequency,
            tokens: self.tokens.clone(),
        }
    }

    pub fn hash(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(&self.to_file()).expect("vocab serializes"))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        words(text).map(|w| self.id(&w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// Concatenates all documents into one stream and cuts it into
    /// consecutive blocks; the last partial block is padded.
    pub fn make_blocks<S: AsRef<str>>(&self, docs: &[S], block_len: usize) -> Vec<TokenBlock> {
        assert!(block_len > 0, "block_len must be positive");
        let stream: Vec<u32> = docs.iter().flat_map(|d| self.encode(d.as_ref())).collect();
        stream
            .chunks(block_len)
            .map(|chunk| {
                let mut ids = chunk.to_vec();
                let mut attention_mask = vec![1u8; chunk.len()];
                ids.resize(block_len, PAD);
                attention_mask.resize(block_len, 0);
                TokenBlock { ids, attention_mask }
            })
            .collect()
    }
}
