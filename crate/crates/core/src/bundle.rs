//! A loaded, hash-verified model ready for inference.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::checkpoint;
use crate::classifier::{ClassifierState, PredictionVector};
use crate::eval::CardPredictor;
use crate::tokenizer::Vocab;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub catalog: PathBuf,
    pub vocab: PathBuf,
    /// The fine-tuned backbone saved alongside the classifier head.
    pub encoder: PathBuf,
    pub classifier: PathBuf,
}

impl ModelPaths {
    /// Conventional layout written by the `train` stage.
    pub fn in_dir(model_dir: impl AsRef<Path>, catalog: impl Into<PathBuf>) -> Self {
        let d = model_dir.as_ref();
        ModelPaths {
            catalog: catalog.into(),
            vocab: d.join("vocab.json"),
            encoder: d.join("classifier_encoder.json"),
            classifier: d.join("classifier.json"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BundleInfo {
    pub catalog_hash: String,
    pub catalog_size: usize,
    pub vocab_hash: String,
    pub encoder_hash: String,
    pub classifier_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub product_id: String,
    pub display_name: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub catalog: Catalog,
    pub vocab: Vocab,
    pub classifier: ClassifierState,
    pub info: BundleInfo,
}

impl ModelBundle {
    /// Loads all artifacts; any hash mismatch is an error.
    pub fn load(paths: &ModelPaths) -> Result<Self> {
        let catalog = Catalog::load(&paths.catalog)?;
        let vocab = Vocab::load(&paths.vocab)?;
        let (encoder, encoder_hash) = checkpoint::load_encoder(&paths.encoder, &vocab)?;
        let (classifier, classifier_hash) =
            checkpoint::load_classifier(&paths.classifier, encoder, &encoder_hash, &catalog)?;
        let info = BundleInfo {
            catalog_hash: catalog.hash(),
            catalog_size: catalog.len(),
            vocab_hash: vocab.hash(),
            encoder_hash,
            classifier_hash,
        };
        Ok(ModelBundle {
            catalog,
            vocab,
            classifier,
            info,
        })
    }

    pub fn scores(&self, query: &str) -> PredictionVector {
        self.classifier.class_forward(&self.vocab, query)
    }

    pub fn predict(&self, query: &str, threshold: f64, top_k: usize) -> Vec<Card> {
        self.classifier
            .predict_products(&self.vocab, query, threshold, top_k)
            .into_iter()
            .map(|(id, score)| {
                let label = self.catalog.label_of(&id).expect("labels match the catalog");
                Card {
                    display_name: self.catalog.product(label).display_name.clone(),
                    product_id: id,
                    score,
                }
            })
            .collect()
    }
}

impl CardPredictor for ModelBundle {
    fn name(&self) -> &str {
        "semantic"
    }

    fn cards(&self, query: &str, threshold: f64, top_k: usize) -> Vec<(String, f64)> {
        self.classifier.predict_products(&self.vocab, query, threshold, top_k)
    }
}

/// An in-memory classifier paired with its vocabulary.
pub struct Scorer<'a> {
    pub vocab: &'a Vocab,
    pub classifier: &'a ClassifierState,
}

impl CardPredictor for Scorer<'_> {
    fn name(&self) -> &str {
        "semantic"
    }

    fn cards(&self, query: &str, threshold: f64, top_k: usize) -> Vec<(String, f64)> {
        self.classifier.predict_products(self.vocab, query, threshold, top_k)
    }
}
