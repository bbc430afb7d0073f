//! Query-to-product intent classification.
//!
//! The crate covers the whole offline and online path for "app card"
//! triggering: a product catalog with a gazetteer matcher, click-log
//! relevance weighting and dataset assembly, a word-level tokenizer, a small
//! transformer encoder pretrained with masked language modeling, a
//! multi-label classifier head trained with weighted binary cross entropy,
//! evaluation metrics, and a synthetic data generator with planted ground
//! truth.

pub mod bundle;
pub mod catalog;
pub mod checkpoint;
pub mod classifier;
pub mod data_pipeline;
pub mod encoder;
mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tokenizer;

pub use bundle::{ModelBundle, ModelPaths};
pub use catalog::{normalize, Catalog, NerMatch, Product};
pub use classifier::{ClassifierConfig, ClassifierState, PredictionVector};
pub use data_pipeline::{ClickEvent, DatasetSplit, LabeledQuery, QueryDocAggregate, Source};
pub use encoder::{EncoderConfig, EncoderState};
pub use error::{Error, Result};
pub use eval::{MetricsReport, SurfacingReport};
pub use tokenizer::{TokenBlock, Vocab};
