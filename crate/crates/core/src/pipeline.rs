//! In-memory stages shared by the command line and the tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, Catalog};
use crate::classifier::{gold_sets, ClassifierState, PredictionVector};
use crate::data_pipeline::{
    aggregate_clicks, apply_relevance, build_behavioral, build_curated, build_ner_explicit, build_top_queries,
    merge_sources, split_dataset, ClickEvent, CuratedDoc, DatasetSplit, LabeledQuery, QueryDocAggregate, Source,
    SplitConfig, TopQueries,
};
use crate::encoder::{pretrain, split_blocks, EncoderConfig, EncoderState, PretrainConfig, PretrainReport};
use crate::eval::{micro_metrics, MetricsReport};
use crate::synth::GroundTruth;
use crate::tokenizer::{Vocab, DEFAULT_BLOCK_LEN};
use crate::Result;

#[derive(Debug, Clone, Default)]
pub struct IngestInputs {
    pub clicks: Vec<ClickEvent>,
    pub curated: Vec<CuratedDoc>,
    pub ner_queries: Vec<String>,
    pub top_queries: Vec<TopQueries>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub aggregates: Vec<QueryDocAggregate>,
    pub merged: Vec<LabeledQuery>,
    pub split: DatasetSplit,
    /// Rows contributed by each source before merging.
    pub source_rows: BTreeMap<Source, usize>,
}

pub fn ingest(inputs: &IngestInputs, catalog: &Catalog, w_min: f64, split: SplitConfig) -> Result<IngestOutput> {
    let mut aggregates = aggregate_clicks(inputs.clicks.iter().cloned(), catalog);
    apply_relevance(&mut aggregates, w_min)?;
    let behavioral = build_behavioral(&aggregates, w_min)?;
    let curated = build_curated(&inputs.curated, catalog);
    let ner = build_ner_explicit(&inputs.ner_queries, catalog);
    let mut top = Vec::new();
    for t in &inputs.top_queries {
        top.extend(build_top_queries(&t.queries, &t.product_id, catalog)?);
    }
    let source_rows = BTreeMap::from([
        (Source::Behavioral, behavioral.len()),
        (Source::CuratedDocs, curated.len()),
        (Source::NerExplicit, ner.len()),
        (Source::ProductTopQueries, top.len()),
    ]);
    let merged = merge_sources([behavioral, curated, ner, top]);
    let split = split_dataset(&merged, split)?;
    Ok(IngestOutput {
        aggregates,
        merged,
        split,
        source_rows,
    })
}

/// Tokenizes the corpus into blocks, holds out `val_fraction` of them, and
/// runs masked language model training from `init`.
pub fn pretrain_corpus<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocab,
    init: EncoderConfig,
    cfg: &PretrainConfig,
    val_fraction: f64,
) -> Result<(EncoderState, PretrainReport)> {
    let blocks = vocab.make_blocks(corpus, DEFAULT_BLOCK_LEN);
    let (train, val) = split_blocks(&blocks, val_fraction, cfg.seed);
    pretrain(EncoderState::new(init)?, &train, &val, cfg)
}

/// Gold label sets: planted truth when available for a query, otherwise the
/// products labeled with weight at least `crate::classifier::GOLD_MIN_WEIGHT`.
pub fn gold_labels(rows: &[LabeledQuery], catalog: &Catalog, truth: Option<&GroundTruth>) -> Vec<BTreeSet<usize>> {
    let fallback = gold_sets(rows, catalog);
    rows.iter()
        .zip(fallback)
        .map(|(row, fb)| match truth.and_then(|t| t.get(&normalize(&row.query))) {
            Some(set) => set.iter().filter_map(|p| catalog.label_of(p)).collect(),
            None => fb,
        })
        .collect()
}

pub fn predict_rows(
    classifier: &ClassifierState,
    vocab: &Vocab,
    queries: impl IntoIterator<Item = impl AsRef<str>>,
) -> Vec<PredictionVector> {
    queries
        .into_iter()
        .map(|q| classifier.class_forward(vocab, q.as_ref()))
        .collect()
}

pub fn evaluate_rows(
    classifier: &ClassifierState,
    vocab: &Vocab,
    catalog: &Catalog,
    rows: &[LabeledQuery],
    truth: Option<&GroundTruth>,
    threshold: f64,
) -> MetricsReport {
    let preds = predict_rows(classifier, vocab, rows.iter().map(|r| &r.query));
    micro_metrics(&preds, &gold_labels(rows, catalog, truth), threshold)
}

/// Share of queries whose full gold set scores at or above `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelReport {
    pub queries: usize,
    pub all_gold_above_threshold: usize,
    pub rate: f64,
}

pub fn multi_label_recall(preds: &[PredictionVector], gold: &[BTreeSet<usize>], threshold: f64) -> MultiLabelReport {
    let hits = preds
        .iter()
        .zip(gold)
        .filter(|(p, g)| g.is_subset(&p.positives(threshold)))
        .count();
    MultiLabelReport {
        queries: preds.len(),
        all_gold_above_threshold: hits,
        rate: if preds.is_empty() {
            0.0
        } else {
            hits as f64 / preds.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn ingest_covers_all_sources_and_splits_by_query() {
        let data = generate(&SynthSpec {
            n_documents: 200,
            n_behavioral_queries: 300,
            n_log_queries: 50,
            ..Default::default()
        })
        .unwrap();
        let inputs = IngestInputs {
            clicks: data.clicks.clone(),
            curated: data.curated.clone(),
            ner_queries: data.ner_queries.clone(),
            top_queries: vec![data.top_queries.clone()],
        };
        let out = ingest(&inputs, &data.catalog, 0.05, SplitConfig::default()).unwrap();
        assert!(out.source_rows.values().all(|&n| n > 0));
        assert!(out.aggregates.iter().all(|a| a.relevance >= 0.05 && a.relevance <= 1.0));
        let n = out.merged.len();
        assert_eq!(
            out.split.train.len() + out.split.validation.len() + out.split.test.len(),
            n
        );
        let test: BTreeSet<_> = out.split.test.iter().map(|r| &r.query).collect();
        assert!(out.split.train.iter().all(|r| !test.contains(&r.query)));
        let gold = gold_labels(&out.split.test, &data.catalog, Some(&data.ground_truth));
        assert!(gold.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn multi_label_recall_counts_subsets() {
        let preds = vec![
            PredictionVector(vec![0.9, 0.8, 0.1]),
            PredictionVector(vec![0.9, 0.2, 0.1]),
        ];
        let gold = vec![BTreeSet::from([0, 1]), BTreeSet::from([0, 1])];
        let r = multi_label_recall(&preds, &gold, 0.5);
        assert_eq!((r.queries, r.all_gold_above_threshold, r.rate), (2, 1, 0.5));
    }
}
