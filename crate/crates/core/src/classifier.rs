//! Multi-label product classifier on top of the encoder's CLS vector.
//!
//! The head is a two-hidden-layer MLP with GELU and dropout, one independent
//! sigmoid per product. Training minimizes a weighted binary cross entropy in
//! which each positive label carries its relevance weight. The backbone is
//! frozen for the first `freeze_epochs` epochs and trained jointly afterwards.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::checkpoint;
use crate::data_pipeline::{DatasetSplit, LabeledQuery};
use crate::encoder::{EncoderParams, EncoderState};
use crate::eval::micro_metrics;
use crate::nn::{gelu, gelu_grad, normal_matrix, sigmoid, Adam, Params};
use crate::tokenizer::{Vocab, UNK};
use crate::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub dropout: f64,
    /// Learning rate of the head.
    pub lr: f64,
    /// Learning rate of the backbone once unfrozen; defaults to `lr`.
    #[serde(default)]
    pub encoder_lr: Option<f64>,
    pub freeze_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub negative_weight: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: [128, 64],
            dropout: 0.5,
            lr: 1e-3,
            encoder_lr: Some(3e-4),
            freeze_epochs: 2,
            total_epochs: 20,
            batch_size: 16,
            threshold: 0.5,
            negative_weight: 1.0,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.freeze_epochs > self.total_epochs {
            return bad(format!(
                "freeze_epochs {} > total_epochs {}",
                self.freeze_epochs, self.total_epochs
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.hidden.contains(&0) || self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return bad("hidden sizes, batch_size and lr must be positive".into());
        }
        if self.encoder_lr.is_some_and(|lr| lr.is_nan() || lr <= 0.0) {
            return bad("encoder_lr must be positive".into());
        }
        if self.negative_weight.is_nan() || self.negative_weight < 0.0 {
            return bad(format!("negative_weight {} < 0", self.negative_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl Params for HeadParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("w1".into(), self.w1.view().into_dyn()),
            ("b1".into(), self.b1.view().into_dyn()),
            ("w2".into(), self.w2.view().into_dyn()),
            ("b2".into(), self.b2.view().into_dyn()),
            ("w3".into(), self.w3.view().into_dyn()),
            ("b3".into(), self.b3.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("w1".into(), self.w1.view_mut().into_dyn()),
            ("b1".into(), self.b1.view_mut().into_dyn()),
            ("w2".into(), self.w2.view_mut().into_dyn()),
            ("b2".into(), self.b2.view_mut().into_dyn()),
            ("w3".into(), self.w3.view_mut().into_dyn()),
            ("b3".into(), self.b3.view_mut().into_dyn()),
        ]
    }
}

impl HeadParams {
    pub fn zeros(d_in: usize, hidden: [usize; 2], n_out: usize) -> Self {
        HeadParams {
            w1: Array2::zeros((d_in, hidden[0])),
            b1: Array1::zeros(hidden[0]),
            w2: Array2::zeros((hidden[0], hidden[1])),
            b2: Array1::zeros(hidden[1]),
            w3: Array2::zeros((hidden[1], n_out)),
            b3: Array1::zeros(n_out),
        }
    }

    fn init(d_in: usize, hidden: [usize; 2], n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let he = |n: usize| (2.0 / n as f64).sqrt();
        HeadParams {
            w1: normal_matrix(&mut rng, d_in, hidden[0], he(d_in)),
            b1: Array1::zeros(hidden[0]),
            w2: normal_matrix(&mut rng, hidden[0], hidden[1], he(hidden[0])),
            b2: Array1::zeros(hidden[1]),
            w3: normal_matrix(&mut rng, hidden[1], n_out, (1.0 / hidden[1] as f64).sqrt()),
            b3: Array1::zeros(n_out),
        }
    }
}

/// Independent per-product probabilities; they need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector(pub Vec<f64>);

impl PredictionVector {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Label positions with score `>= threshold`.
    pub fn positives(&self, threshold: f64) -> BTreeSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    pub config: ClassifierConfig,
    /// Product ids in label order.
    pub labels: Vec<String>,
    pub head: HeadParams,
    pub encoder: EncoderState,
    pub frozen: bool,
}

/// `-(1/P) sum_k [w_k y_k ln p_k + nw (1 - y_k) ln(1 - p_k)]` with
/// probabilities clamped to `[1e-7, 1 - 1e-7]`. `labels` lists
/// (label position, weight) for the positives.
pub fn weighted_bce(pred: &PredictionVector, labels: &[(usize, f64)], negative_weight: f64) -> Result<f64> {
    let weights = positive_weights(pred.len(), labels)?;
    Ok(bce_terms(pred.scores(), &weights, negative_weight).0)
}

fn positive_weights(n: usize, labels: &[(usize, f64)]) -> Result<Vec<f64>> {
    let mut w = vec![0.0; n];
    for &(k, weight) in labels {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidArgument(format!("label weight {weight} outside (0, 1]")));
        }
        if k >= n {
            return Err(Error::InvalidArgument(format!("label position {k} >= {n}")));
        }
        w[k] = weight;
    }
    Ok(w)
}

/// Loss and d loss / d logit for one example. A zero weight marks a negative.
fn bce_terms(probs: &[f64], weights: &[f64], negative_weight: f64) -> (f64, Vec<f64>) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut dz = Vec::with_capacity(probs.len());
    for (&p, &w) in probs.iter().zip(weights) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let inside = pc == p;
        if w > 0.0 {
            loss -= w * pc.ln();
            dz.push(if inside { -w * (1.0 - p) / n } else { 0.0 });
        } else {
            loss -= negative_weight * (1.0 - pc).ln();
            dz.push(if inside { negative_weight * p / n } else { 0.0 });
        }
    }
    (loss / n, dz)
}

struct HeadCache {
    input: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    mask1: Option<Array2<f64>>,
    mask2: Option<Array2<f64>>,
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

impl HeadParams {
    /// Logits for a batch of embeddings (`B x d`). With `rng`, applies
    /// inverted dropout after each hidden activation.
    fn forward<R: Rng>(&self, input: Array2<f64>, dropout: Option<(f64, &mut R)>) -> (Array2<f64>, HeadCache) {
        let z1 = input.dot(&self.w1) + &self.b1;
        let mut a1 = z1.mapv(gelu);
        let (mask1, mask2, a2, z2);
        match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let m1 = dropout_mask(rng, a1.dim(), rate);
                a1 *= &m1;
                z2 = a1.dot(&self.w2) + &self.b2;
                let m2 = dropout_mask(rng, z2.dim(), rate);
                a2 = z2.mapv(gelu) * &m2;
                mask1 = Some(m1);
                mask2 = Some(m2);
            }
            _ => {
                z2 = a1.dot(&self.w2) + &self.b2;
                a2 = z2.mapv(gelu);
                mask1 = None;
                mask2 = None;
            }
        }
        let logits = a2.dot(&self.w3) + &self.b3;
        (
            logits,
            HeadCache {
                input,
                z1,
                a1,
                z2,
                a2,
                mask1,
                mask2,
            },
        )
    }

    /// Accumulates head gradients; returns d loss / d input.
    fn backward(&self, cache: &HeadCache, dlogits: &Array2<f64>, grads: &mut HeadParams) -> Array2<f64> {
        grads.w3 += &cache.a2.t().dot(dlogits);
        grads.b3 += &dlogits.sum_axis(Axis(0));
        let mut da2 = dlogits.dot(&self.w3.t());
        if let Some(m) = &cache.mask2 {
            da2 *= m;
        }
        Zip::from(&mut da2).and(&cache.z2).for_each(|g, &z| *g *= gelu_grad(z));
        grads.w2 += &cache.a1.t().dot(&da2);
        grads.b2 += &da2.sum_axis(Axis(0));
        let mut da1 = da2.dot(&self.w2.t());
        if let Some(m) = &cache.mask1 {
            da1 *= m;
        }
        Zip::from(&mut da1).and(&cache.z1).for_each(|g, &z| *g *= gelu_grad(z));
        grads.w1 += &cache.input.t().dot(&da1);
        grads.b1 += &da1.sum_axis(Axis(0));
        da1.dot(&self.w1.t())
    }
}

/// A training row in label space.
#[derive(Debug, Clone)]
pub struct Example {
    pub ids: Vec<u32>,
    /// Dense per-label weight; 0 marks a negative.
    pub weights: Vec<f64>,
}

impl Example {
    pub fn new(
        encoder: &EncoderState,
        vocab: &Vocab,
        query: &str,
        labels: &[(usize, f64)],
        n_labels: usize,
    ) -> Result<Self> {
        Ok(Example {
            ids: encoder.query_ids(vocab, query),
            weights: positive_weights(n_labels, labels)?,
        })
    }
}

impl ClassifierState {
    pub fn new(encoder: EncoderState, labels: Vec<String>, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::InvalidArgument("classifier needs at least one product".into()));
        }
        let head = HeadParams::init(encoder.config.d_model, config.hidden, labels.len(), config.seed);
        Ok(ClassifierState {
            config,
            labels,
            head,
            encoder,
            frozen: false,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Eval-mode scores for one query.
    pub fn class_forward(&self, vocab: &Vocab, query: &str) -> PredictionVector {
        let emb = self.encoder.embed_query(vocab, query).insert_axis(Axis(0));
        let (logits, _) = self.head.forward::<ChaCha8Rng>(emb, None);
        PredictionVector(logits.row(0).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Products scoring at least `threshold`, best first, ties by product id.
    /// Ranked products at or above `threshold`. A query without a single
    /// in-vocabulary token carries no evidence and yields no products.
    pub fn predict_products(&self, vocab: &Vocab, query: &str, threshold: f64, top_k: usize) -> Vec<(String, f64)> {
        if vocab.encode(query).iter().all(|&id| id == UNK) {
            return Vec::new();
        }
        rank_products(&self.labels, &self.class_forward(vocab, query), threshold, top_k)
    }

    /// Mean weighted BCE over `examples` in eval mode (no dropout).
    pub fn batch_loss(&self, examples: &[Example]) -> f64 {
        let (loss, _, _) = self.batch_pass::<ChaCha8Rng>(examples, None, false, None);
        loss
    }

    /// Loss with head and backbone gradients, eval mode.
    pub fn batch_loss_and_grad(&self, examples: &[Example]) -> (f64, HeadParams, EncoderParams) {
        let (loss, head, enc) = self.batch_pass::<ChaCha8Rng>(examples, None, true, None);
        (loss, head, enc.expect("backbone gradients requested"))
    }

    fn batch_pass<R: Rng>(
        &self,
        examples: &[Example],
        dropout_rng: Option<&mut R>,
        backbone_grads: bool,
        cached_embeddings: Option<&[Array1<f64>]>,
    ) -> (f64, HeadParams, Option<EncoderParams>) {
        let b = examples.len();
        let d = self.encoder.config.d_model;
        let mut input = Array2::zeros((b, d));
        let mut caches = Vec::new();
        for (i, ex) in examples.iter().enumerate() {
            match cached_embeddings {
                Some(embs) => input.row_mut(i).assign(&embs[i]),
                None => {
                    let (emb, cache) = self.encoder.embed_ids_cached(&ex.ids);
                    input.row_mut(i).assign(&emb);
                    if backbone_grads {
                        caches.push(cache);
                    }
                }
            }
        }
        let dropout = dropout_rng.map(|r| (self.config.dropout, r));
        let (logits, cache) = self.head.forward(input, dropout);
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (i, ex) in examples.iter().enumerate() {
            let probs: Vec<f64> = logits.row(i).iter().map(|&z| sigmoid(z)).collect();
            let (l, dz) = bce_terms(&probs, &ex.weights, self.config.negative_weight);
            loss += l;
            for (k, g) in dz.into_iter().enumerate() {
                dlogits[[i, k]] = g / b as f64;
            }
        }
        let mut head_grads = HeadParams::zeros(d, self.config.hidden, self.num_labels());
        let d_input = self.head.backward(&cache, &dlogits, &mut head_grads);
        let enc_grads = backbone_grads.then(|| {
            let mut g = EncoderParams::zeros(&self.encoder.config);
            for (i, c) in caches.iter().enumerate() {
                self.encoder.backward_cls(c, &d_input.row(i).to_owned(), &mut g);
            }
            g
        });
        (loss / b as f64, head_grads, enc_grads)
    }

    /// Adds a product whose output row is zero. Existing scores are unchanged.
    pub fn with_added_product(&self, product_id: &str) -> Self {
        let mut next = self.clone();
        let h2 = self.config.hidden[1];
        let mut w3 = Array2::zeros((h2, self.num_labels() + 1));
        w3.slice_mut(ndarray::s![.., ..self.num_labels()]).assign(&self.head.w3);
        let mut b3 = Array1::zeros(self.num_labels() + 1);
        b3.slice_mut(ndarray::s![..self.num_labels()]).assign(&self.head.b3);
        next.head.w3 = w3;
        next.head.b3 = b3;
        next.labels.push(product_id.to_string());
        next
    }
}

pub fn rank_products(labels: &[String], pred: &PredictionVector, threshold: f64, top_k: usize) -> Vec<(String, f64)> {
    let mut hits: Vec<(String, f64)> = labels
        .iter()
        .zip(pred.scores())
        .filter(|(_, &s)| s >= threshold)
        .map(|(id, &s)| (id.clone(), s))
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    hits.truncate(top_k);
    hits
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub frozen: bool,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: ClassifierState,
    pub history: Vec<EpochStats>,
    /// Backbone checkpoint hash before training and at the end of the
    /// freeze phase; equal whenever the freeze contract holds.
    pub backbone_hash_before: String,
    pub backbone_hash_after_freeze: String,
}

/// Converts labeled rows to examples; rows whose products are all unknown are
/// skipped.
pub fn to_examples(
    rows: &[LabeledQuery],
    encoder: &EncoderState,
    vocab: &Vocab,
    catalog: &Catalog,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let labels: Vec<(usize, f64)> = row
            .labels
            .iter()
            .filter_map(|(p, &w)| catalog.label_of(p).map(|k| (k, w)))
            .collect();
        if labels.is_empty() {
            log::warn!("skipping {:?}: no known products", row.query);
            continue;
        }
        out.push(Example::new(encoder, vocab, &row.query, &labels, catalog.len())?);
    }
    Ok(out)
}

/// Labels weighted below this count as noise when a row's weights stand in
/// for gold. A weight of 0.5 is a click ratio of about 0.32.
pub const GOLD_MIN_WEIGHT: f64 = 0.5;

/// Gold label sets for rows, in catalog label space: products weighted at
/// least [`GOLD_MIN_WEIGHT`].
pub fn gold_sets(rows: &[LabeledQuery], catalog: &Catalog) -> Vec<BTreeSet<usize>> {
    rows.iter()
        .map(|r| {
            r.labels
                .iter()
                .filter(|(_, &w)| w >= GOLD_MIN_WEIGHT)
                .filter_map(|(p, _)| catalog.label_of(p))
                .collect()
        })
        .collect()
}

pub fn train_classifier(
    encoder: EncoderState,
    vocab: &Vocab,
    catalog: &Catalog,
    data: &DatasetSplit,
    cfg: &ClassifierConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab_hash = vocab.hash();
    let backbone_hash_before = checkpoint::encoder_hash(&encoder, &vocab_hash);
    let labels: Vec<String> = catalog.products().iter().map(|p| p.id.clone()).collect();
    let examples = to_examples(&data.train, &encoder, vocab, catalog)?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }
    let val_gold = gold_sets(&data.validation, catalog);

    let mut state = ClassifierState::new(encoder, labels, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head_opt = Adam::new(cfg.lr);
    let mut enc_opt = Adam::new(cfg.encoder_lr.unwrap_or(cfg.lr));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut frozen_embeddings: Option<Vec<Array1<f64>>> = None;
    let mut history = Vec::with_capacity(cfg.total_epochs);
    let mut backbone_hash_after_freeze = backbone_hash_before.clone();

    for epoch in 0..cfg.total_epochs {
        let frozen = epoch < cfg.freeze_epochs;
        state.frozen = frozen;
        if frozen && frozen_embeddings.is_none() {
            frozen_embeddings = Some(
                examples
                    .iter()
                    .map(|ex| state.encoder.embed_ids_cached(&ex.ids).0)
                    .collect(),
            );
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let embs: Option<Vec<Array1<f64>>> = if frozen {
                let all = frozen_embeddings.as_ref().expect("computed above");
                Some(chunk.iter().map(|&i| all[i].clone()).collect())
            } else {
                None
            };
            let (loss, head_grads, enc_grads) = state.batch_pass(&batch, Some(&mut rng), !frozen, embs.as_deref());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            head_opt.update(&mut state.head, &head_grads);
            if let Some(g) = enc_grads {
                enc_opt.update(&mut state.encoder.params, &g);
            }
            epoch_loss += loss;
            steps += 1;
        }
        if epoch + 1 == cfg.freeze_epochs {
            backbone_hash_after_freeze = checkpoint::encoder_hash(&state.encoder, &vocab_hash);
        }
        let val_f1 = (!data.validation.is_empty()).then(|| {
            let preds: Vec<PredictionVector> = data
                .validation
                .iter()
                .map(|r| state.class_forward(vocab, &r.query))
                .collect();
            micro_metrics(&preds, &val_gold, cfg.threshold).f1
        });
        log::info!(
            "epoch {epoch} ({}): train loss {:.5}, val f1 {}",
            if frozen { "frozen" } else { "full" },
            epoch_loss / steps as f64,
            val_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
        );
        history.push(EpochStats {
            epoch,
            frozen,
            train_loss: epoch_loss / steps as f64,
            val_f1,
        });
    }
    state.frozen = cfg.total_epochs > 0 && cfg.freeze_epochs == cfg.total_epochs;
    Ok(TrainOutcome {
        classifier: state,
        history,
        backbone_hash_before,
        backbone_hash_after_freeze,
    })
}

/// Label-space view of a label map.
pub fn label_pairs(labels: &BTreeMap<String, f64>, catalog: &Catalog) -> Vec<(usize, f64)> {
    labels
        .iter()
        .filter_map(|(p, &w)| catalog.label_of(p).map(|k| (k, w)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::nn::max_relative_error;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bce_examples() {
        let l = weighted_bce(&PredictionVector(vec![1.0 - 1e-12]), &[(0, 1.0)], 1.0).unwrap();
        assert!(l < 1e-6);
        let l = weighted_bce(&PredictionVector(vec![0.5]), &[(0, 0.24)], 1.0).unwrap();
        assert_abs_diff_eq!(l, 0.24 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.16635, epsilon = 1e-5);
        let l = weighted_bce(&PredictionVector(vec![0.5, 0.5]), &[], 1.0).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-12);
        assert!(weighted_bce(&PredictionVector(vec![0.5]), &[(0, 1.5)], 1.0).is_err());
        assert!(weighted_bce(&PredictionVector(vec![0.5]), &[(0, 0.0)], 1.0).is_err());
        // Clamp keeps the loss finite at p = 0.
        let l = weighted_bce(&PredictionVector(vec![0.0]), &[(0, 1.0)], 1.0).unwrap();
        assert_abs_diff_eq!(l, -(1e-7f64).ln(), epsilon = 1e-9);
    }

    fn tiny_vocab() -> Vocab {
        Vocab::build(["alpha beta gamma delta epsilon zeta eta theta"], 1).unwrap()
    }

    fn tiny_classifier(hidden: [usize; 2], n_labels: usize) -> ClassifierState {
        let encoder = EncoderState::new(EncoderConfig::micro(12)).unwrap();
        let cfg = ClassifierConfig {
            hidden,
            dropout: 0.0,
            ..Default::default()
        };
        let labels = (0..n_labels).map(|i| format!("p{i}")).collect();
        ClassifierState::new(encoder, labels, cfg).unwrap()
    }

    #[test]
    fn weighted_bce_gradient_matches_finite_differences() {
        let mut state = tiny_classifier([6, 5], 3);
        state.config.negative_weight = 0.7;
        let vocab = tiny_vocab();
        let examples = vec![
            Example::new(&state.encoder, &vocab, "alpha beta", &[(0, 0.24)], 3).unwrap(),
            Example::new(&state.encoder, &vocab, "gamma delta epsilon", &[(1, 1.0), (2, 0.5)], 3).unwrap(),
            Example::new(&state.encoder, &vocab, "zeta", &[(2, 0.8)], 3).unwrap(),
        ];
        let (_, head_grads, enc_grads) = state.batch_loss_and_grad(&examples);

        let (rel, name) = max_relative_error(&state.head, &head_grads, |h| {
            let mut s = state.clone();
            s.head = h.clone();
            s.batch_loss(&examples)
        });
        assert!(rel < 1e-4, "head tensor {name}: {rel:e}");

        let (rel, name) = max_relative_error(&state.encoder.params, &enc_grads, |p| {
            let mut s = state.clone();
            s.encoder.params = p.clone();
            s.batch_loss(&examples)
        });
        assert!(rel < 1e-4, "backbone tensor {name}: {rel:e}");
    }

    #[test]
    fn zero_final_layer_scores_one_half() {
        let mut state = tiny_classifier([6, 5], 4);
        state.head.w3.fill(0.0);
        state.head.b3.fill(0.0);
        let p = state.class_forward(&tiny_vocab(), "alpha gamma");
        assert_eq!(p.0, vec![0.5; 4]);
    }

    #[test]
    fn scores_are_probabilities() {
        let state = tiny_classifier([6, 5], 4);
        for q in ["", "alpha", "beta unknownword theta"] {
            let p = state.class_forward(&tiny_vocab(), q);
            assert!(p.0.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn ranking_examples() {
        let labels: Vec<String> = ["ps", "pr", "ai"].iter().map(|s| s.to_string()).collect();
        let p = PredictionVector(vec![0.9, 0.7, 0.2]);
        assert_eq!(
            rank_products(&labels, &p, 0.5, 2),
            vec![("ps".to_string(), 0.9), ("pr".to_string(), 0.7)]
        );
        assert!(rank_products(&labels, &PredictionVector(vec![0.1, 0.2, 0.3]), 0.5, 3).is_empty());
        let tie = rank_products(&labels, &PredictionVector(vec![0.8, 0.8, 0.1]), 0.5, 3);
        assert_eq!(tie[0].0, "pr");
        assert_eq!(tie[1].0, "ps");
    }

    proptest! {
        #[test]
        fn higher_threshold_gives_prefix(scores in proptest::collection::vec(0.0f64..=1.0, 1..8), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let labels: Vec<String> = (0..scores.len()).map(|i| format!("p{i}")).collect();
            let p = PredictionVector(scores);
            let wide = rank_products(&labels, &p, lo, usize::MAX);
            let narrow = rank_products(&labels, &p, hi, usize::MAX);
            prop_assert!(narrow.len() <= wide.len());
            prop_assert_eq!(&wide[..narrow.len()], &narrow[..]);
        }
    }

    #[test]
    fn added_product_leaves_other_scores() {
        let state = tiny_classifier([6, 5], 3);
        let bigger = state.with_added_product("new");
        let vocab = tiny_vocab();
        let a = state.class_forward(&vocab, "beta gamma");
        let b = bigger.class_forward(&vocab, "beta gamma");
        assert_eq!(&b.0[..3], &a.0[..]);
        assert_eq!(b.0[3], 0.5);
    }

    fn toy_split(catalog: &Catalog) -> DatasetSplit {
        let row = |q: &str, p: &str| LabeledQuery {
            query: q.into(),
            labels: BTreeMap::from([(p.to_string(), 1.0)]),
            source: crate::data_pipeline::Source::CuratedDocs,
        };
        let _ = catalog;
        DatasetSplit {
            train: vec![
                row("alpha beta", "a"),
                row("gamma delta", "b"),
                row("alpha", "a"),
                row("delta", "b"),
            ],
            validation: vec![row("beta", "a")],
            test: vec![],
            seed: 0,
        }
    }

    fn toy_catalog() -> Catalog {
        use crate::catalog::Product;
        Catalog::new(vec![
            Product {
                id: "a".into(),
                display_name: "A".into(),
                aliases: vec!["aa".into()],
            },
            Product {
                id: "b".into(),
                display_name: "B".into(),
                aliases: vec!["bb".into()],
            },
        ])
        .unwrap()
    }

    #[test]
    fn freeze_phase_leaves_backbone_untouched() {
        let vocab = tiny_vocab();
        let catalog = toy_catalog();
        let split = toy_split(&catalog);
        let encoder = EncoderState::new(EncoderConfig {
            vocab_size: vocab.len(),
            ..EncoderConfig::micro(vocab.len())
        })
        .unwrap();
        let cfg = ClassifierConfig {
            hidden: [6, 5],
            freeze_epochs: 2,
            total_epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let out = train_classifier(encoder.clone(), &vocab, &catalog, &split, &cfg).unwrap();
        assert_eq!(out.classifier.encoder, encoder);
        assert_eq!(out.backbone_hash_before, out.backbone_hash_after_freeze);
        assert!(out.classifier.frozen);

        let cfg = ClassifierConfig { total_epochs: 3, ..cfg };
        let out = train_classifier(encoder.clone(), &vocab, &catalog, &split, &cfg).unwrap();
        assert_eq!(out.backbone_hash_before, out.backbone_hash_after_freeze);
        assert_ne!(out.classifier.encoder, encoder);
        assert_eq!(out.history.len(), 3);
        assert!(out.history[0].frozen && out.history[1].frozen && !out.history[2].frozen);
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = tiny_vocab();
        let catalog = toy_catalog();
        let split = toy_split(&catalog);
        let encoder = EncoderState::new(EncoderConfig::micro(vocab.len())).unwrap();
        let cfg = ClassifierConfig {
            hidden: [6, 5],
            freeze_epochs: 1,
            total_epochs: 2,
            batch_size: 2,
            seed: 5,
            ..Default::default()
        };
        let a = train_classifier(encoder.clone(), &vocab, &catalog, &split, &cfg).unwrap();
        let b = train_classifier(encoder, &vocab, &catalog, &split, &cfg).unwrap();
        assert_eq!(a.classifier, b.classifier);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let vocab = tiny_vocab();
        let catalog = toy_catalog();
        let encoder = EncoderState::new(EncoderConfig::micro(vocab.len())).unwrap();
        let r = train_classifier(
            encoder,
            &vocab,
            &catalog,
            &DatasetSplit::default(),
            &ClassifierConfig::default(),
        );
        assert!(matches!(r, Err(Error::EmptyTrainingSplit)));
    }

    #[test]
    fn config_validation() {
        let c = ClassifierConfig {
            freeze_epochs: 7,
            total_epochs: 6,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ClassifierConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ClassifierConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
