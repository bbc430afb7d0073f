//! Small post-norm transformer encoder trained with masked language modeling.
//!
//! Every layer is `x1 = LN(x + MHA(x))`, `x2 = LN(x1 + W2·gelu(W1·x1))`.
//! Positions are learned absolute embeddings and the MLM output projection
//! is tied to the token embedding table. Gradients are written out by hand;
//! `mlm_loss_and_grad` is checked against central finite differences in the
//! tests below.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{gelu, gelu_grad, layer_norm, layer_norm_backward, normal_matrix, Adam, LayerNormCache, Params};
use crate::tokenizer::{TokenBlock, Vocab, CLS, MASK, N_RESERVED};
use crate::{Error, Result};

/// Masking seed used whenever perplexity is reported.
pub const EVAL_MASK_SEED: u64 = 0x005e_ed0f_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub mask_probability: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Default desk-scale shape: d_model 64, 2 layers, 4 heads, d_ff 256.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 129,
            mask_probability: 0.15,
            seed,
        }
    }

    /// A tiny configuration for gradient checks and unit tests.
    pub fn micro(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_len: 129,
            mask_probability: 0.5,
            seed: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} < 5", self.vocab_size));
        }
        #[allow(clippy::manual_is_multiple_of)]
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if self.max_len < 129 {
            return bad(format!("max_len {} < 129", self.max_len));
        }
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return bad(format!("mask_probability {} outside (0, 1)", self.mask_probability));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(d: usize, ff: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerParams {
            wq: m(d, d),
            bq: v(d),
            wk: m(d, d),
            bk: v(d),
            wv: m(d, d),
            bv: v(d),
            wo: m(d, d),
            bo: v(d),
            ln1_gamma: v(d),
            ln1_beta: v(d),
            w1: m(d, ff),
            b1: v(ff),
            w2: m(ff, d),
            b2: v(d),
            ln2_gamma: v(d),
            ln2_beta: v(d),
        }
    }
}

macro_rules! layer_fields {
    ($l:expr, $i:expr, $view:ident, $out:ident) => {
        for (name, t) in [
            ("wq", $l.wq.$view().into_dyn()),
            ("bq", $l.bq.$view().into_dyn()),
            ("wk", $l.wk.$view().into_dyn()),
            ("bk", $l.bk.$view().into_dyn()),
            ("wv", $l.wv.$view().into_dyn()),
            ("bv", $l.bv.$view().into_dyn()),
            ("wo", $l.wo.$view().into_dyn()),
            ("bo", $l.bo.$view().into_dyn()),
            ("ln1_gamma", $l.ln1_gamma.$view().into_dyn()),
            ("ln1_beta", $l.ln1_beta.$view().into_dyn()),
            ("w1", $l.w1.$view().into_dyn()),
            ("b1", $l.b1.$view().into_dyn()),
            ("w2", $l.w2.$view().into_dyn()),
            ("b2", $l.b2.$view().into_dyn()),
            ("ln2_gamma", $l.ln2_gamma.$view().into_dyn()),
            ("ln2_beta", $l.ln2_beta.$view().into_dyn()),
        ] {
            $out.push((format!("layers.{}.{}", $i, name), t));
        }
    };
}

impl Params for EncoderParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            layer_fields!(l, i, view, out);
        }
        out.push(("mlm_bias".to_string(), self.mlm_bias.view().into_dyn()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            layer_fields!(l, i, view_mut, out);
        }
        out.push(("mlm_bias".to_string(), self.mlm_bias.view_mut().into_dyn()));
        out
    }
}

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            tok_emb: Array2::zeros((cfg.vocab_size, cfg.d_model)),
            pos_emb: Array2::zeros((cfg.max_len, cfg.d_model)),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams::zeros(cfg.d_model, cfg.d_ff))
                .collect(),
            mlm_bias: Array1::zeros(cfg.vocab_size),
        }
    }

    fn init(cfg: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let emb_std = 0.1;
        let proj = (1.0 / d as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                wq: normal_matrix(&mut rng, d, d, proj),
                bq: Array1::zeros(d),
                wk: normal_matrix(&mut rng, d, d, proj),
                bk: Array1::zeros(d),
                wv: normal_matrix(&mut rng, d, d, proj),
                bv: Array1::zeros(d),
                wo: normal_matrix(&mut rng, d, d, proj),
                bo: Array1::zeros(d),
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                w1: normal_matrix(&mut rng, d, ff, proj),
                b1: Array1::zeros(ff),
                w2: normal_matrix(&mut rng, ff, d, (1.0 / ff as f64).sqrt()),
                b2: Array1::zeros(d),
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
            })
            .collect();
        EncoderParams {
            tok_emb: normal_matrix(&mut rng, cfg.vocab_size, d, emb_std),
            pos_emb: normal_matrix(&mut rng, cfg.max_len, d, emb_std),
            layers,
            mlm_bias: Array1::zeros(cfg.vocab_size),
        }
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = EncoderParams::zeros(cfg);
        let (a, b) = (self.tensors(), expected.tensors());
        if a.len() != b.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                b.len(),
                a.len()
            )));
        }
        for ((name, t), (_, e)) in a.iter().zip(&b) {
            if t.shape() != e.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    e.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln1: LayerNormCache,
    x1: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
    ln2: LayerNormCache,
}

pub(crate) struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
}

/// A block after MLM corruption. `targets` holds (position, original id)
/// for every selected position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBlock {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub targets: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmBatch {
    pub blocks: Vec<MaskedBlock>,
}

impl MlmBatch {
    pub fn num_masked(&self) -> usize {
        self.blocks.iter().map(|b| b.targets.len()).sum()
    }
}

/// Selects each non-PAD position with `mask_probability`; selected positions
/// become MASK (80%), a random token (10%) or stay unchanged (10%). At least
/// one position is selected per batch.
pub fn mask_batch(blocks: &[TokenBlock], mask_probability: f64, vocab_size: usize, seed: u64) -> Result<MlmBatch> {
    if !(mask_probability > 0.0 && mask_probability < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask_probability {mask_probability} outside (0, 1)"
        )));
    }
    if vocab_size <= N_RESERVED as usize {
        return Err(Error::InvalidArgument(format!("vocab_size {vocab_size} too small")));
    }
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no blocks to mask".into()));
    }
    if blocks.iter().any(|b| b.real_tokens() == 0) {
        return Err(Error::EmptyBlock);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<Vec<usize>> = Vec::new();
    for _ in 0..64 {
        selected = blocks
            .iter()
            .map(|b| {
                (0..b.len())
                    .filter(|&i| b.attention_mask[i] == 1 && rng.random::<f64>() < mask_probability)
                    .collect()
            })
            .collect();
        if selected.iter().any(|s: &Vec<usize>| !s.is_empty()) {
            break;
        }
    }
    if selected.iter().all(Vec::is_empty) {
        // Vanishing mask probability: force a single uniformly chosen position.
        let candidates: Vec<(usize, usize)> = blocks
            .iter()
            .enumerate()
            .flat_map(|(b, blk)| {
                (0..blk.len())
                    .filter(move |&i| blk.attention_mask[i] == 1)
                    .map(move |i| (b, i))
            })
            .collect();
        let (b, i) = candidates[rng.random_range(0..candidates.len())];
        selected[b].push(i);
    }

    let blocks = blocks
        .iter()
        .zip(selected)
        .map(|(blk, sel)| {
            let mut input_ids = blk.ids.clone();
            let mut targets = Vec::with_capacity(sel.len());
            for i in sel {
                targets.push((i, blk.ids[i]));
                let r: f64 = rng.random();
                if r < 0.8 {
                    input_ids[i] = MASK;
                } else if r < 0.9 {
                    input_ids[i] = rng.random_range(N_RESERVED..vocab_size as u32);
                }
            }
            MaskedBlock {
                input_ids,
                attention_mask: blk.attention_mask.clone(),
                targets,
            }
        })
        .collect();
    Ok(MlmBatch { blocks })
}

fn softmax_rows_masked(scores: &mut Array2<f64>, key_mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let mut max = f64::NEG_INFINITY;
        for (j, v) in row.iter().enumerate() {
            if key_mask[j] && *v > max {
                max = *v;
            }
        }
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if key_mask[j] {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row /= sum;
    }
}

impl EncoderState {
    /// Randomly initialized from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(&config);
        Ok(EncoderState { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(EncoderState { config, params })
    }

    fn check_input(&self, ids: &[u32], attention_mask: &[u8]) -> Result<()> {
        if ids.is_empty() || ids.len() != attention_mask.len() {
            return Err(Error::InvalidArgument(format!(
                "ids ({}) and attention mask ({}) must be non-empty and equally long",
                ids.len(),
                attention_mask.len()
            )));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if ids.iter().any(|&i| i as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument("token id outside vocabulary".into()));
        }
        if attention_mask.iter().all(|&m| m == 0) {
            return Err(Error::EmptyBlock);
        }
        Ok(())
    }

    /// Hidden vectors for every position (`len x d_model`).
    pub fn forward(&self, ids: &[u32], attention_mask: &[u8]) -> Result<Array2<f64>> {
        self.check_input(ids, attention_mask)?;
        Ok(self.forward_cached(ids, attention_mask).0)
    }

    pub(crate) fn forward_cached(&self, ids: &[u32], attention_mask: &[u8]) -> (Array2<f64>, ForwardCache) {
        let p = &self.params;
        let n = ids.len();
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let key_mask: Vec<bool> = attention_mask.iter().map(|&m| m == 1).collect();

        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&p.tok_emb.row(id as usize));
            row += &p.pos_emb.row(i);
        }

        let mut caches = Vec::with_capacity(p.layers.len());
        for l in &p.layers {
            let q = x.dot(&l.wq) + &l.bq;
            let k = x.dot(&l.wk) + &l.bk;
            let v = x.dot(&l.wv) + &l.bv;
            let mut o = Array2::zeros((n, d));
            let mut attn = Vec::with_capacity(self.config.n_heads);
            for h in 0..self.config.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows_masked(&mut a, &key_mask);
                o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
                attn.push(a);
            }
            let r1 = &x + &(o.dot(&l.wo) + &l.bo);
            let (x1, ln1) = layer_norm(&r1, &l.ln1_gamma, &l.ln1_beta);
            let h = x1.dot(&l.w1) + &l.b1;
            let g = h.mapv(gelu);
            let r2 = &x1 + &(g.dot(&l.w2) + &l.b2);
            let (x2, ln2) = layer_norm(&r2, &l.ln2_gamma, &l.ln2_beta);
            caches.push(LayerCache {
                x: std::mem::replace(&mut x, x2),
                q,
                k,
                v,
                attn,
                o,
                ln1,
                x1,
                h,
                g,
                ln2,
            });
        }
        (
            x,
            ForwardCache {
                ids: ids.to_vec(),
                layers: caches,
            },
        )
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: Array2<f64>, grads: &mut EncoderParams) {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dx = d_out;
        for ((l, c), gl) in self
            .params
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            let dr2 = layer_norm_backward(&dx, &c.ln2, &l.ln2_gamma, &mut gl.ln2_gamma, &mut gl.ln2_beta);
            gl.w2 += &c.g.t().dot(&dr2);
            gl.b2 += &dr2.sum_axis(Axis(0));
            let mut dh_pre = dr2.dot(&l.w2.t());
            ndarray::Zip::from(&mut dh_pre)
                .and(&c.h)
                .for_each(|g, &h| *g *= gelu_grad(h));
            gl.w1 += &c.x1.t().dot(&dh_pre);
            gl.b1 += &dh_pre.sum_axis(Axis(0));
            let dx1 = dr2 + dh_pre.dot(&l.w1.t());

            let dr1 = layer_norm_backward(&dx1, &c.ln1, &l.ln1_gamma, &mut gl.ln1_gamma, &mut gl.ln1_beta);
            gl.wo += &c.o.t().dot(&dr1);
            gl.bo += &dr1.sum_axis(Axis(0));
            let d_o = dr1.dot(&l.wo.t());
            let mut dq = Array2::zeros(c.q.raw_dim());
            let mut dk = Array2::zeros(c.k.raw_dim());
            let mut dv = Array2::zeros(c.v.raw_dim());
            for (h, a) in c.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let d_oh = d_o.slice(cols);
                let da = d_oh.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&d_oh));
                let row_dot = (&da * a).sum_axis(Axis(1));
                let ds = (da - &row_dot.insert_axis(Axis(1))) * a * scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            gl.wq += &c.x.t().dot(&dq);
            gl.bq += &dq.sum_axis(Axis(0));
            gl.wk += &c.x.t().dot(&dk);
            gl.bk += &dk.sum_axis(Axis(0));
            gl.wv += &c.x.t().dot(&dv);
            gl.bv += &dv.sum_axis(Axis(0));
            dx = dr1 + dq.dot(&l.wq.t()) + dk.dot(&l.wk.t()) + dv.dot(&l.wv.t());
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            let row = dx.row(i);
            let mut t = grads.tok_emb.row_mut(id as usize);
            t += &row;
            let mut pe = grads.pos_emb.row_mut(i);
            pe += &row;
        }
    }

    /// `[CLS] + tokens`, truncated to `max_len`.
    pub fn query_ids(&self, vocab: &Vocab, query: &str) -> Vec<u32> {
        let mut ids = vec![CLS];
        ids.extend(vocab.encode(query));
        ids.truncate(self.config.max_len);
        ids
    }

    /// Hidden vector at the CLS position. Padding is never materialized:
    /// with key masking, padded positions cannot influence real ones.
    pub fn embed_query(&self, vocab: &Vocab, query: &str) -> Array1<f64> {
        let ids = self.query_ids(vocab, query);
        let mask = vec![1u8; ids.len()];
        self.forward_cached(&ids, &mask).0.row(0).to_owned()
    }

    pub(crate) fn embed_ids_cached(&self, ids: &[u32]) -> (Array1<f64>, ForwardCache) {
        let mask = vec![1u8; ids.len()];
        let (h, cache) = self.forward_cached(ids, &mask);
        (h.row(0).to_owned(), cache)
    }

    /// Backpropagates a gradient on the CLS vector of a sequence of `len` tokens.
    pub(crate) fn backward_cls(&self, cache: &ForwardCache, d_cls: &Array1<f64>, grads: &mut EncoderParams) {
        let mut d_out = Array2::zeros((cache.ids.len(), self.config.d_model));
        d_out.row_mut(0).assign(d_cls);
        self.backward(cache, d_out, grads);
    }

    fn check_batch(&self, batch: &MlmBatch) -> Result<()> {
        if batch.num_masked() == 0 {
            return Err(Error::InvalidArgument("batch has no masked positions".into()));
        }
        for b in &batch.blocks {
            self.check_input(&b.input_ids, &b.attention_mask)?;
        }
        Ok(())
    }

    /// Mean cross-entropy over masked positions.
    pub fn mlm_loss(&self, batch: &MlmBatch) -> Result<f64> {
        self.check_batch(batch)?;
        Ok(self.mlm_pass(batch, None))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn mlm_loss_and_grad(&self, batch: &MlmBatch) -> Result<(f64, EncoderParams)> {
        self.check_batch(batch)?;
        let mut grads = EncoderParams::zeros(&self.config);
        let loss = self.mlm_pass(batch, Some(&mut grads));
        Ok((loss, grads))
    }

    fn mlm_pass(&self, batch: &MlmBatch, mut grads: Option<&mut EncoderParams>) -> f64 {
        let total = batch.num_masked() as f64;
        let emb = &self.params.tok_emb;
        let mut loss = 0.0;
        for b in &batch.blocks {
            if b.targets.is_empty() {
                continue;
            }
            let (hidden, cache) = self.forward_cached(&b.input_ids, &b.attention_mask);
            let positions: Vec<usize> = b.targets.iter().map(|t| t.0).collect();
            let hm = hidden.select(Axis(0), &positions);
            let mut logits = hm.dot(&emb.t()) + &self.params.mlm_bias;
            for (mut row, &(_, target)) in logits.rows_mut().into_iter().zip(&b.targets) {
                let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
                loss -= row[target as usize].max(f64::MIN_POSITIVE).ln();
                if grads.is_some() {
                    row[target as usize] -= 1.0;
                    row /= total;
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                // logits now hold d loss / d logits.
                let dlogits = logits;
                g.tok_emb += &dlogits.t().dot(&hm);
                g.mlm_bias += &dlogits.sum_axis(Axis(0));
                let dhm = dlogits.dot(emb);
                let mut d_hidden = Array2::zeros(hidden.raw_dim());
                for (r, &pos) in positions.iter().enumerate() {
                    let mut row = d_hidden.row_mut(pos);
                    row += &dhm.row(r);
                }
                self.backward(&cache, d_hidden, g);
            }
        }
        loss / total
    }

    /// `exp(mean masked cross-entropy)` under a fixed masking seed.
    pub fn perplexity(&self, blocks: &[TokenBlock]) -> Result<f64> {
        let batch = mask_batch(
            blocks,
            self.config.mask_probability,
            self.config.vocab_size,
            EVAL_MASK_SEED,
        )?;
        Ok(self.mlm_loss(&batch)?.exp())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 12,
            lr: 2e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Validation perplexity before training (index 0) and after each epoch.
    pub val_perplexity: Vec<f64>,
    pub train_loss: Vec<f64>,
}

/// Deterministic shuffle-and-cut of blocks into (train, validation).
pub fn split_blocks(blocks: &[TokenBlock], val_fraction: f64, seed: u64) -> (Vec<TokenBlock>, Vec<TokenBlock>) {
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * blocks.len() as f64).round() as usize)
        .max(usize::from(blocks.len() > 1 && val_fraction > 0.0))
        .min(blocks.len().saturating_sub(1));
    let val = order[..n_val].iter().map(|&i| blocks[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| blocks[i].clone()).collect();
    (train, val)
}

/// Masked language model training with Adam. Single-threaded and
/// deterministic for a fixed seed.
pub fn pretrain(
    mut state: EncoderState,
    train: &[TokenBlock],
    val: &[TokenBlock],
    cfg: &PretrainConfig,
) -> Result<(EncoderState, PretrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "pretraining needs non-empty train and validation blocks".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::InvalidArgument("batch_size and lr must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut report = PretrainReport {
        val_perplexity: vec![state.perplexity(val)?],
        train_loss: Vec::new(),
    };
    log::info!("epoch 0: val perplexity {:.3}", report.val_perplexity[0]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let blocks: Vec<TokenBlock> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = mask_batch(
                &blocks,
                state.config.mask_probability,
                state.config.vocab_size,
                rng.random(),
            )?;
            let (loss, grads) = state.mlm_loss_and_grad(&batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            opt.update(&mut state.params, &grads);
            epoch_loss += loss;
            steps += 1;
        }
        let ppl = state.perplexity(val)?;
        if !ppl.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: steps });
        }
        log::info!(
            "epoch {epoch}: train loss {:.4}, val perplexity {ppl:.3}",
            epoch_loss / steps as f64
        );
        report.train_loss.push(epoch_loss / steps as f64);
        report.val_perplexity.push(ppl);
    }
    Ok((state, report))
}
