//! Synthetic catalog, corpus, click log and query sets with planted truth.
//!
//! Every product owns a set of exclusive keywords. Documents about a product
//! mix its keywords with shared filler words; implicit queries use keywords
//! only, explicit queries name the product. Keyword frequency in queries is
//! Zipf-skewed while documents use keywords uniformly, so the rare tail is
//! learnable from the corpus but thinly covered by labeled queries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, Catalog, Product};
use crate::data_pipeline::{ClickEvent, CuratedDoc, TopQueries};
use crate::io;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_products: usize,
    pub keywords_per_product: usize,
    /// Number of shared filler words.
    pub vocabulary_size: usize,
    pub n_documents: usize,
    pub n_behavioral_queries: usize,
    pub implicit_fraction: f64,
    /// Probability that a click lands on a wrong product's document.
    pub epsilon: f64,
    pub multi_fraction: f64,
    /// Zipf exponent of keyword choice inside queries.
    pub keyword_zipf: f64,
    pub curated_per_product: usize,
    pub n_ner_queries: usize,
    pub n_top_queries: usize,
    pub n_log_queries: usize,
    pub log_implicit_fraction: f64,
    pub log_no_intent_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_products: 10,
            keywords_per_product: 64,
            vocabulary_size: 60,
            n_documents: 2500,
            n_behavioral_queries: 6000,
            implicit_fraction: 0.5,
            epsilon: 0.1,
            multi_fraction: 0.1,
            keyword_zipf: 1.2,
            curated_per_product: 2,
            n_ner_queries: 200,
            n_top_queries: 40,
            n_log_queries: 600,
            log_implicit_fraction: 0.6,
            log_no_intent_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth spec: {m}")));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_products < 2 {
            return bad("need at least 2 products");
        }
        if self.keywords_per_product < 2 {
            return bad("every product needs at least 2 exclusive keywords");
        }
        if self.vocabulary_size < 3 {
            return bad("vocabulary_size must be at least 3");
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 0.5)");
        }
        if !unit(self.implicit_fraction) || !unit(self.multi_fraction) || !unit(self.log_implicit_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if !unit(self.log_no_intent_fraction) {
            return bad("log_no_intent_fraction must lie in [0, 1]");
        }
        if self.n_documents < self.n_products {
            return bad("need at least one document per product");
        }
        if self.curated_per_product > self.n_documents / self.n_products {
            return bad("curated_per_product exceeds documents per product");
        }
        if self.keyword_zipf.is_nan() || self.keyword_zipf < 0.0 {
            return bad("keyword_zipf must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Explicit,
    Implicit,
    NoIntent,
}

/// A held-out query log row. `products` is the planted truth and doubles as
/// the engagement annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub query: String,
    pub kind: QueryKind,
    pub products: Vec<String>,
}

/// Normalized query → true product set.
pub type GroundTruth = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub catalog: Catalog,
    /// Keywords per product, in catalog order; index 0 is the most frequent
    /// in queries.
    pub keywords: Vec<Vec<String>>,
    pub fillers: Vec<String>,
    /// A common word that is also an alias of the last product.
    pub ambiguous_alias: String,
    /// One document per line.
    pub corpus: Vec<String>,
    pub curated: Vec<CuratedDoc>,
    pub clicks: Vec<ClickEvent>,
    pub behavioral: Vec<LogEntry>,
    pub ner_queries: Vec<String>,
    pub top_queries: TopQueries,
    pub query_log: Vec<LogEntry>,
    pub ground_truth: GroundTruth,
}

pub mod files {
    pub const SPEC: &str = "synth_spec.json";
    pub const CATALOG: &str = "catalog.json";
    pub const CORPUS: &str = "corpus.txt";
    pub const CURATED: &str = "curated_docs.jsonl";
    pub const CLICKS: &str = "clicks.jsonl";
    pub const NER_QUERIES: &str = "ner_queries.txt";
    pub const TOP_QUERIES: &str = "top_queries.json";
    pub const QUERY_LOG: &str = "query_log.jsonl";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
}

const FILLERS: &[&str] = &[
    "how", "to", "make", "my", "the", "a", "for", "with", "in", "on", "best", "new", "free", "easy", "quick", "way",
    "fix", "help", "using", "from", "online", "tips", "guide", "simple", "create", "change", "add", "get", "use",
    "find", "good", "without", "into", "more", "your", "and", "of", "is", "can", "i", "do", "what", "top", "fast",
    "better", "step", "tutorial", "ideas", "examples", "basic", "advanced", "project", "work", "share", "save", "open",
    "show", "set", "great", "nice", "first", "next", "last", "small", "big", "long", "short", "old", "high", "low",
];

const AMBIGUOUS_WORD: &str = "canvas";

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr", "pl", "gl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "x", "l", "s"];

fn pseudo_word<R: Rng>(rng: &mut R, taken: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    names: Vec<String>,
    keywords: Vec<Vec<String>>,
    fillers: Vec<String>,
    keyword_dist: WeightedIndex<f64>,
    doc_ids: Vec<Vec<String>>,
    /// Zipf shares over 1, 2 and 3 relevant documents.
    doc_dist: Vec<WeightedIndex<f64>>,
}

impl Generator<'_> {
    fn keyword(&mut self, p: usize) -> String {
        let i = self.keyword_dist.sample(&mut self.rng);
        self.keywords[p][i].clone()
    }

    fn filler(&mut self) -> String {
        self.fillers.choose(&mut self.rng).unwrap().clone()
    }

    fn pick_products(&mut self, multi: bool) -> Vec<usize> {
        let n = self.spec.n_products;
        let a = self.rng.random_range(0..n);
        if !multi {
            return vec![a];
        }
        let mut b = self.rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        vec![a, b]
    }

    /// A query about `products`, with or without naming them.
    fn query(&mut self, products: &[usize], explicit: bool) -> String {
        let mut words = Vec::new();
        let per_product_keywords = if products.len() > 1 { 1..=1 } else { 1..=3 };
        for &p in products {
            if explicit {
                words.push(self.names[p].clone());
                for _ in 0..self.rng.random_range(0..=1) {
                    words.push(self.keyword(p));
                }
            } else {
                for _ in 0..self.rng.random_range(per_product_keywords.clone()) {
                    words.push(self.keyword(p));
                }
            }
        }
        for _ in 0..self.rng.random_range(0..=2) {
            words.push(self.filler());
        }
        words.shuffle(&mut self.rng);
        words.dedup();
        words.join(" ")
    }

    fn intent_query(&mut self, implicit_fraction: f64) -> LogEntry {
        let multi = self.rng.random_bool(self.spec.multi_fraction);
        let products = self.pick_products(multi);
        let implicit = self.rng.random_bool(implicit_fraction);
        LogEntry {
            query: self.query(&products, !implicit),
            kind: if implicit {
                QueryKind::Implicit
            } else {
                QueryKind::Explicit
            },
            products: products.iter().map(|&p| self.names[p].clone()).collect(),
        }
    }

    fn no_intent_query(&mut self) -> LogEntry {
        let mut words: Vec<String> = (0..self.rng.random_range(2..=4)).map(|_| self.filler()).collect();
        if self.rng.random_bool(0.2) {
            words.push(AMBIGUOUS_WORD.into());
        }
        words.dedup();
        LogEntry {
            query: words.join(" "),
            kind: QueryKind::NoIntent,
            products: Vec::new(),
        }
    }

    fn document(&mut self, p: usize) -> (String, String) {
        let kws = &self.keywords[p];
        let mut title = vec![self.names[p].clone()];
        for _ in 0..2 {
            title.push(kws.choose(&mut self.rng).unwrap().clone());
        }
        let n_kw = self.rng.random_range(4..=7);
        let n_fill = self.rng.random_range(4..=9);
        let mut desc: Vec<String> = (0..n_kw).map(|_| kws.choose(&mut self.rng).unwrap().clone()).collect();
        for _ in 0..n_fill {
            let f = self.filler();
            desc.push(f);
        }
        if self.rng.random_bool(0.5) {
            desc.push(self.names[p].clone());
        }
        if self.rng.random_bool(0.3) {
            desc.push(AMBIGUOUS_WORD.into());
        }
        desc.shuffle(&mut self.rng);
        (title.join(" "), desc.join(" "))
    }

    /// Click counts per document for one query. Each true product gets one
    /// to three relevant documents with Zipf-decaying shares; with
    /// probability epsilon a click strays to a random wrong-product document.
    fn clicks_for(&mut self, truth: &[usize]) -> BTreeMap<String, u64> {
        let total = self.rng.random_range(20..=60);
        let n = self.spec.n_products;
        let relevant: Vec<Vec<usize>> = truth
            .iter()
            .map(|&p| {
                let k = self.rng.random_range(1..=3).min(self.doc_ids[p].len());
                rand::seq::index::sample(&mut self.rng, self.doc_ids[p].len(), k).into_vec()
            })
            .collect();
        let mut counts = BTreeMap::new();
        for _ in 0..total {
            let product = if self.rng.random_bool(self.spec.epsilon) {
                loop {
                    let q = self.rng.random_range(0..n);
                    if !truth.contains(&q) {
                        break q;
                    }
                }
            } else {
                *truth.choose(&mut self.rng).unwrap()
            };
            let d = if let Some(t) = truth.iter().position(|&p| p == product) {
                let docs = &relevant[t];
                docs[self.doc_dist[docs.len() - 1].sample(&mut self.rng)]
            } else {
                self.rng.random_range(0..self.doc_ids[product].len())
            };
            *counts.entry(self.doc_ids[product][d].clone()).or_insert(0) += 1;
        }
        counts
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken: BTreeSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    taken.insert(AMBIGUOUS_WORD.into());

    let mut fillers: Vec<String> = FILLERS
        .iter()
        .take(spec.vocabulary_size)
        .map(|s| s.to_string())
        .collect();
    while fillers.len() < spec.vocabulary_size {
        fillers.push(pseudo_word(&mut rng, &mut taken));
    }
    let names: Vec<String> = (0..spec.n_products)
        .map(|_| pseudo_word(&mut rng, &mut taken))
        .collect();
    let keywords: Vec<Vec<String>> = (0..spec.n_products)
        .map(|_| {
            (0..spec.keywords_per_product)
                .map(|_| pseudo_word(&mut rng, &mut taken))
                .collect()
        })
        .collect();

    let products: Vec<Product> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut aliases = vec![n.clone()];
            if i + 1 == spec.n_products {
                aliases.push(AMBIGUOUS_WORD.into());
            }
            Product {
                id: n.clone(),
                display_name: capitalize(n),
                aliases,
            }
        })
        .collect();
    let catalog = Catalog::new(products)?;

    let docs_per_product = spec.n_documents / spec.n_products;
    let doc_ids: Vec<Vec<String>> = (0..spec.n_products)
        .map(|p| (0..docs_per_product).map(|j| format!("doc-{p:02}-{j:04}")).collect())
        .collect();
    let zipf = |n: usize, s: f64| WeightedIndex::new((1..=n).map(|k| (k as f64).powf(-s))).expect("positive weights");
    let mut g = Generator {
        spec,
        rng,
        keyword_dist: zipf(spec.keywords_per_product, spec.keyword_zipf),
        doc_dist: (1..=3).map(|k| zipf(k, 1.0)).collect(),
        names,
        keywords,
        fillers,
        doc_ids,
    };

    let mut ground_truth = GroundTruth::new();
    let plant = |gt: &mut GroundTruth, q: &str, products: &[String]| {
        gt.entry(normalize(q)).or_default().extend(products.iter().cloned());
    };

    let mut corpus = Vec::with_capacity(docs_per_product * spec.n_products);
    let mut curated = Vec::new();
    for p in 0..spec.n_products {
        for j in 0..docs_per_product {
            let (title, description) = g.document(p);
            corpus.push(format!("{title} {description}"));
            if j < spec.curated_per_product {
                let id = g.names[p].clone();
                plant(&mut ground_truth, &title, std::slice::from_ref(&id));
                plant(&mut ground_truth, &description, std::slice::from_ref(&id));
                curated.push(CuratedDoc {
                    title,
                    description,
                    product_id: id,
                });
            }
        }
    }

    let mut behavioral = Vec::with_capacity(spec.n_behavioral_queries);
    let mut clicks = Vec::new();
    for _ in 0..spec.n_behavioral_queries {
        let entry = g.intent_query(spec.implicit_fraction);
        let truth: Vec<usize> = entry.products.iter().map(|p| catalog.label_of(p).unwrap()).collect();
        for (doc, count) in g.clicks_for(&truth) {
            let p: usize = doc[4..6].parse().expect("generated id");
            clicks.push(ClickEvent {
                query: entry.query.clone(),
                document_id: doc,
                product_id: g.names[p].clone(),
                count,
            });
        }
        plant(&mut ground_truth, &entry.query, &entry.products);
        behavioral.push(entry);
    }

    let mut ner_queries = Vec::with_capacity(spec.n_ner_queries);
    for _ in 0..spec.n_ner_queries {
        let entry = g.intent_query(0.0);
        plant(&mut ground_truth, &entry.query, &entry.products);
        ner_queries.push(entry.query);
    }

    let top = 0;
    let mut top_list = Vec::with_capacity(spec.n_top_queries);
    for _ in 0..spec.n_top_queries {
        let explicit = g.rng.random_bool(0.5);
        let q = g.query(&[top], explicit);
        plant(&mut ground_truth, &q, std::slice::from_ref(&g.names[top]));
        top_list.push(q);
    }
    let top_queries = TopQueries {
        product_id: g.names[top].clone(),
        queries: top_list,
    };

    let mut query_log = Vec::with_capacity(spec.n_log_queries);
    for _ in 0..spec.n_log_queries {
        let entry = if g.rng.random_bool(spec.log_no_intent_fraction) {
            g.no_intent_query()
        } else {
            g.intent_query(spec.log_implicit_fraction)
        };
        plant(&mut ground_truth, &entry.query, &entry.products);
        query_log.push(entry);
    }

    Ok(SynthData {
        spec: spec.clone(),
        catalog,
        keywords: g.keywords,
        fillers: g.fillers,
        ambiguous_alias: AMBIGUOUS_WORD.into(),
        corpus,
        curated,
        clicks,
        behavioral,
        ner_queries,
        top_queries,
        query_log,
        ground_truth,
    })
}

impl SynthData {
    /// Writes every artifact under `dir` (see [`files`]).
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::write_json(dir.join(files::SPEC), &self.spec)?;
        self.catalog.save(dir.join(files::CATALOG))?;
        io::write_lines(dir.join(files::CORPUS), &self.corpus)?;
        io::write_jsonl(dir.join(files::CURATED), &self.curated)?;
        io::write_jsonl(dir.join(files::CLICKS), &self.clicks)?;
        io::write_lines(dir.join(files::NER_QUERIES), &self.ner_queries)?;
        io::write_json(dir.join(files::TOP_QUERIES), &self.top_queries)?;
        io::write_jsonl(dir.join(files::QUERY_LOG), &self.query_log)?;
        io::write_json(dir.join(files::GROUND_TRUTH), &self.ground_truth)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_pipeline::{aggregate_clicks, build_behavioral};
    use std::collections::HashMap;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_documents: 200,
            n_behavioral_queries: 300,
            n_log_queries: 100,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_argmax_document_is_true_product() {
        let data = generate(&SynthSpec {
            epsilon: 0.0,
            ..small(1)
        })
        .unwrap();
        let mut best: HashMap<String, (u64, String)> = HashMap::new();
        for c in &data.clicks {
            let e = best.entry(c.query.clone()).or_insert((0, String::new()));
            if c.count > e.0 {
                *e = (c.count, c.product_id.clone());
            }
        }
        for (q, (_, p)) in best {
            assert!(data.ground_truth[&normalize(&q)].contains(&p), "{q}");
        }
    }

    #[test]
    fn noiseless_behavioral_labels_agree_with_truth() {
        let data = generate(&SynthSpec {
            epsilon: 0.0,
            ..small(2)
        })
        .unwrap();
        let aggs = aggregate_clicks(data.clicks.iter().cloned(), &data.catalog);
        for row in build_behavioral(&aggs, 0.05).unwrap() {
            let truth = &data.ground_truth[&row.query];
            let top = row.labels.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(truth.contains(top));
            assert!(row.labels.keys().all(|p| truth.contains(p)));
        }
    }

    #[test]
    fn fully_implicit_queries_never_match_the_gazetteer() {
        let data = generate(&SynthSpec {
            implicit_fraction: 1.0,
            ..small(3)
        })
        .unwrap();
        assert!(data.behavioral.iter().all(|e| e.kind == QueryKind::Implicit));
        for e in &data.behavioral {
            assert!(data.catalog.extract_products(&e.query).is_empty(), "{}", e.query);
        }
    }

    #[test]
    fn log_kinds_match_gazetteer_behavior() {
        let data = generate(&small(4)).unwrap();
        for e in &data.query_log {
            let hits = data.catalog.explicit_products(&e.query);
            match e.kind {
                QueryKind::Implicit => assert!(hits.is_empty()),
                QueryKind::Explicit => {
                    let truth: BTreeSet<_> = e.products.iter().cloned().collect();
                    assert_eq!(hits.into_iter().collect::<BTreeSet<_>>(), truth);
                }
                QueryKind::NoIntent => assert!(e.products.is_empty()),
            }
        }
    }

    #[test]
    fn every_generated_query_has_truth() {
        let data = generate(&small(5)).unwrap();
        let queries = data
            .behavioral
            .iter()
            .chain(&data.query_log)
            .map(|e| &e.query)
            .chain(&data.ner_queries)
            .chain(&data.top_queries.queries);
        for q in queries {
            assert!(data.ground_truth.contains_key(&normalize(q)), "{q}");
        }
        for c in &data.clicks {
            assert!(data.ground_truth.contains_key(&normalize(&c.query)));
        }
    }

    #[test]
    fn fixed_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small(7)).unwrap().write_to_dir(a.path()).unwrap();
        generate(&small(7)).unwrap().write_to_dir(b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
        let c = generate(&small(8)).unwrap();
        assert_ne!(c.corpus, generate(&small(7)).unwrap().corpus);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SynthSpec {
                epsilon: 0.5,
                ..Default::default()
            },
            SynthSpec {
                keywords_per_product: 1,
                ..Default::default()
            },
            SynthSpec {
                n_products: 1,
                ..Default::default()
            },
            SynthSpec {
                implicit_fraction: 1.5,
                ..Default::default()
            },
        ] {
            assert!(generate(&spec).is_err());
        }
    }

    /// At default size even the rarest query keyword is common in its
    /// product's documents; the corpus is what teaches the tail.
    #[test]
    fn default_corpus_covers_every_keyword() {
        let data = generate(&SynthSpec::default()).unwrap();
        let per_product = data.corpus.len() / data.spec.n_products;
        for (p, kws) in data.keywords.iter().enumerate() {
            let docs = &data.corpus[p * per_product..(p + 1) * per_product];
            for k in kws {
                let hits = docs.iter().filter(|d| d.split_whitespace().any(|w| w == k)).count();
                assert!(hits >= 5, "{k}: {hits}");
            }
        }
    }

    /// Tf-idf bag-of-words nearest centroid over the corpus separates
    /// implicit single-product queries perfectly. Small corpora need few
    /// keywords so that every keyword reaches a document.
    #[test]
    fn implicit_queries_are_separable() {
        let data = generate(&SynthSpec {
            epsilon: 0.0,
            keywords_per_product: 12,
            ..small(6)
        })
        .unwrap();
        let n = data.spec.n_products;
        let docs_per_product = data.corpus.len() / n;
        let mut tf: Vec<HashMap<&str, f64>> = vec![HashMap::new(); n];
        for (i, doc) in data.corpus.iter().enumerate() {
            for w in doc.split_whitespace() {
                *tf[i / docs_per_product].entry(w).or_default() += 1.0;
            }
        }
        let idf = |w: &str| {
            let df = tf.iter().filter(|c| c.contains_key(w)).count();
            if df == 0 {
                0.0
            } else {
                (n as f64 / df as f64).ln()
            }
        };
        let mut checked = 0;
        for e in data
            .behavioral
            .iter()
            .filter(|e| e.kind == QueryKind::Implicit && e.products.len() == 1)
        {
            let score = |c: &HashMap<&str, f64>| {
                e.query
                    .split_whitespace()
                    .map(|w| c.get(w).copied().unwrap_or(0.0) * idf(w))
                    .sum::<f64>()
            };
            let best = (0..n).max_by(|&a, &b| score(&tf[a]).total_cmp(&score(&tf[b]))).unwrap();
            assert_eq!(data.catalog.product(best).id, e.products[0], "{}", e.query);
            checked += 1;
        }
        assert!(checked > 50);
    }
}
