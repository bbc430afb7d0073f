//! Training data assembly.
//!
//! Click logs are aggregated per (query, document); each pair gets the log of
//! its click ratio against the most clicked document of the same query, which
//! is then mapped to a training weight in `[w_min, 1]`. Four sources
//! (behavioral clicks, curated documents, explicit-NER queries and a
//! product's top queries) are merged into one multi-label dataset and split
//! by query.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, Catalog};
use crate::{Error, Result};

pub const DEFAULT_W_MIN: f64 = 0.05;
pub const DEFAULT_TEST_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub query: String,
    pub document_id: String,
    pub product_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDocAggregate {
    pub query: String,
    pub document_id: String,
    pub product_id: String,
    pub clicks: u64,
    /// `ln(clicks / max clicks for the query)`, always `<= 0`.
    pub raw_log_ratio: f64,
    pub relevance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Behavioral,
    CuratedDocs,
    NerExplicit,
    ProductTopQueries,
}

impl Source {
    /// Provenance priority when several sources contribute to one query.
    fn priority(self) -> u8 {
        match self {
            Source::CuratedDocs => 3,
            Source::NerExplicit => 2,
            Source::ProductTopQueries => 1,
            Source::Behavioral => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub labels: BTreeMap<String, f64>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedDoc {
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub product_id: String,
}

/// Top in-product queries of one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopQueries {
    pub product_id: String,
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledQuery>,
    pub validation: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: DEFAULT_TEST_FRACTION,
            validation_fraction: 0.10,
            seed: 0,
        }
    }
}

/// Sums clicks per (normalized query, document) and computes each pair's log
/// click ratio. Rows with an unknown product, zero count or empty query are
/// skipped with a warning. Output is sorted by (query, document).
pub fn aggregate_clicks<I>(events: I, catalog: &Catalog) -> Vec<QueryDocAggregate>
where
    I: IntoIterator<Item = ClickEvent>,
{
    let mut pairs: BTreeMap<(String, String), (String, u64)> = BTreeMap::new();
    for ev in events {
        if !catalog.contains(&ev.product_id) {
            log::warn!(
                "skipping click row for {:?}: unknown product {:?}",
                ev.query,
                ev.product_id
            );
            continue;
        }
        if ev.count == 0 {
            log::warn!("skipping click row for {:?}: zero count", ev.query);
            continue;
        }
        let query = normalize(&ev.query);
        if query.is_empty() {
            log::warn!("skipping click row with empty query");
            continue;
        }
        let entry = pairs
            .entry((query, ev.document_id.clone()))
            .or_insert_with(|| (ev.product_id.clone(), 0));
        if entry.0 != ev.product_id {
            log::warn!(
                "document {:?} seen with products {:?} and {:?}; keeping the first",
                ev.document_id,
                entry.0,
                ev.product_id
            );
        }
        entry.1 += ev.count;
    }

    let mut max_clicks: HashMap<&str, u64> = HashMap::new();
    for ((q, _), (_, c)) in &pairs {
        let m = max_clicks.entry(q.as_str()).or_insert(0);
        *m = (*m).max(*c);
    }

    pairs
        .iter()
        .map(|((q, d), (p, c))| {
            let max = max_clicks[q.as_str()];
            let raw_log_ratio = if *c == max { 0.0 } else { (*c as f64 / max as f64).ln() };
            QueryDocAggregate {
                query: q.clone(),
                document_id: d.clone(),
                product_id: p.clone(),
                clicks: *c,
                raw_log_ratio,
                relevance: f64::NAN,
            }
        })
        .collect()
}

/// Maps a log click ratio to a training weight:
/// `clamp(1 + log10(ratio), w_min, 1)`.
pub fn relevance_weight(raw_log_ratio: f64, w_min: f64) -> Result<f64> {
    if !(w_min > 0.0 && w_min < 1.0) {
        return Err(Error::InvalidArgument(format!("w_min must lie in (0, 1), got {w_min}")));
    }
    if raw_log_ratio.is_nan() || raw_log_ratio > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "log click ratio must be <= 0, got {raw_log_ratio}"
        )));
    }
    let w = 1.0 + raw_log_ratio / std::f64::consts::LN_10;
    Ok(w.clamp(w_min, 1.0))
}

/// Fills in `relevance` on each aggregate.
pub fn apply_relevance(aggregates: &mut [QueryDocAggregate], w_min: f64) -> Result<()> {
    for a in aggregates {
        a.relevance = relevance_weight(a.raw_log_ratio, w_min)?;
    }
    Ok(())
}

/// One row per query; each product's weight is the best relevance among its
/// clicked documents for that query.
pub fn build_behavioral(aggregates: &[QueryDocAggregate], w_min: f64) -> Result<Vec<LabeledQuery>> {
    let mut by_query: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for a in aggregates {
        let w = relevance_weight(a.raw_log_ratio, w_min)?;
        let slot = by_query
            .entry(a.query.as_str())
            .or_default()
            .entry(a.product_id.clone())
            .or_insert(0.0);
        *slot = slot.max(w);
    }
    Ok(by_query
        .into_iter()
        .map(|(q, labels)| LabeledQuery {
            query: q.to_string(),
            labels,
            source: Source::Behavioral,
        })
        .collect())
}

fn single(query: String, product_id: &str, source: Source) -> LabeledQuery {
    LabeledQuery {
        query,
        labels: BTreeMap::from([(product_id.to_string(), 1.0)]),
        source,
    }
}

/// Titles and descriptions of curated documents as weight-1 examples.
pub fn build_curated(docs: &[CuratedDoc], catalog: &Catalog) -> Vec<LabeledQuery> {
    let mut out = Vec::new();
    for doc in docs {
        if !catalog.contains(&doc.product_id) {
            log::warn!(
                "skipping curated doc {:?}: unknown product {:?}",
                doc.title,
                doc.product_id
            );
            continue;
        }
        for text in [&doc.title, &doc.description] {
            let q = normalize(text);
            if !q.is_empty() {
                out.push(single(q, &doc.product_id, Source::CuratedDocs));
            }
        }
    }
    out
}

/// Queries that name at least one product, labeled with every named product.
pub fn build_ner_explicit<S: AsRef<str>>(queries: &[S], catalog: &Catalog) -> Vec<LabeledQuery> {
    queries
        .iter()
        .filter_map(|q| {
            let products = catalog.explicit_products(q.as_ref());
            if products.is_empty() {
                return None;
            }
            Some(LabeledQuery {
                query: normalize(q.as_ref()),
                labels: products.into_iter().map(|p| (p, 1.0)).collect(),
                source: Source::NerExplicit,
            })
        })
        .collect()
}

/// A product's own top queries, each labeled with that product alone.
pub fn build_top_queries<S: AsRef<str>>(
    queries: &[S],
    product_id: &str,
    catalog: &Catalog,
) -> Result<Vec<LabeledQuery>> {
    if !catalog.contains(product_id) {
        return Err(Error::UnknownProduct(product_id.to_string()));
    }
    Ok(queries
        .iter()
        .map(|q| normalize(q.as_ref()))
        .filter(|q| !q.is_empty())
        .map(|q| single(q, product_id, Source::ProductTopQueries))
        .collect())
}

/// Groups by normalized query, unions label maps keeping the max weight per
/// product. Output is sorted by query.
pub fn merge_sources<I>(sources: I) -> Vec<LabeledQuery>
where
    I: IntoIterator<Item = Vec<LabeledQuery>>,
{
    let mut merged: BTreeMap<String, LabeledQuery> = BTreeMap::new();
    for row in sources.into_iter().flatten() {
        let key = normalize(&row.query);
        match merged.get_mut(&key) {
            Some(existing) => {
                for (p, w) in row.labels {
                    let slot = existing.labels.entry(p).or_insert(w);
                    *slot = slot.max(w);
                }
                if row.source.priority() > existing.source.priority() {
                    existing.source = row.source;
                }
            }
            None => {
                merged.insert(
                    key.clone(),
                    LabeledQuery {
                        query: key,
                        labels: row.labels,
                        source: row.source,
                    },
                );
            }
        }
    }
    merged.into_values().collect()
}

/// Deterministic query-level split. Counts are `round(fraction * n_queries)`.
pub fn split_dataset(data: &[LabeledQuery], cfg: SplitConfig) -> Result<DatasetSplit> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    if !(cfg.validation_fraction >= 0.0 && cfg.test_fraction + cfg.validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation_fraction {} invalid with test_fraction {}",
            cfg.validation_fraction, cfg.test_fraction
        )));
    }
    // Duplicate query strings are merged first so no query straddles splits.
    let unique = merge_sources([data.to_vec()]);
    let n = unique.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let n_val = ((cfg.validation_fraction * n as f64).round() as usize).min(n - n_test);

    let mut split = DatasetSplit {
        seed: cfg.seed,
        ..Default::default()
    };
    for (rank, &i) in order.iter().enumerate() {
        let row = unique[i].clone();
        if rank < n_test {
            split.test.push(row);
        } else if rank < n_test + n_val {
            split.validation.push(row);
        } else {
            split.train.push(row);
        }
    }
    for part in [&mut split.train, &mut split.validation, &mut split.test] {
        part.sort_by(|a, b| a.query.cmp(&b.query));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Product;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn catalog() -> Catalog {
        let p = |id: &str, alias: &str| Product {
            id: id.into(),
            display_name: id.into(),
            aliases: vec![alias.into()],
        };
        Catalog::new(vec![p("ps", "photoshop"), p("pr", "premiere"), p("ai", "illustrator")]).unwrap()
    }

    fn click(q: &str, d: &str, p: &str, n: u64) -> ClickEvent {
        ClickEvent {
            query: q.into(),
            document_id: d.into(),
            product_id: p.into(),
            count: n,
        }
    }

    fn lq(q: &str, labels: &[(&str, f64)], source: Source) -> LabeledQuery {
        LabeledQuery {
            query: q.into(),
            labels: labels.iter().map(|(p, w)| (p.to_string(), *w)).collect(),
            source,
        }
    }

    #[test]
    fn single_event_is_its_own_max() {
        let agg = aggregate_clicks([click("q", "d", "ps", 7)], &catalog());
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].raw_log_ratio, 0.0);
    }

    #[test]
    fn log_ratio_against_query_max() {
        let agg = aggregate_clicks([click("q", "d1", "ps", 29), click("q", "d2", "ps", 5)], &catalog());
        let d2 = agg.iter().find(|a| a.document_id == "d2").unwrap();
        assert_abs_diff_eq!(d2.raw_log_ratio, (5.0f64 / 29.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(d2.raw_log_ratio, -1.758, epsilon = 1e-3);
    }

    #[test]
    fn repeated_events_sum_and_queries_are_independent() {
        let agg = aggregate_clicks(
            [
                click("q1", "d1", "ps", 3),
                click("Q1!", "d1", "ps", 3),
                click("q1", "d2", "ps", 2),
                click("q2", "d3", "pr", 100),
                click("q2", "d4", "pr", 10),
            ],
            &catalog(),
        );
        let get = |q: &str, d: &str| agg.iter().find(|a| a.query == q && a.document_id == d).unwrap();
        assert_eq!(get("q1", "d1").clicks, 6);
        assert_abs_diff_eq!(get("q1", "d2").raw_log_ratio, (2.0f64 / 6.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(get("q2", "d4").raw_log_ratio, (0.1f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn unknown_product_rows_are_dropped() {
        let agg = aggregate_clicks([click("q", "d1", "ps", 2), click("q", "d2", "zz", 50)], &catalog());
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].raw_log_ratio, 0.0);
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(relevance_weight(0.0, 0.05).unwrap(), 1.0);
        let w = relevance_weight((5.0f64 / 29.0).ln(), 0.05).unwrap();
        assert_abs_diff_eq!(w, 0.2366, epsilon = 1e-4);
        assert_eq!(relevance_weight((1e-6f64).ln(), 0.05).unwrap(), 0.05);
        assert!(relevance_weight(0.1, 0.05).is_err());
        assert!(relevance_weight(-1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn relevance_is_bounded_and_monotone(a in 1e-9f64..=1.0, b in 1e-9f64..=1.0, w_min in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let wl = relevance_weight(lo.ln(), w_min).unwrap();
            let wh = relevance_weight(hi.ln(), w_min).unwrap();
            prop_assert!(wl <= wh);
            prop_assert!((w_min..=1.0).contains(&wl));
            prop_assert!((w_min..=1.0).contains(&wh));
        }

        #[test]
        fn only_argmax_docs_have_zero_ratio(counts in proptest::collection::vec(1u64..50, 1..8)) {
            let events: Vec<_> = counts.iter().enumerate()
                .map(|(i, &c)| click("q", &format!("d{i}"), "ps", c)).collect();
            let max = *counts.iter().max().unwrap();
            for a in aggregate_clicks(events, &catalog()) {
                prop_assert!(a.raw_log_ratio <= 0.0);
                prop_assert_eq!(a.raw_log_ratio == 0.0, a.clicks == max);
            }
        }
    }

    fn agg(q: &str, d: &str, p: &str, ratio: f64) -> QueryDocAggregate {
        QueryDocAggregate {
            query: q.into(),
            document_id: d.into(),
            product_id: p.into(),
            clicks: 1,
            raw_log_ratio: ratio.ln(),
            relevance: f64::NAN,
        }
    }

    #[test]
    fn behavioral_takes_max_per_product() {
        // Oracle: enumerate the rows of each product and keep the largest weight.
        let rows = vec![
            agg("q", "d1", "ps", 10f64.powf(-0.2)),
            agg("q", "d2", "ps", 10f64.powf(-0.7)),
        ];
        let out = build_behavioral(&rows, 0.05).unwrap();
        let oracle = rows
            .iter()
            .map(|r| relevance_weight(r.raw_log_ratio, 0.05).unwrap())
            .fold(f64::MIN, f64::max);
        assert_eq!(out.len(), 1);
        assert_abs_diff_eq!(out[0].labels["ps"], oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].labels["ps"], 0.8, epsilon = 1e-12);
        assert_eq!(out[0].source, Source::Behavioral);

        let out = build_behavioral(
            &[agg("q", "d1", "ps", 1.0), agg("q", "d2", "pr", 10f64.powf(-0.6))],
            0.05,
        )
        .unwrap();
        assert_eq!(out[0].labels.len(), 2);
        assert_eq!(out[0].labels["ps"], 1.0);
        assert_abs_diff_eq!(out[0].labels["pr"], 0.4, epsilon = 1e-12);

        let out = build_behavioral(&[agg("solo", "d", "ai", 1.0)], 0.05).unwrap();
        assert_eq!(out[0].labels, BTreeMap::from([("ai".to_string(), 1.0)]));
    }

    #[test]
    fn curated_rows() {
        let cat = catalog();
        let out = build_curated(
            &[CuratedDoc {
                title: "Crop photos".into(),
                description: "How to crop".into(),
                product_id: "ps".into(),
            }],
            &cat,
        );
        assert_eq!(out.len(), 2);
        assert!(out
            .iter()
            .all(|r| r.labels["ps"] == 1.0 && r.source == Source::CuratedDocs));

        let out = build_curated(
            &[CuratedDoc {
                title: "Crop photos".into(),
                description: String::new(),
                product_id: "ps".into(),
            }],
            &cat,
        );
        assert_eq!(out.len(), 1);

        let docs = [
            CuratedDoc {
                title: "Trim clips".into(),
                description: String::new(),
                product_id: "pr".into(),
            },
            CuratedDoc {
                title: "Trim clips".into(),
                description: String::new(),
                product_id: "ps".into(),
            },
        ];
        let rows = build_curated(&docs, &cat);
        assert_eq!(rows.len(), 2);
        let merged = merge_sources([rows]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].labels.len(), 2);
    }

    #[test]
    fn ner_and_top_queries() {
        let cat = catalog();
        let out = build_ner_explicit(&["photoshop and premiere tips", "edit video"], &cat);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].labels.len(), 2);
        assert_eq!(out[0].source, Source::NerExplicit);

        let top = build_top_queries(&["make a flyer", "Resize!"], "ai", &cat).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[1].query, "resize");
        assert!(build_top_queries(&["x"], "nope", &cat).is_err());
    }

    #[test]
    fn merge_rules() {
        let m = merge_sources([
            vec![lq("q", &[("ps", 0.24)], Source::Behavioral)],
            vec![lq("q", &[("ps", 1.0)], Source::NerExplicit)],
        ]);
        assert_eq!(m, vec![lq("q", &[("ps", 1.0)], Source::NerExplicit)]);

        let m = merge_sources([
            vec![lq("q", &[("ps", 0.24)], Source::Behavioral)],
            vec![lq("q", &[("ai", 1.0)], Source::CuratedDocs)],
        ]);
        assert_eq!(m, vec![lq("q", &[("ai", 1.0), ("ps", 0.24)], Source::CuratedDocs)]);

        let m = merge_sources([
            vec![lq("a", &[("ps", 0.5)], Source::Behavioral)],
            vec![lq("b", &[("ai", 1.0)], Source::CuratedDocs)],
        ]);
        assert_eq!(m.len(), 2);
    }

    proptest! {
        #[test]
        fn merge_is_idempotent_and_order_independent(
            rows in proptest::collection::vec(
                (0usize..5, 0usize..3, 0.01f64..=1.0, 0usize..4), 0..20)
        ) {
            let sources = [Source::Behavioral, Source::CuratedDocs, Source::NerExplicit, Source::ProductTopQueries];
            let products = ["ps", "pr", "ai"];
            let data: Vec<_> = rows.iter()
                .map(|&(q, p, w, s)| lq(&format!("q{q}"), &[(products[p], w)], sources[s]))
                .collect();
            let once = merge_sources([data.clone()]);
            prop_assert_eq!(&merge_sources([once.clone(), vec![]]), &once);
            let mut rev = data.clone();
            rev.reverse();
            let strip = |v: Vec<LabeledQuery>| v.into_iter().map(|r| (r.query, r.labels)).collect::<Vec<_>>();
            prop_assert_eq!(strip(merge_sources([rev])), strip(once));
        }

        #[test]
        fn split_is_disjoint_and_sized(n in 1usize..200, frac in 0.05f64..0.5, seed in 0u64..1000) {
            let data: Vec<_> = (0..n).map(|i| lq(&format!("query {i}"), &[("ps", 1.0)], Source::Behavioral)).collect();
            let s = split_dataset(&data, SplitConfig { test_fraction: frac, validation_fraction: 0.1, seed }).unwrap();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
            prop_assert!((s.test.len() as f64 - frac * n as f64).abs() <= 1.0);
            let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| &r.query).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn split_is_deterministic_and_validates() {
        let data: Vec<_> = (0..50)
            .map(|i| lq(&format!("q{i}"), &[("ps", 1.0)], Source::Behavioral))
            .collect();
        let cfg = SplitConfig {
            seed: 9,
            ..Default::default()
        };
        let a = split_dataset(&data, cfg).unwrap();
        let b = split_dataset(&data, cfg).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.test.len(), 5);
        assert!(split_dataset(
            &data,
            SplitConfig {
                test_fraction: 0.0,
                ..cfg
            }
        )
        .is_err());
        assert!(split_dataset(
            &data,
            SplitConfig {
                test_fraction: 1.0,
                ..cfg
            }
        )
        .is_err());
    }
}
