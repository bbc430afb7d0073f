//! Offline metrics: micro-averaged label-cell metrics, the expert annotation
//! sheet, and surfacing / null-rate comparisons between two card predictors.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::classifier::PredictionVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Number of queries.
    pub rows: usize,
    /// Number of (query, product) cells, `rows * P`.
    pub cells: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(rows: usize, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let cells = tp + fp + fn_ + tn;
        MetricsReport {
            rows,
            cells,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            accuracy: ratio(tp + tn, cells),
            f1,
        }
    }
}

/// Pools every (query, product) cell: a cell is predicted positive when its
/// score is `>= threshold`.
pub fn micro_metrics(predictions: &[PredictionVector], gold: &[BTreeSet<usize>], threshold: f64) -> MetricsReport {
    assert_eq!(predictions.len(), gold.len(), "one gold set per prediction");
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (pred, gold) in predictions.iter().zip(gold) {
        let positives = pred.positives(threshold);
        let hits = positives.intersection(gold).count();
        tp += hits;
        fp += positives.len() - hits;
        fn_ += gold.len() - hits;
        tn += pred.len() - positives.len() - (gold.len() - hits);
    }
    MetricsReport::from_counts(predictions.len(), tp, fp, fn_, tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Unjudged,
}

impl Verdict {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" => Ok(Verdict::Correct),
            "incorrect" => Ok(Verdict::Incorrect),
            "" | "unjudged" => Ok(Verdict::Unjudged),
            other => Err(Error::parse("annotation verdict", format!("unknown verdict {other:?}"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
            Verdict::Unjudged => "unjudged",
        }
    }
}

/// One query's full prediction as shown to an expert. "correct" means every
/// predicted product was judged useful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub query: String,
    pub predicted: Vec<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeReport {
    pub rows: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub unjudged: usize,
    pub accuracy: f64,
}

/// `correct / (correct + incorrect)`; unjudged rows are counted separately.
pub fn qualitative_accuracy(rows: &[AnnotationRow]) -> Result<QualitativeReport> {
    let count = |v| rows.iter().filter(|r| r.verdict == v).count();
    let correct = count(Verdict::Correct);
    let incorrect = count(Verdict::Incorrect);
    if correct + incorrect == 0 {
        return Err(Error::NoJudgedRows);
    }
    Ok(QualitativeReport {
        rows: rows.len(),
        correct,
        incorrect,
        unjudged: count(Verdict::Unjudged),
        accuracy: correct as f64 / (correct + incorrect) as f64,
    })
}

const SHEET_HEADER: [&str; 3] = ["query", "predicted_products", "verdict"];

pub fn write_annotation_sheet(path: impl AsRef<Path>, rows: &[AnnotationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("annotation sheet", e);
    w.write_record(SHEET_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.query.as_str(), &r.predicted.join(";"), r.verdict.as_str()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("annotation sheet", e))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_annotation_sheet(path: impl AsRef<Path>) -> Result<Vec<AnnotationRow>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&ctx, e))?;
    let headers = r.headers().map_err(|e| Error::parse(&ctx, e))?.clone();
    if headers.iter().ne(SHEET_HEADER) {
        return Err(Error::parse(&ctx, format!("expected header {SHEET_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        let predicted = rec[1].split(';').filter(|s| !s.is_empty()).map(String::from).collect();
        rows.push(AnnotationRow {
            query: rec[0].to_string(),
            predicted,
            verdict: Verdict::parse(&rec[2])?,
        });
    }
    Ok(rows)
}

/// Anything that turns a query into an ordered list of app cards.
pub trait CardPredictor {
    fn name(&self) -> &str;
    fn cards(&self, query: &str, threshold: f64, top_k: usize) -> Vec<(String, f64)>;
}

/// The gazetteer baseline: every explicitly named product with score 1.
impl CardPredictor for Catalog {
    fn name(&self) -> &str {
        "gazetteer"
    }

    fn cards(&self, query: &str, threshold: f64, top_k: usize) -> Vec<(String, f64)> {
        self.explicit_products(query)
            .into_iter()
            .map(|p| (p, 1.0))
            .filter(|(_, s)| *s >= threshold)
            .take(top_k)
            .collect()
    }
}

/// Builds unjudged annotation rows from a predictor's output.
pub fn annotation_rows<S: AsRef<str>>(
    queries: &[S],
    model: &dyn CardPredictor,
    threshold: f64,
    top_k: usize,
) -> Vec<AnnotationRow> {
    queries
        .iter()
        .map(|q| AnnotationRow {
            query: q.as_ref().to_string(),
            predicted: model
                .cards(q.as_ref(), threshold, top_k)
                .into_iter()
                .map(|c| c.0)
                .collect(),
            verdict: Verdict::Unjudged,
        })
        .collect()
}

pub fn export_annotation_sheet<S: AsRef<str>>(
    path: impl AsRef<Path>,
    queries: &[S],
    model: &dyn CardPredictor,
    threshold: f64,
    top_k: usize,
) -> Result<Vec<AnnotationRow>> {
    let rows = annotation_rows(queries, model, threshold, top_k);
    write_annotation_sheet(path, &rows)?;
    Ok(rows)
}

/// A query-log row. `products`, when present, lists the products the user
/// engaged with and enables the click-through estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedQuery {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub products: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacingReport {
    pub variant: String,
    pub total: usize,
    pub surfaced: usize,
    pub null_rate: f64,
    pub mean_cards: f64,
    /// Share of surfaced, annotated queries where a shown card matches an
    /// engaged product.
    pub click_through_rate: Option<f64>,
}

impl SurfacingReport {
    pub fn surfaced_fraction(&self) -> f64 {
        ratio(self.surfaced, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbComparison {
    pub a: SurfacingReport,
    pub b: SurfacingReport,
    /// `surfaced_b / surfaced_a`; absent when A never surfaces.
    pub surfacing_ratio: Option<f64>,
    /// `(null_a - null_b) / null_a`; absent when A has no null queries.
    pub null_rate_reduction: Option<f64>,
    pub ctr_relative_change: Option<f64>,
}

pub fn surface(log: &[LoggedQuery], model: &dyn CardPredictor, threshold: f64, top_k: usize) -> SurfacingReport {
    let mut surfaced = 0;
    let mut cards = 0;
    let (mut annotated, mut clicked) = (0, 0);
    for row in log {
        let shown = model.cards(&row.query, threshold, top_k);
        cards += shown.len();
        if shown.is_empty() {
            continue;
        }
        surfaced += 1;
        if let Some(engaged) = &row.products {
            annotated += 1;
            if shown.iter().any(|(p, _)| engaged.contains(p)) {
                clicked += 1;
            }
        }
    }
    let total = log.len();
    SurfacingReport {
        variant: model.name().to_string(),
        total,
        surfaced,
        null_rate: 1.0 - ratio(surfaced, total),
        mean_cards: ratio(cards, total),
        click_through_rate: (annotated > 0).then(|| ratio(clicked, annotated)),
    }
}

pub fn surfacing_report(
    log: &[LoggedQuery],
    a: &dyn CardPredictor,
    b: &dyn CardPredictor,
    threshold: f64,
    top_k: usize,
) -> AbComparison {
    let ra = surface(log, a, threshold, top_k);
    let rb = surface(log, b, threshold, top_k);
    AbComparison {
        surfacing_ratio: (ra.surfaced > 0).then(|| rb.surfaced as f64 / ra.surfaced as f64),
        null_rate_reduction: (ra.null_rate > 0.0).then(|| (ra.null_rate - rb.null_rate) / ra.null_rate),
        ctr_relative_change: match (ra.click_through_rate, rb.click_through_rate) {
            (Some(x), Some(y)) if x > 0.0 => Some((y - x) / x),
            _ => None,
        },
        a: ra,
        b: rb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Product;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(bits: &[u8]) -> PredictionVector {
        PredictionVector(bits.iter().map(|&b| if b == 1 { 0.9 } else { 0.1 }).collect())
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn perfect_predictions() {
        let r = micro_metrics(&[pv(&[1, 0]), pv(&[0, 1])], &[set(&[0]), set(&[1])], 0.5);
        assert_eq!((r.precision, r.recall, r.accuracy, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn two_by_two_by_hand() {
        let r = micro_metrics(&[pv(&[1, 1]), pv(&[0, 0])], &[set(&[0]), set(&[1])], 0.5);
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (1, 1, 1, 1));
        assert_eq!((r.precision, r.recall, r.accuracy, r.f1), (0.5, 0.5, 0.5, 0.5));
        assert_eq!((r.rows, r.cells), (2, 4));
    }

    #[test]
    fn no_positives_anywhere() {
        let r = micro_metrics(&[pv(&[0, 0])], &[set(&[])], 0.5);
        assert_eq!((r.precision, r.recall, r.accuracy, r.f1), (0.0, 0.0, 1.0, 0.0));
    }

    proptest! {
        #[test]
        fn matches_cell_enumeration(
            rows in proptest::collection::vec((proptest::collection::vec(0.0f64..1.0, 4), proptest::collection::vec(any::<bool>(), 4)), 1..8),
            p in 1usize..=4,
            t in 0.05f64..0.95,
        ) {
            let preds: Vec<_> = rows.iter().map(|(s, _)| PredictionVector(s[..p].to_vec())).collect();
            let gold: Vec<BTreeSet<usize>> = rows.iter().map(|(_, g)| (0..p).filter(|&k| g[k]).collect()).collect();
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (pr, g) in preds.iter().zip(&gold) {
                for k in 0..p {
                    match (pr.0[k] >= t, g.contains(&k)) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => tn += 1,
                    }
                }
            }
            let r = micro_metrics(&preds, &gold, t);
            prop_assert_eq!((r.tp, r.fp, r.fn_, r.tn), (tp, fp, fn_, tn));
            for v in [r.precision, r.recall, r.accuracy, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn qualitative_is_order_invariant(verdicts in proptest::collection::vec(0u8..3, 1..40)) {
            let rows: Vec<_> = verdicts.iter().map(|&v| AnnotationRow {
                query: "q".into(),
                predicted: vec![],
                verdict: [Verdict::Correct, Verdict::Incorrect, Verdict::Unjudged][v as usize],
            }).collect();
            let mut rev = rows.clone();
            rev.reverse();
            match (qualitative_accuracy(&rows), qualitative_accuracy(&rev)) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.accuracy, b.accuracy);
                    prop_assert!((0.0..=1.0).contains(&a.accuracy));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "order changed the outcome"),
            }
        }

        #[test]
        fn null_rate_complements_surfacing(total in 1usize..500, surfaced_frac in 0.0f64..=1.0) {
            let surfaced = (surfaced_frac * total as f64) as usize;
            let log: Vec<_> = (0..total).map(|i| LoggedQuery { query: if i < surfaced { "photoshop".into() } else { "nothing".into() }, products: None }).collect();
            let cat = Catalog::new(vec![Product { id: "ps".into(), display_name: "PS".into(), aliases: vec!["photoshop".into()] }]).unwrap();
            let r = surface(&log, &cat, 0.5, 3);
            prop_assert_eq!(r.surfaced, surfaced);
            prop_assert_eq!(r.null_rate + r.surfaced as f64 / r.total as f64, 1.0);
        }
    }

    fn rows(correct: usize, incorrect: usize, unjudged: usize) -> Vec<AnnotationRow> {
        let mk = |v| AnnotationRow {
            query: "q".into(),
            predicted: vec!["ps".into()],
            verdict: v,
        };
        std::iter::repeat_n(mk(Verdict::Correct), correct)
            .chain(std::iter::repeat_n(mk(Verdict::Incorrect), incorrect))
            .chain(std::iter::repeat_n(mk(Verdict::Unjudged), unjudged))
            .collect()
    }

    #[test]
    fn qualitative_examples() {
        let r = qualitative_accuracy(&rows(2452, 181, 67)).unwrap();
        assert_abs_diff_eq!(r.accuracy, 0.9313, epsilon = 1e-4);
        assert_eq!((r.rows, r.unjudged), (2700, 67));
        assert!(matches!(qualitative_accuracy(&rows(0, 0, 3)), Err(Error::NoJudgedRows)));
        assert_eq!(qualitative_accuracy(&rows(1, 0, 0)).unwrap().accuracy, 1.0);
    }

    #[test]
    fn annotation_sheet_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sheet.csv");
        let mut rs = vec![
            AnnotationRow {
                query: "edit video, fast".into(),
                predicted: vec!["pr".into(), "ru".into()],
                verdict: Verdict::Unjudged,
            },
            AnnotationRow {
                query: "crop".into(),
                predicted: vec![],
                verdict: Verdict::Correct,
            },
        ];
        write_annotation_sheet(&p, &rs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("query,predicted_products,verdict\n"));
        assert!(text.contains("pr;ru"));
        let back = read_annotation_sheet(&p).unwrap();
        assert_eq!(back, rs);
        rs[0].verdict = Verdict::Incorrect;
        write_annotation_sheet(&p, &rs).unwrap();
        let q = qualitative_accuracy(&read_annotation_sheet(&p).unwrap()).unwrap();
        assert_eq!(q.accuracy, 0.5);
    }

    struct Always(Vec<&'static str>);
    impl CardPredictor for Always {
        fn name(&self) -> &str {
            "always"
        }
        fn cards(&self, _: &str, _: f64, top_k: usize) -> Vec<(String, f64)> {
            self.0.iter().take(top_k).map(|p| (p.to_string(), 0.9)).collect()
        }
    }

    #[test]
    fn ab_comparison() {
        let cat = Catalog::new(vec![Product {
            id: "ps".into(),
            display_name: "PS".into(),
            aliases: vec!["photoshop".into()],
        }])
        .unwrap();
        let log = vec![
            LoggedQuery {
                query: "photoshop crop".into(),
                products: Some(vec!["ps".into()]),
            },
            LoggedQuery {
                query: "remove background".into(),
                products: Some(vec!["ps".into()]),
            },
            LoggedQuery {
                query: "blur face".into(),
                products: None,
            },
            LoggedQuery {
                query: "weather".into(),
                products: None,
            },
        ];
        let r = surfacing_report(&log, &cat, &Always(vec!["ps", "ai"]), 0.5, 3);
        assert_eq!(r.a.surfaced, 1);
        assert_eq!(r.b.surfaced, 4);
        assert_eq!(r.a.null_rate, 0.75);
        assert_eq!(r.b.null_rate, 0.0);
        assert_eq!(r.surfacing_ratio, Some(4.0));
        assert_eq!(r.null_rate_reduction, Some(1.0));
        assert_eq!(r.b.mean_cards, 2.0);
        assert_eq!(r.a.click_through_rate, Some(1.0));
        assert_eq!(r.b.click_through_rate, Some(1.0));
    }
}
