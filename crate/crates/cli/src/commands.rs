use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use prodintent::bundle::Scorer;
use prodintent::catalog::{normalize, Catalog};
use prodintent::checkpoint;
use prodintent::classifier::{train_classifier, ClassifierConfig, PredictionVector, GOLD_MIN_WEIGHT};
use prodintent::data_pipeline::{ClickEvent, CuratedDoc, DatasetSplit, LabeledQuery, SplitConfig, TopQueries};
use prodintent::encoder::{EncoderConfig, PretrainConfig};
use prodintent::eval::{self, AbComparison, LoggedQuery};
use prodintent::pipeline::{self, IngestInputs};
use prodintent::synth::{self, files, GroundTruth, SynthSpec};
use prodintent::{io, ModelBundle, ModelPaths, Vocab};
use prodintent_server::ServerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{self, RunManifest};
use crate::{
    AbReportArgs, AnnotateExportArgs, BuildVocabArgs, CliError, Common, EvaluateArgs, IngestArgs, ModelArgs,
    PretrainArgs, ServeArgs, SynthArgs, TrainArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

pub struct Reporter {
    pub json: bool,
}

impl Reporter {
    pub fn progress(&self, stage: &str, fields: Value) {
        if self.json {
            let mut obj = json!({"event": "progress", "stage": stage});
            if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
                o.extend(extra);
            }
            println!("{obj}");
        } else {
            eprintln!("{stage}: {fields}");
        }
    }

    /// The final result: one JSON line under `--json`, pretty JSON otherwise.
    pub fn result(&self, value: &Value) {
        if self.json {
            println!("{value}");
        } else {
            println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
        }
    }
}

/// Overlays the fields of a JSON object file onto `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(base) };
    let file: Value = io::read_json(path)?;
    let Value::Object(fields) = file else {
        return Err(CliError::Data(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    merged.as_object_mut().expect("configs are structs").extend(fields);
    serde_json::from_value(merged).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn finish(m: RunManifest, common: &Common, default_dir: Option<&Path>) -> CliResult {
    let path = match (&common.manifest, default_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => manifest::default_path(dir, &m.subcommand),
        (None, None) => return Ok(()),
    };
    Ok(m.finish(path)?)
}

fn parent_dir(path: &Path) -> &Path {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}

fn check_unit(name: &str, v: f64) -> CliResult {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must lie in (0, 1), got {v}")))
    }
}

pub fn synth(args: &SynthArgs, out: &Reporter) -> CliResult {
    let mut m = RunManifest::start("synth", args.common.seed);
    let mut spec = overlay(SynthSpec::default(), args.config.as_deref())?;
    spec.seed = args.common.seed;
    spec.validate()?;
    m.config(&spec);
    if let Some(c) = &args.config {
        m.input("config", c);
    }
    let data = synth::generate(&spec)?;
    out.progress(
        "generated",
        json!({"queries": data.behavioral.len(), "documents": data.corpus.len()}),
    );
    data.write_to_dir(&args.out)?;
    for name in [
        files::SPEC,
        files::CATALOG,
        files::CORPUS,
        files::CURATED,
        files::CLICKS,
        files::NER_QUERIES,
        files::TOP_QUERIES,
        files::QUERY_LOG,
        files::GROUND_TRUTH,
    ] {
        m.output(name, args.out.join(name))?;
    }
    out.result(&json!({
        "subcommand": "synth",
        "out": args.out,
        "products": data.catalog.len(),
        "documents": data.corpus.len(),
        "click_events": data.clicks.len(),
        "behavioral_queries": data.behavioral.len(),
        "log_queries": data.query_log.len(),
    }));
    finish(m, &args.common, Some(&args.out))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TopQueriesFile {
    One(TopQueries),
    Many(Vec<TopQueries>),
}

pub fn ingest(args: &IngestArgs, out: &Reporter) -> CliResult {
    check_unit("test-fraction", args.test_fraction)?;
    if !(0.0..1.0).contains(&args.validation_fraction) || args.test_fraction + args.validation_fraction >= 1.0 {
        return Err(CliError::Usage(
            "validation and test fractions must leave training rows".into(),
        ));
    }
    check_unit("w-min", args.w_min)?;
    let mut m = RunManifest::start("ingest", args.common.seed);
    m.config(&json!({
        "w_min": args.w_min,
        "test_fraction": args.test_fraction,
        "validation_fraction": args.validation_fraction,
    }));
    let catalog_path = args.catalog.clone().unwrap_or_else(|| args.data.join(files::CATALOG));
    let catalog = Catalog::load(&catalog_path)?;
    m.input("catalog", &catalog_path);

    let mut inputs = IngestInputs::default();
    let present = |name: &str| Some(args.data.join(name)).filter(|p| p.is_file());
    if let Some(p) = present(files::CLICKS) {
        inputs.clicks = io::read_jsonl(&p)?;
        m.input("clicks", p);
    }
    for (i, p) in args.extra_clicks.iter().enumerate() {
        require_file(p)?;
        inputs.clicks.extend(io::read_jsonl::<ClickEvent>(p)?);
        m.input(&format!("clicks.{i}"), p);
    }
    if let Some(p) = present(files::CURATED) {
        inputs.curated = io::read_jsonl::<CuratedDoc>(&p)?;
        m.input("curated", p);
    }
    if let Some(p) = present(files::NER_QUERIES) {
        inputs.ner_queries = io::read_lines(&p)?;
        m.input("ner_queries", p);
    }
    if let Some(p) = present(files::TOP_QUERIES) {
        inputs.top_queries = match io::read_json::<TopQueriesFile>(&p)? {
            TopQueriesFile::One(t) => vec![t],
            TopQueriesFile::Many(v) => v,
        };
        m.input("top_queries", p);
    }
    if m.inputs.len() == 1 {
        return Err(CliError::Data(format!("{}: no ingestible files", args.data.display())));
    }

    let split = SplitConfig {
        test_fraction: args.test_fraction,
        validation_fraction: args.validation_fraction,
        seed: args.common.seed,
    };
    let result = pipeline::ingest(&inputs, &catalog, args.w_min, split)?;
    out.progress("merged", json!({"rows": result.merged.len()}));
    let outputs: [(&str, &[LabeledQuery]); 4] = [
        ("merged.jsonl", &result.merged),
        ("train.jsonl", &result.split.train),
        ("validation.jsonl", &result.split.validation),
        ("test.jsonl", &result.split.test),
    ];
    io::write_jsonl(args.out.join("aggregates.jsonl"), &result.aggregates)?;
    m.output("aggregates.jsonl", args.out.join("aggregates.jsonl"))?;
    for (name, rows) in outputs {
        io::write_jsonl(args.out.join(name), rows)?;
        m.output(name, args.out.join(name))?;
    }
    out.result(&json!({
        "subcommand": "ingest",
        "source_rows": result.source_rows,
        "aggregates": result.aggregates.len(),
        "merged": result.merged.len(),
        "train": result.split.train.len(),
        "validation": result.split.validation.len(),
        "test": result.split.test.len(),
    }));
    finish(m, &args.common, Some(&args.out))
}

pub fn build_vocab(args: &BuildVocabArgs, out: &Reporter) -> CliResult {
    if args.min_frequency == 0 {
        return Err(CliError::Usage("--min-frequency must be at least 1".into()));
    }
    let mut m = RunManifest::start("build-vocab", args.common.seed);
    m.config(&json!({"min_frequency": args.min_frequency}));
    m.input("corpus", &args.corpus);
    let corpus = io::read_lines(&args.corpus)?;
    let vocab = Vocab::build(&corpus, args.min_frequency)?;
    vocab.save(&args.out)?;
    m.output("vocab", &args.out)?;
    out.result(&json!({"subcommand": "build-vocab", "size": vocab.len(), "hash": vocab.hash()}));
    finish(m, &args.common, Some(parent_dir(&args.out)))
}

/// Encoder shape and optimizer settings accepted by `pretrain --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PretrainSettings {
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    d_ff: usize,
    mask_probability: f64,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    val_fraction: f64,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let enc = EncoderConfig::desk(0, 0);
        let opt = PretrainConfig::default();
        PretrainSettings {
            d_model: enc.d_model,
            n_layers: enc.n_layers,
            n_heads: enc.n_heads,
            d_ff: enc.d_ff,
            mask_probability: enc.mask_probability,
            epochs: opt.epochs,
            lr: opt.lr,
            batch_size: opt.batch_size,
            val_fraction: 0.1,
        }
    }
}

pub fn pretrain(args: &PretrainArgs, out: &Reporter) -> CliResult {
    let mut settings = overlay(PretrainSettings::default(), args.config.as_deref())?;
    if let Some(e) = args.epochs {
        settings.epochs = e;
    }
    if let Some(lr) = args.lr {
        settings.lr = lr;
    }
    check_unit("val-fraction", settings.val_fraction)?;
    let seed = args.common.seed;
    let mut m = RunManifest::start("pretrain", seed);
    m.config(&settings);
    m.input("corpus", &args.corpus);
    m.input("vocab", &args.vocab);
    let vocab = Vocab::load(&args.vocab)?;
    let corpus = io::read_lines(&args.corpus)?;
    let init = EncoderConfig {
        d_model: settings.d_model,
        n_layers: settings.n_layers,
        n_heads: settings.n_heads,
        d_ff: settings.d_ff,
        mask_probability: settings.mask_probability,
        ..EncoderConfig::desk(vocab.len(), seed)
    };
    init.validate()?;
    let cfg = PretrainConfig {
        epochs: settings.epochs,
        lr: settings.lr,
        batch_size: settings.batch_size,
        seed,
    };
    let (encoder, report) = pipeline::pretrain_corpus(&corpus, &vocab, init, &cfg, settings.val_fraction)?;
    for (epoch, ppl) in report.val_perplexity.iter().enumerate() {
        out.progress("pretrain", json!({"epoch": epoch, "val_perplexity": ppl}));
    }
    let hash = checkpoint::save_encoder(&args.out, &encoder, &vocab)?;
    m.output("encoder", &args.out)?;
    let report_path = sibling(&args.out, "pretrain_report.json");
    io::write_json(&report_path, &report)?;
    m.output("report", &report_path)?;
    out.result(&json!({
        "subcommand": "pretrain",
        "vocab_size": vocab.len(),
        "epochs": settings.epochs,
        "val_perplexity": report.val_perplexity,
        "train_loss": report.train_loss,
        "encoder_hash": hash,
    }));
    finish(m, &args.common, Some(parent_dir(&args.out)))
}

/// `dir/encoder.json` → `dir/encoder.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parent_dir(path).join(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a ClassifierConfig,
    history: &'a [prodintent::classifier::EpochStats],
    backbone_hash_before: &'a str,
    backbone_hash_after_freeze: &'a str,
    test: Option<prodintent::MetricsReport>,
}

pub fn train(args: &TrainArgs, out: &Reporter) -> CliResult {
    let mut cfg = overlay(ClassifierConfig::default(), args.config.as_deref())?;
    cfg.seed = args.common.seed;
    if let Some(e) = args.epochs {
        cfg.total_epochs = e;
    }
    if let Some(f) = args.freeze_epochs {
        cfg.freeze_epochs = f;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(lr) = args.encoder_lr {
        cfg.encoder_lr = Some(lr);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut m = RunManifest::start("train", cfg.seed);
    m.config(&cfg);
    for (name, p) in [
        ("catalog", &args.catalog),
        ("vocab", &args.vocab),
        ("encoder", &args.encoder),
    ] {
        m.input(name, p);
    }
    let catalog = Catalog::load(&args.catalog)?;
    let vocab = Vocab::load(&args.vocab)?;
    let (encoder, _) = checkpoint::load_encoder(&args.encoder, &vocab)?;
    let read_split = |name: &str| -> CliResult<Vec<LabeledQuery>> {
        let p = args.data.join(name);
        if name == "train.jsonl" {
            require_file(&p)?;
        } else if !p.is_file() {
            return Ok(Vec::new());
        }
        Ok(io::read_jsonl(&p)?)
    };
    let split = DatasetSplit {
        train: read_split("train.jsonl")?,
        validation: read_split("validation.jsonl")?,
        test: read_split("test.jsonl")?,
        seed: cfg.seed,
    };
    m.input("data", &args.data);
    out.progress(
        "train",
        json!({"examples": split.train.len(), "epochs": cfg.total_epochs}),
    );
    let outcome = train_classifier(encoder, &vocab, &catalog, &split, &cfg)?;
    for s in &outcome.history {
        out.progress("epoch", serde_json::to_value(s).expect("stats serialize"));
    }

    let paths = ModelPaths::in_dir(&args.out, args.out.join(files::CATALOG));
    catalog.save(&paths.catalog)?;
    vocab.save(&paths.vocab)?;
    checkpoint::save_classifier(&paths.classifier, &paths.encoder, &outcome.classifier, &vocab, &catalog)?;
    let test = (!split.test.is_empty())
        .then(|| pipeline::evaluate_rows(&outcome.classifier, &vocab, &catalog, &split.test, None, cfg.threshold));
    let report = TrainReport {
        config: &cfg,
        history: &outcome.history,
        backbone_hash_before: &outcome.backbone_hash_before,
        backbone_hash_after_freeze: &outcome.backbone_hash_after_freeze,
        test,
    };
    let report_path = args.out.join("train_report.json");
    io::write_json(&report_path, &report)?;
    for (name, p) in [
        ("catalog", &paths.catalog),
        ("vocab", &paths.vocab),
        ("encoder", &paths.encoder),
        ("classifier", &paths.classifier),
        ("report", &report_path),
    ] {
        m.output(name, p)?;
    }
    out.result(&json!({
        "subcommand": "train",
        "out": args.out,
        "final_train_loss": outcome.history.last().map(|s| s.train_loss),
        "final_val_f1": outcome.history.last().and_then(|s| s.val_f1),
        "backbone_unchanged_by_freeze": outcome.backbone_hash_before == outcome.backbone_hash_after_freeze,
        "test": report.test,
    }));
    finish(m, &args.common, Some(&args.out))
}

fn model_paths(m: &ModelArgs) -> CliResult<ModelPaths> {
    let dir = m
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let catalog = m.catalog.clone().unwrap_or_else(|| dir.join(files::CATALOG));
    Ok(ModelPaths::in_dir(dir, catalog))
}

/// A row to score: labeled dataset rows and query-log rows both parse.
#[derive(Deserialize)]
struct EvalRow {
    query: String,
    #[serde(default)]
    labels: BTreeMap<String, f64>,
    #[serde(default)]
    products: Vec<String>,
}

type Predict = dyn Fn(&str) -> PredictionVector;

#[derive(Deserialize)]
struct ScoredRow {
    query: String,
    scores: BTreeMap<String, f64>,
}

pub fn evaluate(args: &EvaluateArgs, out: &Reporter) -> CliResult {
    check_unit("threshold", args.threshold)?;
    if args.data.is_empty() && args.annotations.is_none() {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --data or --annotations".into(),
        ));
    }
    let mut m = RunManifest::start("evaluate", args.common.seed);
    m.config(&json!({"threshold": args.threshold}));
    let mut report = serde_json::Map::new();
    report.insert("subcommand".into(), json!("evaluate"));

    if !args.data.is_empty() {
        let (catalog, predict): (Catalog, Box<Predict>) = match &args.predictions {
            Some(p) => {
                let catalog_path = args
                    .model
                    .catalog
                    .clone()
                    .ok_or_else(|| CliError::Usage("--predictions needs --catalog".into()))?;
                let catalog = Catalog::load(&catalog_path)?;
                m.input("catalog", &catalog_path);
                m.input("predictions", p);
                let mut table: BTreeMap<String, PredictionVector> = BTreeMap::new();
                for row in io::read_jsonl::<ScoredRow>(p)? {
                    let mut v = vec![0.0; catalog.len()];
                    for (pid, s) in &row.scores {
                        let k = catalog
                            .label_of(pid)
                            .ok_or_else(|| CliError::Data(format!("{}: unknown product {pid:?}", p.display())))?;
                        v[k] = *s;
                    }
                    table.insert(normalize(&row.query), PredictionVector(v));
                }
                let n = catalog.len();
                let predict = move |q: &str| {
                    table
                        .get(&normalize(q))
                        .cloned()
                        .unwrap_or(PredictionVector(vec![0.0; n]))
                };
                (catalog, Box::new(predict))
            }
            None => {
                let paths = model_paths(&args.model)?;
                m.input("model", args.model.model.as_ref().expect("checked"));
                let bundle = ModelBundle::load(&paths)?;
                report.insert(
                    "model".into(),
                    serde_json::to_value(&bundle.info).expect("info serializes"),
                );
                let catalog = bundle.catalog.clone();
                (catalog, Box::new(move |q: &str| bundle.scores(q)))
            }
        };
        let truth: Option<GroundTruth> = match &args.truth {
            Some(p) => {
                m.input("truth", p);
                Some(io::read_json(p)?)
            }
            None => None,
        };
        let mut preds = Vec::new();
        let mut gold = Vec::new();
        for (i, p) in args.data.iter().enumerate() {
            m.input(&format!("data.{i}"), p);
            for row in io::read_jsonl::<EvalRow>(p)? {
                let names: BTreeSet<String> = match truth.as_ref().and_then(|t| t.get(&normalize(&row.query))) {
                    Some(set) => set.clone(),
                    None => row
                        .labels
                        .into_iter()
                        .filter(|(_, w)| *w >= GOLD_MIN_WEIGHT)
                        .map(|(p, _)| p)
                        .chain(row.products)
                        .collect(),
                };
                gold.push(
                    names
                        .iter()
                        .filter_map(|n| catalog.label_of(n))
                        .collect::<BTreeSet<usize>>(),
                );
                preds.push(predict(&row.query));
            }
        }
        let metrics = eval::micro_metrics(&preds, &gold, args.threshold);
        out.progress("scored", json!({"rows": preds.len()}));
        let (mp, mg): (Vec<_>, Vec<_>) = preds.into_iter().zip(gold).filter(|(_, g)| g.len() >= 2).unzip();
        report.insert(
            "metrics".into(),
            serde_json::to_value(metrics).expect("metrics serialize"),
        );
        if !mp.is_empty() {
            let multi = pipeline::multi_label_recall(&mp, &mg, args.threshold);
            report.insert("multi_label".into(), serde_json::to_value(multi).expect("serializes"));
        }
    }

    if let Some(p) = &args.annotations {
        m.input("annotations", p);
        let rows = eval::read_annotation_sheet(p)?;
        let q = eval::qualitative_accuracy(&rows)?;
        report.insert("qualitative".into(), serde_json::to_value(q).expect("serializes"));
    }

    let report = Value::Object(report);
    if let Some(o) = &args.out {
        io::write_json(o, &report)?;
        m.output("report", o)?;
    }
    out.result(&report);
    finish(m, &args.common, args.out.as_deref().map(parent_dir))
}

#[derive(Deserialize)]
struct LogRow {
    query: String,
    #[serde(default)]
    products: Option<Vec<String>>,
    #[serde(default)]
    kind: Option<String>,
}

#[derive(Serialize)]
struct AbReport {
    subcommand: &'static str,
    threshold: f64,
    top_k: usize,
    overall: AbComparison,
    by_kind: BTreeMap<String, AbComparison>,
}

pub fn ab_report(args: &AbReportArgs, out: &Reporter) -> CliResult {
    check_unit("threshold", args.threshold)?;
    if args.top_k == 0 {
        return Err(CliError::Usage("--top-k must be positive".into()));
    }
    let mut m = RunManifest::start("ab-report", args.common.seed);
    m.config(&json!({"threshold": args.threshold, "top_k": args.top_k}));
    let paths = model_paths(&args.model)?;
    let bundle = ModelBundle::load(&paths)?;
    m.input("model", args.model.model.as_ref().expect("checked"));
    m.input("log", &args.log);
    let rows: Vec<LogRow> = io::read_jsonl(&args.log)?;
    let mut groups: BTreeMap<String, Vec<LoggedQuery>> = BTreeMap::new();
    let mut all = Vec::with_capacity(rows.len());
    for row in rows {
        let q = LoggedQuery {
            query: row.query,
            products: row.products,
        };
        if let Some(k) = row.kind {
            groups.entry(k).or_default().push(q.clone());
        }
        all.push(q);
    }
    let compare =
        |log: &[LoggedQuery]| eval::surfacing_report(log, &bundle.catalog, &bundle, args.threshold, args.top_k);
    let report = AbReport {
        subcommand: "ab-report",
        threshold: args.threshold,
        top_k: args.top_k,
        overall: compare(&all),
        by_kind: groups.iter().map(|(k, v)| (k.clone(), compare(v))).collect(),
    };
    if let Some(o) = &args.out {
        io::write_json(o, &report)?;
        m.output("report", o)?;
    }
    out.result(&serde_json::to_value(&report).expect("report serializes"));
    finish(m, &args.common, args.out.as_deref().map(parent_dir))
}

#[derive(Deserialize)]
struct QueryOnly {
    query: String,
}

pub fn annotate_export(args: &AnnotateExportArgs, out: &Reporter) -> CliResult {
    check_unit("threshold", args.threshold)?;
    let mut m = RunManifest::start("annotate-export", args.common.seed);
    m.config(&json!({"threshold": args.threshold, "top_k": args.top_k}));
    let paths = model_paths(&args.model)?;
    let bundle = ModelBundle::load(&paths)?;
    m.input("model", args.model.model.as_ref().expect("checked"));
    m.input("queries", &args.queries);
    let queries: Vec<String> = if args.queries.extension().is_some_and(|e| e == "jsonl") {
        io::read_jsonl::<QueryOnly>(&args.queries)?
            .into_iter()
            .map(|r| r.query)
            .collect()
    } else {
        io::read_lines(&args.queries)?
    };
    let scorer = Scorer {
        vocab: &bundle.vocab,
        classifier: &bundle.classifier,
    };
    let rows = eval::export_annotation_sheet(&args.out, &queries, &scorer, args.threshold, args.top_k)?;
    m.output("sheet", &args.out)?;
    out.result(&json!({
        "subcommand": "annotate-export",
        "rows": rows.len(),
        "with_cards": rows.iter().filter(|r| !r.predicted.is_empty()).count(),
        "out": args.out,
    }));
    finish(m, &args.common, Some(parent_dir(&args.out)))
}

pub fn serve(args: &ServeArgs) -> CliResult {
    let config_path = args
        .config
        .clone()
        .or_else(|| std::env::var_os(prodintent_server::ENV_CONFIG).map(PathBuf::from));
    let mut cfg = match config_path {
        Some(p) => ServerConfig::load(&p)?,
        None => {
            let paths = model_paths(&args.model)?;
            let dir = args.model.model.as_ref().expect("checked");
            let log = args.feedback_log.clone().unwrap_or_else(|| dir.join("feedback.jsonl"));
            ServerConfig::new(paths, log)
        }
    }
    .with_env_overrides();
    if let Some(a) = &args.addr {
        cfg.addr = a.clone();
    }
    if let Some(p) = &args.feedback_log {
        cfg.feedback_log = p.clone();
    }
    if let Some(t) = args.tau {
        cfg.tau = t;
    }
    if let Some(t) = args.tau_ac {
        cfg.tau_ac = Some(t);
    }
    if let Some(k) = args.top_k {
        cfg.top_k = k;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(prodintent_server::run(cfg)?)
}
