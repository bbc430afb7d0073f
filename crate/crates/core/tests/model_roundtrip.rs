use prodintent::checkpoint;
use prodintent::classifier::train_classifier;
use prodintent::data_pipeline::SplitConfig;
use prodintent::encoder::PretrainConfig;
use prodintent::pipeline::{ingest, pretrain_corpus, IngestInputs};
use prodintent::synth::{generate, SynthSpec};
use prodintent::{ClassifierConfig, EncoderConfig, Error, ModelBundle, ModelPaths, Vocab};

#[test]
fn saved_model_reloads_with_identical_predictions() {
    let data = generate(&SynthSpec {
        keywords_per_product: 6,
        keyword_zipf: 0.0,
        n_documents: 150,
        n_behavioral_queries: 300,
        n_log_queries: 40,
        seed: 5,
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
    let vocab = Vocab::build(&data.corpus, 2).unwrap();
    let init = EncoderConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        ..EncoderConfig::desk(vocab.len(), 5)
    };
    let (encoder, report) = pretrain_corpus(
        &data.corpus,
        &vocab,
        init,
        &PretrainConfig {
            epochs: 1,
            ..Default::default()
        },
        0.1,
    )
    .unwrap();
    assert_eq!(report.val_perplexity.len(), 2);
    let cfg = ClassifierConfig {
        hidden: [16, 8],
        total_epochs: 2,
        freeze_epochs: 1,
        ..Default::default()
    };
    let trained = train_classifier(encoder, &vocab, &data.catalog, &out.split, &cfg).unwrap();
    assert_eq!(trained.history.len(), 2);
    assert!(trained.history[0].frozen && !trained.history[1].frozen);
    assert_eq!(trained.backbone_hash_before, trained.backbone_hash_after_freeze);

    let dir = tempfile::tempdir().unwrap();
    let paths = ModelPaths::in_dir(dir.path(), dir.path().join("catalog.json"));
    data.catalog.save(&paths.catalog).unwrap();
    vocab.save(&paths.vocab).unwrap();
    let (enc_hash, clf_hash) = checkpoint::save_classifier(
        &paths.classifier,
        &paths.encoder,
        &trained.classifier,
        &vocab,
        &data.catalog,
    )
    .unwrap();

    let bundle = ModelBundle::load(&paths).unwrap();
    assert_eq!(bundle.info.encoder_hash, enc_hash);
    assert_eq!(bundle.info.classifier_hash, clf_hash);
    assert_eq!(bundle.info.catalog_size, data.catalog.len());
    for e in &data.query_log {
        assert_eq!(
            bundle.scores(&e.query),
            trained.classifier.class_forward(&vocab, &e.query)
        );
    }

    // a second save of the reloaded model is byte-identical
    let again = tempfile::tempdir().unwrap();
    let (e2, c2) = checkpoint::save_classifier(
        again.path().join("c.json"),
        again.path().join("e.json"),
        &bundle.classifier,
        &bundle.vocab,
        &bundle.catalog,
    )
    .unwrap();
    assert_eq!((e2, c2), (enc_hash, clf_hash));

    // swapping the catalog for a different one is refused
    let other = generate(&SynthSpec {
        seed: 6,
        n_documents: 50,
        n_behavioral_queries: 10,
        ..Default::default()
    })
    .unwrap();
    other.catalog.save(&paths.catalog).unwrap();
    assert!(matches!(
        ModelBundle::load(&paths),
        Err(Error::HashMismatch { what: "catalog", .. })
    ));
}
