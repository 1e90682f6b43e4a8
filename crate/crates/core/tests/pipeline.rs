//! End-to-end runs through the public API: tokens to paragraph vectors to
//! neighbor tables to trained encoders to evaluation reports.

use xmodal::data::{generate_synthetic, load_dataset, PairDataset, SyntheticConfig};
use xmodal::eval::{evaluate_checkpoint, EvalConfig};
use xmodal::io::write_jsonl_file;
use xmodal::neighbor::{build_index, neighbor_source_variant, IndexConfig, Metric, NeighborSource, NeighborTable};
use xmodal::semantic::{embed_corpus, load_external_space, PvdmConfig};
use xmodal::train::{train, Checkpoint, TrainConfig};
use xmodal::Scalar;

fn synthetic_config() -> SyntheticConfig {
    SyntheticConfig {
        topics: 4,
        modes_per_topic: 2,
        pairs: 160,
        image_dim: 12,
        text_dim: 6,
        tokens_per_doc: 24,
        topic_word_prob: 0.5,
        seed: 21,
        ..Default::default()
    }
}

fn small_train(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        embed_dim: 8,
        batch_size: 16,
        learning_rate: 1e-3,
        max_epochs: 6,
        seed,
        ..Default::default()
    };
    cfg.loss.angular.tan_sq_alpha = 0.25;
    cfg
}

fn pvdm() -> PvdmConfig {
    PvdmConfig {
        dim: 12,
        window: 4,
        min_count: 1,
        epochs: 8,
        seed: 3,
        ..Default::default()
    }
}

/// Tokens only: the semantic space stands in for missing text features.
fn run<T: Scalar>() -> (xmodal::eval::EvalReport, Vec<xmodal::train::EpochMetrics>) {
    let full: PairDataset<T> = generate_synthetic(&synthetic_config()).unwrap();
    let records = full
        .records()
        .iter()
        .cloned()
        .map(|mut r| {
            r.text_feature = None;
            r
        })
        .collect();
    let tokens_only = PairDataset::new(records).unwrap();
    let (_, omega) = embed_corpus::<T>(&tokens_only.corpus(), &pvdm()).unwrap();
    let data = tokens_only.fill_text_features(&omega).unwrap();
    assert_eq!(data.text_dim(), Some(12));
    let space = neighbor_source_variant(&data, NeighborSource::TextOmega, Some(&omega)).unwrap();
    let table = build_index(&space, &IndexConfig::default()).unwrap().build_table(8, NeighborSource::TextOmega);
    let outcome = train(&data, Some(&table), &small_train(1)).unwrap();
    let eval = EvalConfig {
        preservation_k: 5,
        ..Default::default()
    };
    let report = evaluate_checkpoint(&outcome.checkpoint, &data, &omega, &eval).unwrap();
    (report, outcome.metrics)
}

#[test]
fn tokens_to_report_in_both_precisions() {
    for (report, metrics) in [run::<f64>(), run::<f32>()] {
        assert_eq!(metrics.len(), 6);
        assert!(metrics.iter().all(|m| m.train_loss.is_finite() && m.val_loss.is_finite()));
        for v in [
            report.recall_image_to_text,
            report.recall_text_to_image,
            report.preservation_image,
            report.preservation_text,
        ] {
            assert!((0.0..=1.0).contains(&v), "{report:?}");
        }
    }
}

#[test]
fn files_round_trip_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let data: PairDataset<f64> = generate_synthetic(&synthetic_config()).unwrap();

    // Features and tokens written separately, merged on load.
    let bare: Vec<_> = data
        .records()
        .iter()
        .cloned()
        .map(|mut r| {
            r.text_tokens = None;
            r
        })
        .collect();
    PairDataset::new(bare).unwrap().save_jsonl(p("features.jsonl")).unwrap();
    write_jsonl_file(p("corpus.jsonl"), data.corpus()).unwrap();
    let loaded: PairDataset<f64> = load_dataset(p("features.jsonl"), Some(&p("corpus.jsonl"))).unwrap();
    assert_eq!(loaded, data);

    let (_, omega) = embed_corpus::<f64>(&loaded.corpus(), &pvdm()).unwrap();
    omega.save_jsonl(p("omega.jsonl")).unwrap();
    let omega2 = load_external_space::<f64>(p("omega.jsonl")).unwrap();
    assert_eq!(omega2.vectors(), omega.vectors());

    let table = build_index(&omega2, &IndexConfig::default()).unwrap().build_table(8, NeighborSource::TextOmega);
    table.save_jsonl(p("neighbors.jsonl")).unwrap();
    let table2 = NeighborTable::load_jsonl(p("neighbors.jsonl"), Metric::Euclidean, NeighborSource::TextOmega).unwrap();
    assert_eq!(table2.ids(), table.ids());
    assert_eq!(table2.rows(), table.rows());

    let outcome = train(&loaded, Some(&table2), &small_train(2)).unwrap();
    outcome.checkpoint.save(p("ckpt.json")).unwrap();
    let ckpt = Checkpoint::<f64>::load(p("ckpt.json")).unwrap();
    assert_eq!(ckpt, outcome.checkpoint);
    let eval = EvalConfig {
        preservation_k: 5,
        ..Default::default()
    };
    assert_eq!(
        evaluate_checkpoint(&ckpt, &loaded, &omega2, &eval).unwrap(),
        evaluate_checkpoint(&outcome.checkpoint, &loaded, &omega, &eval).unwrap()
    );
}

#[test]
fn visual_neighbors_train_too() {
    let data: PairDataset<f64> = generate_synthetic(&synthetic_config()).unwrap();
    let visual = neighbor_source_variant(&data, NeighborSource::ImageVisual, None).unwrap();
    let table = build_index(&visual, &IndexConfig::default()).unwrap().build_table(8, NeighborSource::ImageVisual);
    let mut cfg = small_train(4);
    cfg.neighbor_source = NeighborSource::ImageVisual;
    let outcome = train(&data, Some(&table), &cfg).unwrap();
    assert!(outcome.metrics.last().unwrap().train_loss < outcome.metrics[0].train_loss);
}
