mod common;

use graphdoc::corpusio::{generate_synthetic, SynthConfig};
use graphdoc::docmodel::{Document, GraphDocModel, ModelConfig};
use graphdoc::gradcore::{check_gradients, ParamStore, Tape, Var};
use graphdoc::retrieval::{
    bm25_run, bm25_search, dense_search, evaluate, fuse, retrieval_batch_loss, training_pairs, tune_fusion_weight,
    Bm25Index, Bm25Params, DenseIndex, EvalOptions, Gain, Hit, Metric, MetricKind, Qrels, Run, TuneOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64) -> GraphDocModel {
    let cfg = ModelConfig {
        d_model: 8,
        d_tok: 8,
        vocab_buckets: 64,
        ..ModelConfig::default()
    };
    GraphDocModel::init(cfg, seed).unwrap()
}

fn single(ranking: &[&str]) -> Run {
    let mut run = Run::new();
    run.insert(
        "q",
        ranking.iter().enumerate().map(|(i, d)| Hit::new(*d, -(i as f64))).collect(),
    );
    run
}

#[test]
fn hand_computed_metrics() {
    let mut qrels = Qrels::new();
    qrels.insert("q", "d1", 2);
    qrels.insert("q", "d2", 1);
    let run = single(&["d3", "d1", "d2"]);
    let m = |kind, k| Metric::new(kind, k).unwrap();
    let opts = EvalOptions::default();
    assert!((evaluate(&run, &qrels, m(MetricKind::Precision, 3), opts).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(evaluate(&run, &qrels, m(MetricKind::Mrr, 3), opts).unwrap(), 0.5);
    assert_eq!(evaluate(&run, &qrels, m(MetricKind::Mrr, 1), opts).unwrap(), 0.0);
    assert!((evaluate(&run, &qrels, m(MetricKind::Ndcg, 3), opts).unwrap() - 0.66967181649423).abs() < 1e-12);
    let exp = EvalOptions {
        gain: Gain::Exponential,
        ..opts
    };
    assert!((evaluate(&run, &qrels, m(MetricKind::Ndcg, 3), exp).unwrap() - 0.6590018048024133).abs() < 1e-12);
    let strict = EvalOptions {
        relevance_level: 2,
        ..opts
    };
    assert!((evaluate(&run, &qrels, m(MetricKind::Precision, 3), strict).unwrap() - 1.0 / 3.0).abs() < 1e-12);

    let perfect = single(&["d1", "d2", "d3"]);
    assert_eq!(evaluate(&perfect, &qrels, m(MetricKind::Ndcg, 10), opts).unwrap(), 1.0);
    assert_eq!(evaluate(&perfect, &qrels, m(MetricKind::Mrr, 10), opts).unwrap(), 1.0);
}

#[test]
fn unjudged_queries_score_zero_and_count() {
    let mut qrels = Qrels::new();
    qrels.insert("q", "d1", 1);
    let mut run = single(&["d1"]);
    run.insert("other", vec![Hit::new("d1", 1.0)]);
    let mrr = Metric::new(MetricKind::Mrr, 10).unwrap();
    assert_eq!(evaluate(&run, &qrels, mrr, EvalOptions::default()).unwrap(), 0.5);
}

#[test]
fn retrieval_loss_with_indistinguishable_candidates_is_ln_2() {
    let model = small_model(0);
    let doc = Document::from_passages("d", ["some words here", "and more there"]);
    let mut tape = Tape::new();
    let loss = retrieval_batch_loss(&mut tape, &model, &["a query"], &[&doc], &[&doc]).unwrap();
    assert!((tape.value(loss).data()[0] - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn retrieval_loss_gradients_match_finite_differences() {
    let model = small_model(3);
    let cfg = model.config().clone();
    let docs = [
        Document::from_passages("a", ["red green", "blue teal"]),
        Document::from_passages("b", ["one two three", "four"]),
        Document::from_passages("c", ["alpha beta", "gamma", "delta"]),
    ];
    let loss = |tape: &mut Tape, params: &ParamStore| -> graphdoc::Result<Var> {
        let m = GraphDocModel::from_parts(cfg.clone(), params.clone(), vec![])?;
        retrieval_batch_loss(tape, &m, &["red blue", "three four"], &[&docs[0], &docs[1]], &[&docs[2], &docs[0]])
    };
    let report = check_gradients(loss, model.params(), 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn initial_retrieval_loss_is_near_uniform() {
    let corpus = generate_synthetic(&SynthConfig {
        docs: 100,
        queries: (32, 0, 0),
        ..SynthConfig::default()
    })
    .unwrap();
    let model = GraphDocModel::init(
        ModelConfig {
            d_model: 64,
            d_tok: 32,
            vocab_buckets: 4096,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let pairs = training_pairs(&corpus.split("train"), &corpus.qrels);
    let by_id = |id: &str| corpus.documents.iter().find(|d| d.id == id).unwrap();
    let texts: Vec<&str> = pairs.iter().map(|p| p.text.as_str()).collect();
    let pos: Vec<&Document> = pairs.iter().map(|p| by_id(&p.positive)).collect();
    let neg: Vec<&Document> = pos.iter().rev().copied().collect();
    let mut tape = Tape::new();
    let loss = retrieval_batch_loss(&mut tape, &model, &texts, &pos, &neg).unwrap();
    let expected = (64f64).ln();
    let got = tape.value(loss).data()[0];
    assert!((got - expected).abs() < 0.15 * expected, "{got} vs {expected}");
}

#[test]
fn dense_search_ranks_by_dot_product() {
    let index = DenseIndex::new(
        vec!["a".into(), "b".into(), "c".into()],
        2,
        vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
    )
    .unwrap();
    let hits = dense_search(&index, &[2.0, 1.0], 2).unwrap();
    assert_eq!(hits, vec![Hit::new("a", 2.0), Hit::new("c", 2.0)]);
    assert!(dense_search(&index, &[1.0], 2).is_err());
    let back = DenseIndex::from_tsv(&index.to_tsv(), "x").unwrap();
    assert_eq!(back, index);
}

#[test]
fn tuned_fusion_is_never_worse_than_either_system() {
    let corpus = generate_synthetic(&SynthConfig {
        docs: 60,
        queries: (0, 20, 0),
        ..SynthConfig::default()
    })
    .unwrap();
    let dev = corpus.split("dev");
    let bm25 = bm25_run(&Bm25Index::build(&corpus.documents, Bm25Params::default()).unwrap(), &dev, 100);
    let model = small_model(1);
    let index = DenseIndex::encode(&model, &corpus.documents).unwrap();
    let dense = graphdoc::retrieval::dense_run(&model, &index, &dev, 100).unwrap();
    let metric = Metric::new(MetricKind::Mrr, 10).unwrap();
    let t = tune_fusion_weight(&dense, &bm25, &corpus.qrels, &TuneOptions::new(metric)).unwrap();
    let opts = EvalOptions::default();
    let d = evaluate(&dense, &corpus.qrels, metric, opts).unwrap();
    let b = evaluate(&bm25, &corpus.qrels, metric, opts).unwrap();
    assert!(t.value >= d.max(b));
    assert_eq!(t.grid.len(), 21);
    let fused = fuse(&dense, &bm25, t.weight, 100).unwrap();
    assert_eq!(evaluate(&fused, &corpus.qrels, metric, opts).unwrap(), t.value);
}

#[test]
fn run_and_qrels_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new();
    run.insert("q1", vec![Hit::new("d2", 1.5), Hit::new("d1", 0.25)]);
    run.insert("q2", vec![Hit::new("d9", -3.0)]);
    let path = dir.path().join("run.trec");
    std::fs::write(&path, run.to_trec("sys")).unwrap();
    let back = Run::from_trec(&std::fs::read_to_string(&path).unwrap(), "run.trec").unwrap();
    assert_eq!(back, run);
    let mut qrels = Qrels::new();
    qrels.insert("q1", "d1", 2);
    qrels.insert("q2", "d4", 0);
    assert_eq!(Qrels::from_text(&qrels.to_text(), "q").unwrap(), qrels);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bm25_search_equals_exhaustive_scoring(seed in any::<u64>(), k in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (docs, query) = common::toy_corpus(&mut rng);
        let params = Bm25Params::default();
        let index = Bm25Index::from_texts(&docs, params).unwrap();
        let got: Vec<(String, f64)> = bm25_search(&index, &query, k).into_iter().map(|h| (h.doc_id, h.score)).collect();
        let want = common::brute_force_bm25(&docs, &query, params.k1, params.b, k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn fusion_endpoints_reproduce_components(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dense, bm25) = common::random_run_pair(&mut rng);
        let at0 = fuse(&dense, &bm25, 0.0, 100).unwrap();
        let at1 = fuse(&dense, &bm25, 1.0, 100).unwrap();
        for (qid, hits) in &bm25.queries {
            prop_assert_eq!(at0.get(qid).unwrap(), hits.as_slice());
        }
        for (qid, hits) in &dense.queries {
            prop_assert_eq!(at1.get(qid).unwrap(), hits.as_slice());
        }
    }

    #[test]
    fn metrics_match_reference(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let mut ranking: Vec<&str> = ids.iter().map(String::as_str).collect();
        rand::seq::SliceRandom::shuffle(ranking.as_mut_slice(), &mut rng);
        ranking.truncate(rng.gen_range(0..=10));
        let grades: Vec<(&str, u32)> = ids.iter().map(|d| (d.as_str(), rng.gen_range(0..3))).collect();
        let mut qrels = Qrels::new();
        for (d, g) in &grades {
            qrels.insert("q", *d, *g);
        }
        let run = single(&ranking);
        let (p, rr, nd) = common::reference_metrics(&ranking, &grades, k);
        let opts = EvalOptions::default();
        let v = |kind| evaluate(&run, &qrels, Metric::new(kind, k).unwrap(), opts).unwrap();
        prop_assert!((v(MetricKind::Precision) - p).abs() < 1e-9);
        prop_assert!((v(MetricKind::Mrr) - rr).abs() < 1e-9);
        prop_assert!((v(MetricKind::Ndcg) - nd).abs() < 1e-9);
    }
}
