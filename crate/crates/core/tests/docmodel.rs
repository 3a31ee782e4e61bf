mod common;

use graphdoc::docmodel::{
    build_graph, gat_layer, Document, DocumentGraph, GatLayer, GraphDocModel, GraphTopology, ModelConfig, Phase,
};
use graphdoc::gradcore::{check_gradients, ParamStore, Tape, Tensor, Var};
use graphdoc::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(topology: GraphTopology) -> ModelConfig {
    ModelConfig {
        d_model: 4,
        d_tok: 4,
        heads: 2,
        layers: 2,
        vocab_buckets: 128,
        max_tokens: 32,
        topology,
        ..ModelConfig::default()
    }
}

fn path_layer_params() -> ParamStore {
    let mut p = ParamStore::new();
    p.insert("gat.0.head0.weight", Tensor::matrix(2, 2, vec![1.0, 0.5, -0.5, 1.0]).unwrap());
    p.insert("gat.0.head0.attn", Tensor::vector(vec![0.3, -0.2, 0.4, 0.1]));
    p
}

#[test]
fn three_node_path_matches_hand_computation() {
    // One section of two passages: edges 0–1 and 1–2 only.
    let doc = Document::from_passages("p", ["a", "b"]);
    let graph = build_graph(&doc, GraphTopology::Section { lead_clique: true }).unwrap();
    assert!(graph.has_edge(0, 1) && graph.has_edge(1, 2) && !graph.has_edge(0, 2));

    let params = path_layer_params();
    let layer = GatLayer {
        index: 0,
        heads: 1,
        d_head: 2,
        slope: 0.2,
    };
    let mut tape = Tape::new();
    let states = tape
        .input(Tensor::matrix(3, 2, vec![0.5, -0.2, 0.1, 0.4, -0.3, 0.8]).unwrap())
        .unwrap();
    let (out, alphas) = gat_layer(&mut tape, &params, &layer, &graph, states).unwrap();

    // Frozen from an independent numpy evaluation.
    let expected_alpha = [
        [0.4900013331200346, 0.5099986668799655, 0.0],
        [0.32668933107280346, 0.340021775594278, 0.33328889333291856],
        [0.0, 0.5009999986666688, 0.4990000013333312],
    ];
    let expected_out = [
        [0.8490001333120035, -0.24113124205778214],
        [0.36601115444069665, 0.6886218711415084],
        [-0.09980000026666619, 1.449400000799999],
    ];
    let alpha = tape.value(alphas[0]);
    let out = tape.value(out);
    for (i, row) in expected_alpha.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!((alpha.at(i, j) - want).abs() < 1e-9);
        }
    }
    for (i, row) in expected_out.iter().enumerate() {
        for (k, want) in row.iter().enumerate() {
            assert!((out.at(i, k) - want).abs() < 1e-9);
        }
    }
    assert_eq!(alpha.at(0, 2), 0.0);
    assert_eq!(alpha.at(2, 0), 0.0);
}

#[test]
fn single_node_attends_to_itself() {
    let params = path_layer_params();
    let layer = GatLayer {
        index: 0,
        heads: 1,
        d_head: 2,
        slope: 0.2,
    };
    let graph = DocumentGraph::single_node();
    let mut tape = Tape::new();
    let v = [0.7, -0.4];
    let states = tape.input(Tensor::matrix(1, 2, v.to_vec()).unwrap()).unwrap();
    let (out, alphas) = gat_layer(&mut tape, &params, &layer, &graph, states).unwrap();
    assert_eq!(tape.value(alphas[0]).data(), &[1.0]);
    // W v = [0.7 - 0.2, -0.35 - 0.4] = [0.5, -0.75]
    let expected = [0.5 + 0.7, (-0.75f64).exp_m1() - 0.4];
    for (o, e) in tape.value(out).data().iter().zip(expected) {
        assert!((o - e).abs() < 1e-15);
    }
}

#[test]
fn equal_states_give_equal_rows() {
    let model = GraphDocModel::init(small_config(GraphTopology::FullyConnected), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let doc = common::random_doc(&mut rng, 3, 3);
        let graph = build_graph(&doc, GraphTopology::Section { lead_clique: true }).unwrap();
        let n = graph.node_count();
        let row = [0.3, -0.1, 0.8, 0.05];
        let mut tape = Tape::new();
        let states = tape
            .input(Tensor::matrix(n, 4, row.iter().copied().cycle().take(4 * n).collect()).unwrap())
            .unwrap();
        let layer = GatLayer::new(model.config(), 0);
        let (out, _) = gat_layer(&mut tape, model.params(), &layer, &graph, states).unwrap();
        let out = tape.value(out);
        for i in 1..n {
            for (a, b) in out.row(i).iter().zip(out.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn state_rows_must_match_graph() {
    let model = GraphDocModel::init(small_config(GraphTopology::FullyConnected), 5).unwrap();
    let graph = build_graph(&Document::from_passages("d", ["x", "y"]), GraphTopology::FullyConnected).unwrap();
    let mut tape = Tape::new();
    let states = tape.input(Tensor::zeros(&[2, 4])).unwrap();
    let layer = GatLayer::new(model.config(), 0);
    assert!(matches!(
        gat_layer(&mut tape, model.params(), &layer, &graph, states),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn forward_matches_reference_implementation() {
    for topology in [
        GraphTopology::FullyConnected,
        GraphTopology::Section { lead_clique: true },
        GraphTopology::Section { lead_clique: false },
    ] {
        let model = GraphDocModel::init(small_config(topology), 11).unwrap();
        let two = Document::from_passages("two", ["graph attention networks", "contrastive sub documents"]);
        let got = model.encode_document(&two).unwrap();
        let want = common::reference_document(&model, &two);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{topology}: {got:?} vs {want:?}");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let doc = common::random_doc(&mut rng, 4, 4);
            let got = model.encode_document(&doc).unwrap();
            let want = common::reference_document(&model, &doc);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fully_connected_is_permutation_invariant() {
    let model = GraphDocModel::init(small_config(GraphTopology::FullyConnected), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..25 {
        let doc = common::random_doc(&mut rng, 1, 8);
        let mut shuffled = doc.sections[0].clone();
        shuffled.shuffle(&mut rng);
        let permuted = Document::new("doc", vec![shuffled]);
        let a = model.encode_document(&doc).unwrap();
        let b = model.encode_document(&permuted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn empty_document_is_an_error() {
    let model = GraphDocModel::init(small_config(GraphTopology::FullyConnected), 3).unwrap();
    assert!(matches!(
        model.encode_document(&Document::new("e", vec![])),
        Err(Error::EmptyDocument(_))
    ));
}

#[test]
fn encoder_outputs_stay_inside_unit_interval() {
    let model = GraphDocModel::init(small_config(GraphTopology::FullyConnected), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.gen_range(0..30);
        let v = model.encode_query(&common::random_text(&mut rng, n)).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1.0));
    }
}

#[test]
fn whole_forward_pass_gradients_match_finite_differences() {
    let config = ModelConfig {
        vocab_buckets: 32,
        ..small_config(GraphTopology::Section { lead_clique: true })
    };
    let model = GraphDocModel::init(config.clone(), 21).unwrap();
    let doc = Document::new(
        "g",
        vec![
            vec!["one two three".into(), "four five".into()],
            vec!["six seven eight nine".into()],
        ],
    );
    let probe = Tensor::matrix(4, 1, vec![0.7, -1.3, 0.4, 0.9]).unwrap();
    let loss = |tape: &mut Tape, params: &ParamStore| -> graphdoc::Result<Var> {
        let m = GraphDocModel::from_parts(config.clone(), params.clone(), vec![])?;
        let fwd = m.forward_document(tape, &doc, Phase::Train)?;
        let p = tape.input(probe.clone())?;
        let s = tape.matmul(fwd.embedding, p)?;
        let s = tape.tanh(s)?;
        Ok(tape.sum(s)?)
    };
    let report = check_gradients(loss, model.params(), 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), section in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = if section {
            GraphTopology::Section { lead_clique: rng.gen() }
        } else {
            GraphTopology::FullyConnected
        };
        let model = GraphDocModel::init(small_config(topology), seed).unwrap();
        let doc = common::random_doc(&mut rng, 4, 4);
        let mut tape = Tape::new();
        let fwd = model.forward_document(&mut tape, &doc, Phase::Infer).unwrap();
        for alphas in &fwd.attention {
            for &a in alphas {
                let a = tape.value(a);
                for i in 0..a.rows() {
                    let row = a.row(i);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for (j, &v) in row.iter().enumerate() {
                        if fwd.graph.has_edge(i, j) {
                            prop_assert!(v > 0.0);
                        } else {
                            prop_assert_eq!(v, 0.0);
                        }
                    }
                }
            }
        }
    }
}
