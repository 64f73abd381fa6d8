mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tsam::autograd::{grad_check, ParamGroup, ParamId, ParamStore, Tape, Var};
use tsam::data::EmotionLabels;
use tsam::model::*;
use tsam::tensor::Tensor;
use tsam::TsamError;

const LABELS: [&str; 7] = ["happy", "sad", "angry", "fearful", "surprised", "disgusted", "neutral"];

fn labels(n: usize) -> Vec<String> {
    LABELS[LABELS.len() - n..].iter().map(|s| s.to_string()).collect()
}

fn store_mat(store: &ParamStore<f64>, id: ParamId) -> Mat {
    to_mat(store.get(id))
}

fn input(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng, t: usize, d: usize) -> ParamId {
    store
        .add("input", ParamGroup::Other, from_mat(&random_mat(r, t, d, 1.0)))
        .unwrap()
}

/// Nonlinear scalar readout of a `t × d` output, for gradient checks.
fn readout(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> tsam::Result<Var> {
    let d = tape.value(out).cols();
    let c = tape.constant(from_mat(&random_mat(&mut rng(seed), d, 2, 1.0)));
    let y = tape.matmul(out, c)?;
    let y = tape.sigmoid(y)?;
    tape.sum(y)
}

struct EanFixture {
    store: ParamStore<f64>,
    x: ParamId,
    emb: EmotionEmbeddings,
    params: EanParams,
}

fn ean_fixture(seed: u64, t: usize, d_h: usize, heads: usize, n_labels: usize) -> EanFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let x = input(&mut store, &mut r, t, d_h);
    let emb = init_emotion_embeddings(&mut store, &labels(n_labels), d_h, 0.02, &mut r).unwrap();
    // Larger embeddings than the default init so attention is not uniform.
    for v in store.get_mut(emb.table).data_mut() {
        *v *= 40.0;
    }
    let params = EanParams::init(&mut store, "l0", d_h, heads, &mut r).unwrap();
    EanFixture { store, x, emb, params }
}

fn ean_oracle(f: &EanFixture) -> (Mat, Vec<Mat>) {
    let q = store_mat(&f.store, f.x);
    let table = store_mat(&f.store, f.emb.table);
    let d_h = q[0].len();
    let mut out = vec![Vec::new(); q.len()];
    let mut alphas = Vec::new();
    for j in 0..f.params.heads() {
        let (h, a) = ean_head(
            &q,
            &table,
            &store_mat(&f.store, f.params.query[j]),
            &store_mat(&f.store, f.params.key[j]),
            &store_mat(&f.store, f.params.value[j]),
            d_h,
        );
        for (o, row) in out.iter_mut().zip(h) {
            o.extend(row);
        }
        alphas.push(a);
    }
    (out, alphas)
}

#[test]
fn emotion_embedding_init_shape_and_determinism() {
    let mut s1 = ParamStore::<f64>::new();
    let mut s2 = ParamStore::<f64>::new();
    let a = init_emotion_embeddings(&mut s1, &labels(7), 64, 0.02, &mut rng(3)).unwrap();
    let b = init_emotion_embeddings(&mut s2, &labels(7), 64, 0.02, &mut rng(3)).unwrap();
    assert_eq!(s1.get(a.table).shape(), &[7, 64]);
    assert_eq!(s1.get(a.table), s2.get(b.table));
    let dup = vec!["happy".to_string(), "happy".to_string()];
    assert!(init_emotion_embeddings(&mut ParamStore::<f64>::new(), &dup, 4, 0.02, &mut rng(0)).is_err());
}

#[test]
fn ean_single_label_attention_is_one() {
    let f = ean_fixture(1, 3, 4, 1, 1);
    let mut tape = Tape::with_params(&f.store);
    let x = tape.param(f.x);
    let (out, attn) = ean_attend(&mut tape, x, &f.emb, &f.params).unwrap();
    assert!(tape.value(attn[0]).data().iter().all(|&a| a == 1.0));
    let expected = matmul(&store_mat(&f.store, f.emb.table), &store_mat(&f.store, f.params.value[0]));
    for i in 0..3 {
        assert_eq!(tape.value(out).row(i), expected[0].as_slice());
    }
}

#[test]
fn ean_matches_dense_oracle() {
    for seed in 0..20 {
        for heads in [1, 2, 4] {
            let f = ean_fixture(seed, 1 + seed as usize % 4, 8, heads, 7);
            let mut tape = Tape::with_params(&f.store);
            let x = tape.param(f.x);
            let (out, attn) = ean_attend(&mut tape, x, &f.emb, &f.params).unwrap();
            let (want, alphas) = ean_oracle(&f);
            assert!(max_abs_diff(&to_mat(tape.value(out)), &want) < 1e-12);
            for (a, w) in attn.iter().zip(&alphas) {
                assert!(max_abs_diff(&to_mat(tape.value(*a)), w) < 1e-12);
                for row in to_mat(tape.value(*a)) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn ean_rejects_indivisible_heads() {
    let mut store = ParamStore::<f64>::new();
    let err = EanParams::init(&mut store, "l0", 6, 4, &mut rng(0)).unwrap_err();
    assert!(matches!(err, TsamError::Config { ref field, .. } if field == "heads"));
}

#[test]
fn ean_is_equivariant_to_label_order() {
    let f = ean_fixture(9, 3, 8, 2, 5);
    let run = |store: &ParamStore<f64>, emb: &EmotionEmbeddings| {
        let mut tape = Tape::with_params(store);
        let x = tape.param(f.x);
        let (out, attn) = ean_attend(&mut tape, x, emb, &f.params).unwrap();
        (to_mat(tape.value(out)), attn.iter().map(|a| to_mat(tape.value(*a))).collect::<Vec<_>>())
    };
    let (out, attn) = run(&f.store, &f.emb);
    let perm = [3, 0, 4, 1, 2];
    let mut permuted = f.store.clone();
    let table = store_mat(&f.store, f.emb.table);
    let rows: Mat = perm.iter().map(|&p| table[p].clone()).collect();
    *permuted.get_mut(f.emb.table) = from_mat(&rows);
    let (out2, attn2) = run(&permuted, &f.emb);
    assert!(max_abs_diff(&out, &out2) < 1e-12);
    for (a, b) in attn.iter().zip(&attn2) {
        for i in 0..a.len() {
            for (k, &p) in perm.iter().enumerate() {
                assert!((a[i][p] - b[i][k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn daee_gathers_gold_rows() {
    let mut store = ParamStore::<f64>::new();
    let emb = init_emotion_embeddings(&mut store, &labels(7), 4, 0.02, &mut rng(2)).unwrap();
    let table = store_mat(&store, emb.table);
    let gold = ["sad", "neutral", "sad", "happy"];
    let mut tape = Tape::with_params(&store);
    let out = daee_lookup(&mut tape, &emb, &gold).unwrap();
    let got = to_mat(tape.value(out));
    for (row, label) in got.iter().zip(gold) {
        let k = LABELS.iter().position(|l| *l == label).unwrap();
        assert_eq!(row, &table[k]);
    }
    assert_eq!(got[0], got[2]);
    assert!(matches!(
        daee_lookup(&mut tape, &emb, &["bored"]),
        Err(TsamError::UnknownEmotion(_))
    ));
}

struct SanFixture {
    store: ParamStore<f64>,
    x: ParamId,
    params: SanParams,
}

fn san_fixture(seed: u64, t: usize, d: usize, kinds: &[RelationKind]) -> SanFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let x = input(&mut store, &mut r, t, d);
    let params = SanParams::init(&mut store, "l0", kinds, d, &mut r).unwrap();
    for (_, _, a) in &params.relations {
        for v in store.get_mut(*a).data_mut() {
            *v *= 3.0;
        }
    }
    SanFixture { store, x, params }
}

fn san_run(f: &SanFixture, store: &ParamStore<f64>, graph: &SpeakerRelationGraph) -> (Mat, Vec<Mat>) {
    let mut tape = Tape::with_params(store);
    let x = tape.param(f.x);
    let (out, attn) = san_attend(&mut tape, x, graph, &f.params, 0.2).unwrap();
    (to_mat(tape.value(out)), attn.iter().map(|a| to_mat(tape.value(*a))).collect())
}

fn san_oracle(f: &SanFixture, speakers: &[&str]) -> Mat {
    let h = store_mat(&f.store, f.x);
    let owned: Vec<String> = speakers.iter().map(|s| s.to_string()).collect();
    let rels = f
        .params
        .relations
        .iter()
        .map(|&(kind, w, a)| {
            let sp = owned.clone();
            let edge: Box<dyn Fn(usize, usize) -> bool> = match kind {
                RelationKind::Intra => Box::new(move |i, j| sp[i] == sp[j]),
                RelationKind::Inter => Box::new(move |i, j| sp[i] != sp[j]),
                RelationKind::All => Box::new(|_, _| true),
            };
            (store_mat(&f.store, w), f.store.get(a).data().to_vec(), edge)
        })
        .collect::<Vec<_>>();
    san_dense(&h, &rels, 0.2)
}

const BOTH: [RelationKind; 2] = [RelationKind::Intra, RelationKind::Inter];

#[test]
fn san_single_node_applies_intra_weight() {
    let f = san_fixture(4, 1, 5, &BOTH);
    let (out, attn) = san_run(&f, &f.store, &build_relation_graph(&["A"]));
    let w = store_mat(&f.store, f.params.relations[0].1);
    let h = store_mat(&f.store, f.x);
    let expected = transpose(&matmul(&w, &transpose(&h)));
    assert_eq!(out, expected);
    assert_eq!(attn[0], vec![vec![1.0]]);
    assert_eq!(attn[1], vec![vec![0.0]]);
}

#[test]
fn san_matches_dense_masked_oracle() {
    let (out, _) = {
        let f = san_fixture(11, 3, 4, &BOTH);
        let speakers = ["A", "B", "A"];
        let got = san_run(&f, &f.store, &build_relation_graph(&speakers));
        assert!(max_abs_diff(&got.0, &san_oracle(&f, &speakers)) < 1e-12);
        got
    };
    assert_eq!(out.len(), 3);
    let mut r = rng(12);
    for seed in 0..40 {
        let t = r.random_range(1..=4);
        let speakers: Vec<&str> = (0..t).map(|_| if r.random_bool(0.5) { "A" } else { "B" }).collect();
        let f = san_fixture(seed, t, 8, &BOTH);
        let (got, attn) = san_run(&f, &f.store, &build_relation_graph(&speakers));
        assert!(max_abs_diff(&got, &san_oracle(&f, &speakers)) < 1e-12);
        for a in &attn {
            for row in a {
                let s: f64 = row.iter().sum();
                assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            }
        }
        let single = san_fixture(seed, t, 8, &[RelationKind::All]);
        let (got, _) = san_run(&single, &single.store, &single_relation_graph(t));
        assert!(max_abs_diff(&got, &san_oracle(&single, &speakers)) < 1e-12);
    }
}

#[test]
fn san_depends_only_on_speaker_partition() {
    let f = san_fixture(5, 4, 6, &BOTH);
    let (a, _) = san_run(&f, &f.store, &build_relation_graph(&["A", "B", "B", "A"]));
    let (b, _) = san_run(&f, &f.store, &build_relation_graph(&["B", "A", "A", "B"]));
    let (c, _) = san_run(&f, &f.store, &build_relation_graph(&["x", "y", "y", "x"]));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn san_is_node_permutation_equivariant() {
    let speakers = ["A", "B", "A", "B"];
    let perm = [2, 0, 3, 1];
    let f = san_fixture(6, 4, 6, &BOTH);
    let (out, _) = san_run(&f, &f.store, &build_relation_graph(&speakers));
    let h = store_mat(&f.store, f.x);
    let mut permuted = f.store.clone();
    *permuted.get_mut(f.x) = from_mat(&perm.iter().map(|&p| h[p].clone()).collect());
    let ps: Vec<&str> = perm.iter().map(|&p| speakers[p]).collect();
    let (out2, _) = san_run(&f, &permuted, &build_relation_graph(&ps));
    for (k, &p) in perm.iter().enumerate() {
        for c in 0..6 {
            assert!((out2[k][c] - out[p][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn san_rejects_graph_size_mismatch() {
    let f = san_fixture(0, 3, 4, &BOTH);
    let mut tape = Tape::with_params(&f.store);
    let x = tape.param(f.x);
    let g = build_relation_graph(&["A", "B"]);
    assert!(matches!(
        san_attend(&mut tape, x, &g, &f.params, 0.2),
        Err(TsamError::Shape { .. })
    ));
}

struct BiFixture {
    store: ParamStore<f64>,
    he: ParamId,
    hs: ParamId,
    params: BiAffineParams,
}

fn bi_fixture(seed: u64, t: usize, d: usize) -> BiFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let he = store.add("he", ParamGroup::Other, from_mat(&random_mat(&mut r, t, d, 1.0))).unwrap();
    let hs = store.add("hs", ParamGroup::Other, from_mat(&random_mat(&mut r, t, d, 1.0))).unwrap();
    let params = BiAffineParams::init(&mut store, "l0", d, &mut r).unwrap();
    BiFixture { store, he, hs, params }
}

fn bi_run(f: &BiFixture) -> (Mat, Mat, Mat, Mat) {
    let mut tape = Tape::with_params(&f.store);
    let (he, hs) = (tape.param(f.he), tape.param(f.hs));
    let x = biaffine_exchange(&mut tape, he, hs, &f.params).unwrap();
    let m = |v| to_mat(tape.value(v));
    (m(x.he), m(x.hs), m(x.a1), m(x.a2))
}

#[test]
fn biaffine_single_utterance_swaps_streams() {
    let f = bi_fixture(1, 1, 4);
    let (he2, hs2, a1, a2) = bi_run(&f);
    assert_eq!(a1, vec![vec![1.0]]);
    assert_eq!(a2, vec![vec![1.0]]);
    assert_eq!(he2, store_mat(&f.store, f.hs));
    assert_eq!(hs2, store_mat(&f.store, f.he));
}

#[test]
fn biaffine_matches_dense_oracle() {
    for seed in 0..30 {
        let f = bi_fixture(seed, 1 + seed as usize % 4, 4);
        let got = bi_run(&f);
        let want = biaffine_dense(
            &store_mat(&f.store, f.he),
            &store_mat(&f.store, f.hs),
            &store_mat(&f.store, f.params.w1),
            &store_mat(&f.store, f.params.w2),
        );
        assert!(max_abs_diff(&got.0, &want.0) < 1e-12);
        assert!(max_abs_diff(&got.1, &want.1) < 1e-12);
        assert!(max_abs_diff(&got.2, &want.2) < 1e-12);
        assert!(max_abs_diff(&got.3, &want.3) < 1e-12);
        for row in got.2.iter().chain(&got.3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn biaffine_outputs_are_convex_mixtures() {
    let norm = |r: &Vec<f64>| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    for seed in 0..20 {
        let f = bi_fixture(seed, 4, 6);
        let (he2, hs2, _, _) = bi_run(&f);
        let max_s = store_mat(&f.store, f.hs).iter().map(norm).fold(0.0, f64::max);
        let max_e = store_mat(&f.store, f.he).iter().map(norm).fold(0.0, f64::max);
        assert!(he2.iter().all(|r| norm(r) <= max_s + 1e-12));
        assert!(hs2.iter().all(|r| norm(r) <= max_e + 1e-12));
    }
}

#[test]
fn biaffine_rejects_shape_mismatch() {
    let f = bi_fixture(0, 3, 4);
    let mut tape = Tape::with_params(&f.store);
    let he = tape.param(f.he);
    let hs = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(biaffine_exchange(&mut tape, he, hs, &f.params).is_err());
}

fn head_store(d: usize) -> (ParamStore<f64>, HeadParams) {
    let mut store = ParamStore::new();
    let head = HeadParams::init(&mut store, d, &mut rng(0)).unwrap();
    (store, head)
}

fn head_probs(store: &ParamStore<f64>, head: &HeadParams, e: &Mat, s: &Mat) -> Vec<f64> {
    let mut tape = Tape::with_params(store);
    let (ev, sv) = (tape.constant(from_mat(e)), tape.constant(from_mat(s)));
    let p = head_forward(&mut tape, ev, sv, head).unwrap();
    tape.value(p).data().to_vec()
}

#[test]
fn head_zero_weights_give_one_half() {
    let (mut store, head) = head_store(3);
    for id in [head.w1, head.w2] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let e = random_mat(&mut rng(1), 4, 3, 1.0);
    assert!(head_probs(&store, &head, &e, &e).iter().all(|&p| p == 0.5));
    let pred = Prediction::from_probs(vec![0.5, 0.49], 0.5);
    assert_eq!(pred.labels, vec![true, false]);
}

#[test]
fn head_probabilities_increase_with_output_bias() {
    let (mut store, head) = head_store(4);
    let e = random_mat(&mut rng(2), 3, 4, 1.0);
    let s = random_mat(&mut rng(3), 3, 4, 1.0);
    let mut prev = head_probs(&store, &head, &e, &s);
    for _ in 0..5 {
        store.get_mut(head.b2).data_mut()[0] += 0.3;
        let next = head_probs(&store, &head, &e, &s);
        assert!(next.iter().zip(&prev).all(|(n, p)| n > p));
        prev = next;
    }
}

#[test]
fn head_matches_hand_evaluation() {
    let (mut store, head) = head_store(2);
    *store.get_mut(head.w1) = Tensor::from_rows(&[vec![0.5, -1.0, 0.25, 2.0], vec![-0.5, 1.0, 1.5, -0.75]]).unwrap();
    *store.get_mut(head.b1) = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
    *store.get_mut(head.w2) = Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap();
    *store.get_mut(head.b2) = Tensor::new(vec![1], vec![0.3]).unwrap();
    let (e, s) = (vec![vec![1.0, 2.0]], vec![vec![-1.0, 0.5]]);
    // l1 = relu(0.5 - 2 - 0.25 + 1 + 0.1) = 0, l2 = relu(-0.5 + 2 - 1.5 - 0.375 - 0.2) = 0
    let p = head_probs(&store, &head, &e, &s);
    assert!((p[0] - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-12);
    let (e, s) = (vec![vec![2.0, -1.0]], vec![vec![1.0, 1.0]]);
    // l1 = relu(1 + 1 + 0.25 + 2 + 0.1) = 4.35, l2 = relu(-1 - 1 + 1.5 - 0.75 - 0.2) = 0
    let z: f64 = 1.5 * 4.35 + 0.3;
    let p = head_probs(&store, &head, &e, &s);
    assert!((p[0] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    let want = head_dense(&e, &s, &to_mat(store.get(head.w1)), store.get(head.b1).data(), store.get(head.w2).data(), 0.3);
    assert!((p[0] - want[0]).abs() < 1e-12);
}

#[test]
fn bce_of_one_half_is_ln2() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::with_params(&store);
    let p = tape.constant(Tensor::filled(&[1, 1], 0.5));
    let loss = cause_loss(&mut tape, p, &[true], &store, 0.01, 1e-5).unwrap();
    assert!((tape.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    let p = tape.constant(Tensor::new(vec![3, 1], vec![1.0, 0.0, 1.0]).unwrap());
    let loss = cause_loss(&mut tape, p, &[true, false, true], &store, 0.01, 1e-5).unwrap();
    assert!(tape.value(loss).data()[0] < 1e-11);
}

#[test]
fn l2_penalties_use_separate_weights() {
    let mut store = ParamStore::<f64>::new();
    store.add("enc", ParamGroup::Encoder, Tensor::filled(&[2], 1.0)).unwrap();
    store.add("oth", ParamGroup::Other, Tensor::filled(&[3], 2.0)).unwrap();
    let mut tape = Tape::with_params(&store);
    let p = tape.constant(Tensor::filled(&[1, 1], 0.5));
    let loss = cause_loss(&mut tape, p, &[false], &store, 0.01, 1e-5).unwrap();
    let want = std::f64::consts::LN_2 + 0.01 * 2.0 + 1e-5 * 12.0;
    assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bce_is_nonnegative_and_permutation_invariant(
        rows in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..8),
        rot in 0usize..8,
    ) {
        let store = ParamStore::<f64>::new();
        let eval = |rows: &[(f64, bool)]| {
            let mut tape = Tape::with_params(&store);
            let probs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let gold: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let p = tape.constant(Tensor::new(vec![rows.len(), 1], probs).unwrap());
            let l = cause_loss(&mut tape, p, &gold, &store, 0.01, 1e-5).unwrap();
            tape.value(l).data()[0]
        };
        let a = eval(&rows);
        let mut rotated = rows.clone();
        rotated.rotate_left(rot % rows.len());
        prop_assert!(a >= 0.0);
        prop_assert!((a - eval(&rotated)).abs() < 1e-9);
    }
}

fn small_config(layers: usize, d_h: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        d_h,
        encoder_dim: d_h,
        heads,
        layers,
        vocab_size: 12,
        max_history: 8,
        ..ModelConfig::default()
    }
}

fn sample_for(seed: u64, t: usize) -> tsam::data::ConversationSample {
    random_sample(&mut rng(seed), t, 12, &LABELS)
}

fn eval_forward(model: &TsamModel<f64>, sample: &tsam::data::ConversationSample) -> (Mat, Mat, Mat) {
    let mut tape = model.tape();
    let out = model.forward::<ChaCha8Rng>(&mut tape, sample, None).unwrap();
    let m = |v| to_mat(tape.value(v));
    (m(out.hu), m(out.stack.e), m(out.stack.s))
}

#[test]
fn encoder_output_shape_and_determinism() {
    let model = TsamModel::<f64>::init(small_config(0, 8, 2), 1).unwrap();
    for t in 1..=5 {
        let s = sample_for(t as u64, t);
        let (a, _, _) = eval_forward(&model, &s);
        let (b, _, _) = eval_forward(&model, &s);
        assert_eq!(a.len(), t);
        assert!(a.iter().all(|r| r.len() == 8));
        assert_eq!(a, b);
    }
}

#[test]
fn encoder_is_context_sensitive() {
    let model = TsamModel::<f64>::init(small_config(0, 8, 2), 4).unwrap();
    let mut a = sample_for(1, 3);
    let mut b = sample_for(2, 3);
    a.utterances[2].tokens = vec![5, 6];
    b.utterances[2].tokens = vec![5, 6];
    a.utterances[0].tokens = vec![1, 2, 3];
    b.utterances[0].tokens = vec![9, 10];
    let (ha, _, _) = eval_forward(&model, &a);
    let (hb, _, _) = eval_forward(&model, &b);
    let (x, y) = (&ha[2], &hb[2]);
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let n = |v: &Vec<f64>| v.iter().map(|p| p * p).sum::<f64>().sqrt();
    assert!(dot / (n(x) * n(y)) < 1.0 - 1e-6);
}

#[test]
fn encoder_rejects_bad_inputs() {
    let model = TsamModel::<f64>::init(small_config(0, 8, 2), 1).unwrap();
    let mut s = sample_for(3, 2);
    s.utterances[0].tokens = vec![12];
    assert!(model.predict(&s).is_err());
    let long = sample_for(3, 9);
    assert!(model.predict(&long).is_err());
}

#[test]
fn encoder_token_embeddings_receive_gradient() {
    let model = TsamModel::<f64>::init(small_config(1, 8, 2), 2).unwrap();
    let (_, grads) = model.loss_and_grads::<ChaCha8Rng>(&sample_for(5, 3), None).unwrap();
    assert!(grads.norm(model.encoder.token_embedding) > 0.0);
}

#[test]
fn zero_layers_is_identity() {
    let model = TsamModel::<f64>::init(small_config(0, 8, 2), 1).unwrap();
    let (hu, e, s) = eval_forward(&model, &sample_for(1, 4));
    assert_eq!(hu, e);
    assert_eq!(hu, s);
}

#[test]
fn single_layer_equals_manual_composition() {
    let model = TsamModel::<f64>::init(small_config(1, 8, 2), 3).unwrap();
    let sample = sample_for(8, 4);
    let mut tape = model.tape();
    let out = model.forward::<ChaCha8Rng>(&mut tape, &sample, None).unwrap();
    let layer = &model.stack.layers[0];
    let graph = build_relation_graph(&sample.speakers());
    let (he, _) = ean_attend(&mut tape, out.hu, &model.emotions, layer.ean.as_ref().unwrap()).unwrap();
    let (hs, _) = san_attend(&mut tape, out.hu, &graph, &layer.san, 0.2).unwrap();
    let x = biaffine_exchange(&mut tape, he, hs, layer.biaffine.as_ref().unwrap()).unwrap();
    assert_eq!(tape.value(x.he), tape.value(out.stack.e));
    assert_eq!(tape.value(x.hs), tape.value(out.stack.s));
}

#[test]
fn ablation_wiring() {
    let sample = sample_for(8, 4);
    let mut cfg = small_config(1, 8, 2);
    cfg.interaction = false;
    let model = TsamModel::<f64>::init(cfg.clone(), 3).unwrap();
    assert!(model.stack.layers[0].biaffine.is_none());
    let mut tape = model.tape();
    let out = model.forward::<ChaCha8Rng>(&mut tape, &sample, None).unwrap();
    let layer = &model.stack.layers[0];
    let (he, _) = ean_attend(&mut tape, out.hu, &model.emotions, layer.ean.as_ref().unwrap()).unwrap();
    assert_eq!(tape.value(he), tape.value(out.stack.e));

    cfg.emotion = EmotionMode::None;
    let model = TsamModel::<f64>::init(cfg.clone(), 3).unwrap();
    let (hu, e, _) = eval_forward(&model, &sample);
    assert_eq!(hu, e);

    cfg.emotion = EmotionMode::Daee;
    let model = TsamModel::<f64>::init(cfg.clone(), 3).unwrap();
    let (_, e, _) = eval_forward(&model, &sample);
    let table = to_mat(model.store.get(model.emotions.table));
    let labels = EmotionLabels::default();
    for (row, u) in e.iter().zip(&sample.utterances) {
        assert_eq!(row, &table[labels.index_of(&u.emotion).unwrap()]);
    }

    cfg.speaker_relations = false;
    let model = TsamModel::<f64>::init(cfg, 3).unwrap();
    assert_eq!(model.stack.layers[0].san.relations.len(), 1);
    assert_eq!(model.stack.layers[0].san.relations[0].0, RelationKind::All);
}

#[test]
fn stack_shapes_and_eval_determinism() {
    for layers in 0..=3 {
        let model = TsamModel::<f64>::init(small_config(layers, 8, 4), layers as u64).unwrap();
        let s = sample_for(2, 3);
        let a = eval_forward(&model, &s);
        assert_eq!(a, eval_forward(&model, &s));
        assert!(a.1.len() == 3 && a.1.iter().all(|r| r.len() == 8));
        assert!(a.2.len() == 3 && a.2.iter().all(|r| r.len() == 8));
    }
}

#[test]
fn dropout_only_in_training() {
    let model = TsamModel::<f64>::init(small_config(2, 8, 2), 1).unwrap();
    let s = sample_for(4, 4);
    let mut r = rng(0);
    let mut tape = model.tape();
    let train = model.forward(&mut tape, &s, Some(&mut r)).unwrap();
    let (_, e, _) = eval_forward(&model, &s);
    assert_ne!(to_mat(tape.value(train.stack.e)), e);
}

#[test]
fn one_training_step_moves_emotion_embeddings() {
    let mut model = TsamModel::<f64>::init(small_config(1, 8, 2), 1).unwrap();
    let before = model.store.get(model.emotions.table).clone();
    let (_, grads) = model.loss_and_grads::<ChaCha8Rng>(&sample_for(1, 3), None).unwrap();
    assert!(grads.norm(model.emotions.table) > 0.0);
    let mut adam = tsam::autograd::AdamState::new(&model.store, tsam::autograd::AdamConfig { lr: 1e-3, ..Default::default() });
    adam.step(&mut model.store, &grads).unwrap();
    assert_ne!(model.store.get(model.emotions.table), &before);
}

#[test]
fn layer_gradients_pass_finite_differences() {
    for seed in 0..6u64 {
        let t = 1 + seed as usize % 4;
        for heads in [1, 2, 4] {
            let mut f = ean_fixture(seed, t, 8, heads, 7);
            let (x, emb, params) = (f.x, f.emb.clone(), f.params.clone());
            let rep = grad_check(
                &mut f.store,
                |tape| {
                    let xv = tape.param(x);
                    let (out, _) = ean_attend(tape, xv, &emb, &params)?;
                    readout(tape, out, seed)
                },
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.passed, "ean {rep:?}");
        }
        let speakers: Vec<&str> = (0..t).map(|i| if (seed as usize + i) % 3 == 0 { "A" } else { "B" }).collect();
        let graph = build_relation_graph(&speakers);
        let mut f = san_fixture(seed, t, 8, &BOTH);
        let (x, params) = (f.x, f.params.clone());
        let rep = grad_check(
            &mut f.store,
            |tape| {
                let xv = tape.param(x);
                let (out, _) = san_attend(tape, xv, &graph, &params, 0.2)?;
                readout(tape, out, seed)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "san {rep:?}");
        let mut f = bi_fixture(seed, t, 8);
        let (he, hs, params) = (f.he, f.hs, f.params.clone());
        let rep = grad_check(
            &mut f.store,
            |tape| {
                let (a, b) = (tape.param(he), tape.param(hs));
                let x = biaffine_exchange(tape, a, b, &params)?;
                let y = tape.concat_cols(&[x.he, x.hs])?;
                readout(tape, y, seed)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "biaffine {rep:?}");
    }
}

#[test]
fn full_model_gradients_pass_finite_differences() {
    for layers in 1..=3 {
        for emotion in EmotionMode::ALL {
            let mut cfg = small_config(layers, 8, 2);
            cfg.emotion = emotion;
            let model = TsamModel::<f64>::init(cfg, layers as u64).unwrap();
            let sample = sample_for(layers as u64 + 10, 4);
            let mut store = model.store.clone();
            let rep = grad_check(&mut store, |tape| model.loss::<ChaCha8Rng>(tape, &sample, None), 1e-5, 1e-4).unwrap();
            assert!(rep.passed, "L={layers} {emotion}: {rep:?}");
        }
    }
}
