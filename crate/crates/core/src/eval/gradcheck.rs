//! Finite-difference checks of every layer on small random instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad_check, GradCheckReport, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::data::{ConversationSample, EmotionLabels, Utterance};
use crate::error::Result;
use crate::model::{
    biaffine_exchange, build_relation_graph, daee_lookup, ean_attend, encode_history, head_forward,
    init_emotion_embeddings, san_attend, BiAffineParams, EanParams, EncoderParams, EmotionMode, HeadParams,
    ModelConfig, RelationKind, SanParams, TsamModel,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const VOCAB: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckShape {
    pub t: usize,
    pub d_h: usize,
    pub heads: usize,
}

impl CheckShape {
    /// Cycles through `t ∈ 1..=4`, `d_h ∈ {8, 16}` and `heads ∈ {1, 2, 4}`.
    pub fn for_seed(seed: u64) -> Self {
        let k = seed as usize;
        Self {
            t: 1 + k % 4,
            d_h: [8, 16][k % 2],
            heads: [1, 2, 4][k % 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub seed: u64,
    pub shape: CheckShape,
    pub report: GradCheckReport,
}

pub fn random_sample<R: Rng + ?Sized>(rng: &mut R, t: usize, vocab: usize, labels: &EmotionLabels) -> ConversationSample {
    let utterances = (0..t)
        .map(|i| Utterance {
            index: i + 1,
            speaker: if rng.random_bool(0.5) { "A" } else { "B" }.to_string(),
            emotion: labels.labels()[rng.random_range(0..labels.len())].clone(),
            tokens: (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..vocab as u32)).collect(),
            text: None,
        })
        .collect();
    ConversationSample {
        conversation_id: "check".into(),
        utterances,
        cause_mask: (0..t).map(|_| rng.random_bool(0.5)).collect(),
        cause_types: None,
    }
}

fn input<R: Rng + ?Sized>(store: &mut ParamStore<f64>, name: &str, t: usize, d: usize, rng: &mut R) -> Result<ParamId> {
    store.add(name, ParamGroup::Other, Tensor::randn(&[t, d], 1.0, rng))
}

fn readout(tape: &mut Tape<'_, f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let c = tape.constant(weights.clone());
    let y = tape.matmul(out, c)?;
    let y = tape.sigmoid(y)?;
    tape.sum(y)
}

fn config(shape: CheckShape, layers: usize) -> ModelConfig {
    ModelConfig {
        d_h: shape.d_h,
        encoder_dim: shape.d_h,
        heads: shape.heads,
        layers,
        vocab_size: VOCAB,
        max_history: 4,
        ..ModelConfig::default()
    }
}

/// Checks the encoder, EAN, DAEE, SAN, BiAffine exchange and head in
/// isolation and the full training loss of an `L = 3` model.
pub fn check_layers(seed: u64, shape: CheckShape) -> Result<Vec<LayerCheck>> {
    let mut rng = stream_rng(seed, Stream::Init);
    let rng = &mut rng;
    let CheckShape { t, d_h, heads } = shape;
    let labels = EmotionLabels::default();
    let sample = random_sample(rng, t, VOCAB, &labels);
    let emotions: Vec<&str> = sample.utterances.iter().map(|u| u.emotion.as_str()).collect();
    let w_one = Tensor::randn(&[d_h, 2], 1.0, rng);
    let w_two = Tensor::randn(&[2 * d_h, 2], 1.0, rng);
    let mut out = Vec::new();
    let mut push = |layer: &str, report: GradCheckReport| {
        out.push(LayerCheck {
            layer: layer.into(),
            seed,
            shape,
            report,
        })
    };

    let cfg = config(shape, 0);
    let mut store = ParamStore::new();
    let enc = EncoderParams::init(&mut store, &cfg, rng)?;
    let rep = grad_check(
        &mut store,
        |tape| {
            let hu = encode_history(tape, &enc, &cfg, &sample)?;
            readout(tape, hu, &w_one)
        },
        STEP,
        TOLERANCE,
    )?;
    push("encoder", rep);

    let mut store = ParamStore::new();
    let x = input(&mut store, "input", t, d_h, rng)?;
    let table = init_emotion_embeddings(&mut store, labels.labels(), d_h, 1.0, rng)?;
    let ean = EanParams::init(&mut store, "check", d_h, heads, rng)?;
    let rep = grad_check(
        &mut store,
        |tape| {
            let xv = tape.param(x);
            let (he, _) = ean_attend(tape, xv, &table, &ean)?;
            readout(tape, he, &w_one)
        },
        STEP,
        TOLERANCE,
    )?;
    push("ean", rep);
    let rep = grad_check(
        &mut store,
        |tape| {
            let he = daee_lookup(tape, &table, &emotions)?;
            readout(tape, he, &w_one)
        },
        STEP,
        TOLERANCE,
    )?;
    push("daee", rep);

    let mut store = ParamStore::new();
    let x = input(&mut store, "input", t, d_h, rng)?;
    let san = SanParams::init(&mut store, "check", &[RelationKind::Intra, RelationKind::Inter], d_h, rng)?;
    let graph = build_relation_graph(&sample.speakers());
    let rep = grad_check(
        &mut store,
        |tape| {
            let xv = tape.param(x);
            let (hs, _) = san_attend(tape, xv, &graph, &san, 0.2)?;
            readout(tape, hs, &w_one)
        },
        STEP,
        TOLERANCE,
    )?;
    push("san", rep);

    let mut store = ParamStore::new();
    let he = input(&mut store, "emotion_input", t, d_h, rng)?;
    let hs = input(&mut store, "speaker_input", t, d_h, rng)?;
    let bi = BiAffineParams::init(&mut store, "check", d_h, rng)?;
    let rep = grad_check(
        &mut store,
        |tape| {
            let (a, b) = (tape.param(he), tape.param(hs));
            let x = biaffine_exchange(tape, a, b, &bi)?;
            let y = tape.concat_cols(&[x.he, x.hs])?;
            readout(tape, y, &w_two)
        },
        STEP,
        TOLERANCE,
    )?;
    push("biaffine", rep);

    let mut store = ParamStore::new();
    let e = input(&mut store, "emotion_input", t, d_h, rng)?;
    let s = input(&mut store, "speaker_input", t, d_h, rng)?;
    let head = HeadParams::init(&mut store, d_h, rng)?;
    let rep = grad_check(
        &mut store,
        |tape| {
            let (a, b) = (tape.param(e), tape.param(s));
            let p = head_forward(tape, a, b, &head)?;
            tape.sum(p)
        },
        STEP,
        TOLERANCE,
    )?;
    push("head", rep);

    let mut cfg = config(shape, 3);
    cfg.emotion = EmotionMode::Ean;
    let model = TsamModel::<f64>::init_with(cfg, rng)?;
    let mut store = model.store.clone();
    let rep = grad_check(
        &mut store,
        |tape| model.loss::<rand_chacha::ChaCha8Rng>(tape, &sample, None),
        STEP,
        TOLERANCE,
    )?;
    push("stack", rep);
    Ok(out)
}
