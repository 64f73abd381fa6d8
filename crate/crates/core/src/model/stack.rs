//! The L-layer two-stream recurrence.

use rand::Rng;

use super::ean::{daee_lookup, ean_attend, EanParams, EmotionEmbeddings};
use super::interaction::{biaffine_exchange, BiAffineParams};
use super::san::{san_attend, RelationKind, SanParams, SpeakerRelationGraph};
use super::EmotionMode;
use crate::autograd::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ean: Option<EanParams>,
    pub san: SanParams,
    pub biaffine: Option<BiAffineParams>,
}

/// Per-layer parameters plus the settings shared by every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TsamStack {
    pub layers: Vec<LayerParams>,
    pub emotion: EmotionMode,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl TsamStack {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        layers: usize,
        d_h: usize,
        heads: usize,
        emotion: EmotionMode,
        relations: &[RelationKind],
        interaction: bool,
        dropout: f64,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let prefix = format!("layer{l}");
            let ean = match emotion {
                EmotionMode::Ean => Some(EanParams::init(store, &prefix, d_h, heads, rng)?),
                _ => None,
            };
            let san = SanParams::init(store, &prefix, relations, d_h, rng)?;
            let biaffine = if interaction {
                Some(BiAffineParams::init(store, &prefix, d_h, rng)?)
            } else {
                None
            };
            out.push(LayerParams { ean, san, biaffine });
        }
        Ok(Self {
            layers: out,
            emotion,
            dropout,
            leaky_slope,
        })
    }
}

/// Attention matrices recorded by one layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerTrace {
    pub ean: Vec<Var>,
    pub san: Vec<Var>,
    pub a1: Option<Var>,
    pub a2: Option<Var>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackOutput {
    pub e: Var,
    pub s: Var,
    pub trace: Vec<LayerTrace>,
}

/// Runs `E_0 = S_0 = H^u` through every layer. Dropout is applied to both
/// streams after each layer when `train_rng` is given.
pub fn tsam_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    hu: Var,
    graph: &SpeakerRelationGraph,
    stack: &TsamStack,
    emotions: &EmotionEmbeddings,
    utterance_emotions: &[&str],
    mut train_rng: Option<&mut R>,
) -> Result<StackOutput> {
    let (mut e, mut s) = (hu, hu);
    let mut trace = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        let mut lt = LayerTrace::default();
        let he = match (stack.emotion, &layer.ean) {
            (EmotionMode::Ean, Some(p)) => {
                let (out, attn) = ean_attend(tape, e, emotions, p)?;
                lt.ean = attn;
                out
            }
            (EmotionMode::Daee, _) => daee_lookup(tape, emotions, utterance_emotions)?,
            _ => e,
        };
        let (hs, attn) = san_attend(tape, s, graph, &layer.san, stack.leaky_slope)?;
        lt.san = attn;
        let (mut ne, mut ns) = match &layer.biaffine {
            Some(p) => {
                let x = biaffine_exchange(tape, he, hs, p)?;
                lt.a1 = Some(x.a1);
                lt.a2 = Some(x.a2);
                (x.he, x.hs)
            }
            None => (he, hs),
        };
        if let Some(rng) = train_rng.as_deref_mut() {
            ne = tape.dropout(ne, stack.dropout, true, rng)?;
            ns = tape.dropout(ns, stack.dropout, true, rng)?;
        }
        e = ne;
        s = ns;
        trace.push(lt);
    }
    Ok(StackOutput { e, s, trace })
}
