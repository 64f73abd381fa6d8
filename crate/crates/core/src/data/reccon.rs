//! Conversion from the published RECCON-DD annotation JSON to the canonical
//! line-delimited format.
//!
//! The release maps dialogue ids to a list containing one list of turns:
//!
//! ```json
//! {"tr_1": [[{"turn": 1, "speaker": "A", "utterance": "...", "emotion": "happy",
//!             "expanded emotion cause evidence": [1, "b"]}, ...]]}
//! ```
//!
//! Every non-neutral turn carrying an evidence list becomes one sample whose
//! history runs from turn 1 to that turn. Integer evidence entries mark cause
//! turns; non-integer entries (latent or unmentioned causes) are dropped.

use serde_json::Value;

use super::{ConversationSample, EmotionLabels, Utterance, NEUTRAL};
use crate::error::{Result, TsamError};

const EVIDENCE_KEY: &str = "expanded emotion cause evidence";

/// Maps the release's emotion vocabulary onto the default label set.
pub fn normalize_emotion(raw: &str) -> &str {
    match raw.trim().to_lowercase().as_str() {
        "happy" | "happiness" | "joy" | "excited" => "happy",
        "sad" | "sadness" => "sad",
        "angry" | "anger" => "angry",
        "fear" | "fearful" | "fearsome" => "fearful",
        "surprise" | "surprised" => "surprised",
        "disgust" | "disgusted" => "disgusted",
        "neutral" | "no emotion" => NEUTRAL,
        _ => "",
    }
}

fn bad(msg: String) -> TsamError {
    TsamError::InvalidArgument(format!("reccon: {msg}"))
}

pub fn convert_reccon(json: &str, labels: &EmotionLabels) -> Result<Vec<ConversationSample>> {
    let root: Value = serde_json::from_str(json)?;
    let dialogs = root.as_object().ok_or_else(|| bad("top level must be an object".into()))?;
    let mut out = Vec::new();
    // serde_json keeps keys sorted, so output order is deterministic.
    for (dialog_id, body) in dialogs {
        let turns = body
            .as_array()
            .and_then(|outer| outer.first())
            .and_then(Value::as_array)
            .ok_or_else(|| bad(format!("dialog {dialog_id}: expected [[turn, ...]]")))?;
        let mut history: Vec<Utterance> = Vec::with_capacity(turns.len());
        for (i, turn) in turns.iter().enumerate() {
            let field = |k: &str| {
                turn.get(k)
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad(format!("dialog {dialog_id} turn {}: missing `{k}`", i + 1)))
            };
            let raw_emotion = field("emotion")?;
            let emotion = normalize_emotion(raw_emotion);
            if !labels.contains(emotion) {
                return Err(TsamError::UnknownEmotion(raw_emotion.to_string()));
            }
            history.push(Utterance {
                index: i + 1,
                speaker: field("speaker")?.to_string(),
                emotion: emotion.to_string(),
                tokens: Vec::new(),
                text: Some(field("utterance")?.to_string()),
            });
            let Some(evidence) = turn.get(EVIDENCE_KEY).and_then(Value::as_array) else {
                continue;
            };
            if emotion == NEUTRAL {
                continue;
            }
            let t = i + 1;
            let mut mask = vec![false; t];
            for ev in evidence.iter().filter_map(Value::as_u64) {
                let ev = ev as usize;
                if (1..=t).contains(&ev) {
                    mask[ev - 1] = true;
                }
            }
            let mut sample = ConversationSample {
                conversation_id: format!("{dialog_id}_{t}"),
                utterances: history.clone(),
                cause_mask: mask,
                cause_types: None,
            };
            sample.cause_types = Some(sample.derive_cause_types());
            out.push(sample);
        }
    }
    Ok(out)
}
