use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConversationSample, EmotionLabels, Utterance, UtteranceCause};
use crate::error::{Result, TsamError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    speaker: String,
    emotion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    conversation_id: String,
    utterances: Vec<UtteranceRecord>,
    cause_mask: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cause_types: Option<Vec<String>>,
}

fn from_record(rec: SampleRecord, labels: &EmotionLabels, line: usize) -> Result<ConversationSample> {
    let err = |msg: String| TsamError::Data { line, msg };
    let mut utterances = Vec::with_capacity(rec.utterances.len());
    for (i, u) in rec.utterances.into_iter().enumerate() {
        if !labels.contains(&u.emotion) {
            return Err(err(format!("unknown emotion label `{}`", u.emotion)));
        }
        if u.text.is_none() && u.tokens.is_none() {
            return Err(err(format!("utterance {} has neither text nor tokens", i + 1)));
        }
        utterances.push(Utterance {
            index: i + 1,
            speaker: u.speaker,
            emotion: u.emotion,
            tokens: u.tokens.unwrap_or_default(),
            text: u.text,
        });
    }
    if rec.cause_mask.len() != utterances.len() {
        return Err(err(format!(
            "cause_mask length {} does not match {} utterances",
            rec.cause_mask.len(),
            utterances.len()
        )));
    }
    let cause_mask = rec
        .cause_mask
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(err(format!("cause_mask entries must be 0 or 1, got {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let cause_types = rec
        .cause_types
        .map(|ts| ts.iter().map(|s| s.parse::<UtteranceCause>()).collect::<Result<Vec<_>>>())
        .transpose()
        .map_err(|e| err(e.to_string()))?;
    let sample = ConversationSample {
        conversation_id: rec.conversation_id,
        utterances,
        cause_mask,
        cause_types,
    };
    sample.validate(labels).map_err(|e| err(e.to_string()))?;
    Ok(sample)
}

fn to_record(s: &ConversationSample) -> SampleRecord {
    SampleRecord {
        conversation_id: s.conversation_id.clone(),
        utterances: s
            .utterances
            .iter()
            .map(|u| UtteranceRecord {
                speaker: u.speaker.clone(),
                emotion: u.emotion.clone(),
                text: u.text.clone(),
                tokens: (!u.tokens.is_empty()).then(|| u.tokens.clone()),
            })
            .collect(),
        cause_mask: s.cause_mask.iter().map(|&b| u8::from(b)).collect(),
        cause_types: s
            .cause_types
            .as_ref()
            .map(|ts| ts.iter().map(|c| c.as_str().to_string()).collect()),
    }
}

/// Parses line-delimited JSON. Blank lines are ignored; errors carry the
/// 1-based line number.
pub fn parse_dataset(content: &str, labels: &EmotionLabels) -> Result<Vec<ConversationSample>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: SampleRecord = serde_json::from_str(l).map_err(|e| TsamError::Data {
                line: i + 1,
                msg: e.to_string(),
            })?;
            from_record(rec, labels, i + 1)
        })
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>, labels: &EmotionLabels) -> Result<Vec<ConversationSample>> {
    parse_dataset(&fs::read_to_string(path)?, labels)
}

/// Canonical serialization: one object per line, fixed field order.
pub fn render_dataset(samples: &[ConversationSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&to_record(s))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(samples: &[ConversationSample], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_dataset(samples)?)?;
    Ok(())
}
