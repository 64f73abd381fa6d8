//! Conversation samples, the line-delimited JSON dataset format, a
//! whitespace vocabulary, and a synthetic generator with planted causes.

mod jsonl;
pub mod reccon;
mod stats;
pub mod synth;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsamError};

pub use jsonl::{load_dataset, parse_dataset, render_dataset, write_dataset};
pub use stats::{stats, DatasetStats, SplitCounts};
pub use synth::{synth_generate, SynthConfig};
pub use vocab::Vocab;

pub const NEUTRAL: &str = "neutral";

/// Ordered set of emotion labels; the order fixes embedding rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabels(Vec<String>);

impl Default for EmotionLabels {
    fn default() -> Self {
        Self(
            ["happy", "sad", "angry", "fearful", "surprised", "disgusted", NEUTRAL]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    }
}

impl EmotionLabels {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(TsamError::InvalidArgument("emotion label set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(TsamError::InvalidArgument(format!("duplicate emotion label `{l}`")));
            }
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.0
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TsamError::UnknownEmotion(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    /// Labels other than `neutral`, in order.
    pub fn non_neutral(&self) -> Vec<&str> {
        self.0.iter().map(String::as_str).filter(|l| *l != NEUTRAL).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    /// 1-based position in the history.
    pub index: usize,
    pub speaker: String,
    pub emotion: String,
    pub tokens: Vec<u32>,
    pub text: Option<String>,
}

/// Why a single utterance is (or is not) a cause of the target emotion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UtteranceCause {
    None,
    /// The target utterance itself.
    NoContext,
    /// An utterance by another speaker.
    Inter,
    /// An earlier utterance by the target's own speaker.
    Intra,
}

impl UtteranceCause {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::NoContext => "no-context",
            Self::Inter => "inter",
            Self::Intra => "intra",
        }
    }
}

impl FromStr for UtteranceCause {
    type Err = TsamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "no-context" => Ok(Self::NoContext),
            "inter" => Ok(Self::Inter),
            "intra" => Ok(Self::Intra),
            other => Err(TsamError::InvalidArgument(format!("unknown cause type `{other}`"))),
        }
    }
}

/// Conversation-level cause category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CauseType {
    NoContext,
    Inter,
    Intra,
    Hybrid,
    Unmentioned,
}

impl CauseType {
    pub const ALL: [CauseType; 5] = [
        CauseType::NoContext,
        CauseType::Inter,
        CauseType::Intra,
        CauseType::Hybrid,
        CauseType::Unmentioned,
    ];
}

impl fmt::Display for CauseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NoContext => "no-context",
            Self::Inter => "inter",
            Self::Intra => "intra",
            Self::Hybrid => "hybrid",
            Self::Unmentioned => "unmentioned",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSample {
    pub conversation_id: String,
    pub utterances: Vec<Utterance>,
    /// `cause_mask[i]` is true iff `utterances[i]` contains the cause of the
    /// target (last) utterance's emotion.
    pub cause_mask: Vec<bool>,
    pub cause_types: Option<Vec<UtteranceCause>>,
}

impl ConversationSample {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn target(&self) -> &Utterance {
        self.utterances.last().expect("sample has at least one utterance")
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.speaker.as_str()).collect()
    }

    /// Per-utterance cause categories implied by the mask and the speakers.
    pub fn derive_cause_types(&self) -> Vec<UtteranceCause> {
        let t = self.len();
        let target = &self.target().speaker;
        self.utterances
            .iter()
            .zip(&self.cause_mask)
            .enumerate()
            .map(|(i, (u, &pos))| match (pos, i + 1 == t, &u.speaker == target) {
                (false, _, _) => UtteranceCause::None,
                (true, true, _) => UtteranceCause::NoContext,
                (true, false, true) => UtteranceCause::Intra,
                (true, false, false) => UtteranceCause::Inter,
            })
            .collect()
    }

    /// Conversation-level category: history causes take precedence over the
    /// target itself.
    pub fn cause_type(&self) -> CauseType {
        let types = self.cause_types.clone().unwrap_or_else(|| self.derive_cause_types());
        let has = |c| types.contains(&c);
        match (has(UtteranceCause::Inter), has(UtteranceCause::Intra)) {
            (true, true) => CauseType::Hybrid,
            (true, false) => CauseType::Inter,
            (false, true) => CauseType::Intra,
            _ if has(UtteranceCause::NoContext) => CauseType::NoContext,
            _ => CauseType::Unmentioned,
        }
    }

    /// Checks structural invariants against a label set.
    pub fn validate(&self, labels: &EmotionLabels) -> Result<()> {
        let bad = |msg: String| TsamError::InvalidArgument(format!("sample `{}`: {msg}", self.conversation_id));
        if self.utterances.is_empty() {
            return Err(bad("no utterances".into()));
        }
        if self.cause_mask.len() != self.len() {
            return Err(bad(format!(
                "cause_mask has length {} but there are {} utterances",
                self.cause_mask.len(),
                self.len()
            )));
        }
        if let Some(types) = &self.cause_types {
            if types.len() != self.len() {
                return Err(bad(format!("cause_types has length {}, expected {}", types.len(), self.len())));
            }
            for (i, (c, &m)) in types.iter().zip(&self.cause_mask).enumerate() {
                if (*c != UtteranceCause::None) != m {
                    return Err(bad(format!("cause_types[{i}] = {} disagrees with cause_mask", c.as_str())));
                }
            }
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.index != i + 1 {
                return Err(bad(format!("utterance at position {} has index {}", i + 1, u.index)));
            }
            labels.index_of(&u.emotion)?;
        }
        if self.target().emotion == NEUTRAL {
            return Err(bad("target utterance has neutral emotion".into()));
        }
        Ok(())
    }
}
