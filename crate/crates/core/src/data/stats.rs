use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CauseType, ConversationSample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub conversations: usize,
    pub positive: usize,
    pub negative: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: SplitCounts,
    /// Conversations per cause category.
    pub cause_types: BTreeMap<CauseType, usize>,
}

impl DatasetStats {
    /// Share of conversations in each category.
    pub fn cause_type_fractions(&self) -> BTreeMap<CauseType, f64> {
        let n = self.counts.conversations.max(1) as f64;
        CauseType::ALL
            .iter()
            .map(|&c| (c, *self.cause_types.get(&c).unwrap_or(&0) as f64 / n))
            .collect()
    }
}

pub fn stats(samples: &[ConversationSample]) -> DatasetStats {
    let mut out = DatasetStats::default();
    for s in samples {
        out.counts.conversations += 1;
        let pos = s.cause_mask.iter().filter(|&&m| m).count();
        out.counts.positive += pos;
        out.counts.negative += s.cause_mask.len() - pos;
        *out.cause_types.entry(s.cause_type()).or_default() += 1;
    }
    out
}
