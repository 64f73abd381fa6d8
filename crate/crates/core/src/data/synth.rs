//! Synthetic conversations with planted cause structure.
//!
//! Every non-neutral emotion `e` owns three disjoint token families:
//! *self* triggers, *other* triggers and emotion words. For a target with
//! emotion `e*`, utterance `u_i` is a cause exactly when it contains a self
//! trigger of `e*` and shares the target's speaker (the target itself
//! included), or contains an other trigger of `e*` and has a different
//! speaker. Distractors place `e*` triggers under the wrong speaker relation
//! or use triggers of a different emotion, so neither the tokens alone nor the
//! speakers alone determine the mask.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{CauseType, ConversationSample, EmotionLabels, Utterance, NEUTRAL};
use crate::error::{config_err, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_conversations: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub num_speakers: usize,
    /// Relative weights for no-context, inter, intra, hybrid, unmentioned.
    pub mixture: [f64; 5],
    pub triggers_per_family: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Probability that a non-cause utterance carries a misleading trigger.
    pub distractor_rate: f64,
    /// Probability that the target is also its own cause when history causes exist.
    pub self_cause_rate: f64,
    pub labels: EmotionLabels,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_conversations: 100,
            min_len: 2,
            max_len: 8,
            vocab_size: 96,
            num_speakers: 2,
            mixture: [0.43, 0.32, 0.09, 0.11, 0.05],
            triggers_per_family: 2,
            min_fillers: 2,
            max_fillers: 4,
            distractor_rate: 0.4,
            self_cause_rate: 0.3,
            labels: EmotionLabels::default(),
        }
    }
}

/// Which token ids play which role.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    /// Indexed like `EmotionLabels::non_neutral()`.
    pub emotions: Vec<String>,
    pub self_triggers: Vec<Vec<u32>>,
    pub other_triggers: Vec<Vec<u32>>,
    pub emotion_words: Vec<Vec<u32>>,
    pub fillers: Vec<u32>,
}

impl TokenLayout {
    pub fn emotion_index(&self, label: &str) -> Option<usize> {
        self.emotions.iter().position(|e| e == label)
    }
}

const MIN_FILLER_TOKENS: usize = 4;

impl SynthConfig {
    pub fn layout(&self) -> Result<TokenLayout> {
        let emotions: Vec<String> = self.labels.non_neutral().into_iter().map(String::from).collect();
        if emotions.is_empty() {
            return Err(config_err("labels", "need at least one non-neutral emotion"));
        }
        let k = self.triggers_per_family;
        if k == 0 {
            return Err(config_err("triggers_per_family", "must be at least 1"));
        }
        let reserved = 1 + 3 * k * emotions.len();
        if self.vocab_size < reserved + MIN_FILLER_TOKENS {
            return Err(config_err(
                "vocab_size",
                format!("need at least {} tokens for this label set", reserved + MIN_FILLER_TOKENS),
            ));
        }
        let mut next = 1u32;
        let mut family = || {
            let ids: Vec<u32> = (next..next + k as u32).collect();
            next += k as u32;
            ids
        };
        let mut self_triggers = Vec::new();
        let mut other_triggers = Vec::new();
        let mut emotion_words = Vec::new();
        for _ in &emotions {
            self_triggers.push(family());
            other_triggers.push(family());
            emotion_words.push(family());
        }
        Ok(TokenLayout {
            emotions,
            self_triggers,
            other_triggers,
            emotion_words,
            fillers: (reserved as u32..self.vocab_size as u32).collect(),
        })
    }

    fn min_len_for(kind: CauseType) -> usize {
        match kind {
            CauseType::Inter | CauseType::Intra => 2,
            CauseType::Hybrid => 3,
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(config_err("min_len", "need 1 <= min_len <= max_len"));
        }
        if self.min_fillers == 0 || self.min_fillers > self.max_fillers {
            return Err(config_err("min_fillers", "need 1 <= min_fillers <= max_fillers"));
        }
        if self.mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.mixture.iter().sum::<f64>() <= 0.0 {
            return Err(config_err("mixture", "weights must be non-negative with a positive sum"));
        }
        for (p, name) in [(self.distractor_rate, "distractor_rate"), (self.self_cause_rate, "self_cause_rate")] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(name, "must lie in [0, 1]"));
            }
        }
        for (w, kind) in self.mixture.iter().zip(CauseType::ALL) {
            if *w == 0.0 {
                continue;
            }
            if self.max_len < Self::min_len_for(kind) {
                return Err(config_err(
                    "max_len",
                    format!("{kind} causes need histories of length {}", Self::min_len_for(kind)),
                ));
            }
            if matches!(kind, CauseType::Inter | CauseType::Hybrid) && self.num_speakers < 2 {
                return Err(config_err("num_speakers", format!("{kind} causes need two speakers")));
            }
        }
        if self.num_speakers == 0 {
            return Err(config_err("num_speakers", "must be at least 1"));
        }
        Ok(())
    }
}

fn speaker_name(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("S{i}")
    }
}

/// Generates `cfg.num_conversations` samples deterministically from `seed`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<ConversationSample>> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let mut rng = stream_rng(seed, Stream::Synth);
    let kinds = WeightedIndex::new(cfg.mixture).map_err(|e| config_err("mixture", e.to_string()))?;
    (0..cfg.num_conversations)
        .map(|n| {
            let kind = CauseType::ALL[kinds.sample(&mut rng)];
            generate_one(cfg, &layout, kind, format!("synth-{seed}-{n}"), &mut rng)
        })
        .collect()
}

fn generate_one<R: Rng>(
    cfg: &SynthConfig,
    layout: &TokenLayout,
    kind: CauseType,
    id: String,
    rng: &mut R,
) -> Result<ConversationSample> {
    let lo = cfg.min_len.max(SynthConfig::min_len_for(kind));
    let t = rng.random_range(lo..=cfg.max_len);
    let target_speaker = rng.random_range(0..cfg.num_speakers);
    let other_speaker = |rng: &mut R| {
        let s = rng.random_range(0..cfg.num_speakers - 1);
        if s >= target_speaker {
            s + 1
        } else {
            s
        }
    };
    let mut speakers: Vec<usize> = (0..t).map(|_| rng.random_range(0..cfg.num_speakers)).collect();
    speakers[t - 1] = target_speaker;

    // History cause positions and their speaker relation (true = same speaker).
    let mut history: Vec<usize> = (0..t - 1).collect();
    history.shuffle(rng);
    let mut causes: Vec<(usize, bool)> = Vec::new();
    match kind {
        CauseType::Inter | CauseType::Intra => {
            let same = kind == CauseType::Intra;
            let n = rng.random_range(1..=2.min(t - 1));
            causes.extend(history.iter().take(n).map(|&i| (i, same)));
        }
        CauseType::Hybrid => {
            causes.push((history[0], false));
            causes.push((history[1], true));
        }
        _ => {}
    }
    for &(i, same) in &causes {
        speakers[i] = if same { target_speaker } else { other_speaker(rng) };
    }
    let target_is_cause = match kind {
        CauseType::NoContext => true,
        CauseType::Unmentioned => false,
        _ => rng.random_bool(cfg.self_cause_rate),
    };

    let n_emo = layout.emotions.len();
    let target_emo = rng.random_range(0..n_emo);
    let pick = |family: &[u32], rng: &mut R| *family.choose(rng).expect("family is nonempty");

    let mut mask = vec![false; t];
    let mut utterances = Vec::with_capacity(t);
    for i in 0..t {
        let same = speakers[i] == target_speaker;
        let planted = if i == t - 1 {
            target_is_cause
        } else {
            causes.iter().any(|&(c, _)| c == i)
        };
        let n_fill = rng.random_range(cfg.min_fillers..=cfg.max_fillers);
        let mut tokens: Vec<u32> = (0..n_fill).map(|_| pick(&layout.fillers, rng)).collect();
        // Emotion carried by the trigger (if any) in this utterance.
        let mut trigger_emo = None;
        if planted {
            let fam = if same {
                &layout.self_triggers[target_emo]
            } else {
                &layout.other_triggers[target_emo]
            };
            tokens.push(pick(fam, rng));
            trigger_emo = Some(target_emo);
            mask[i] = true;
        } else if rng.random_bool(cfg.distractor_rate) {
            let (emo, wrong_relation) = if n_emo == 1 || rng.random_bool(0.5) {
                (target_emo, true)
            } else {
                let e = rng.random_range(0..n_emo - 1);
                (if e >= target_emo { e + 1 } else { e }, false)
            };
            // A same-emotion distractor uses the family that does not match
            // the speaker relation; a different-emotion one uses either.
            let use_self = if wrong_relation { !same } else { rng.random_bool(0.5) };
            let fam = if use_self {
                &layout.self_triggers[emo]
            } else {
                &layout.other_triggers[emo]
            };
            tokens.push(pick(fam, rng));
            trigger_emo = Some(emo);
        }
        let emotion = if i == t - 1 {
            Some(target_emo)
        } else if trigger_emo.is_some() {
            trigger_emo
        } else if rng.random_bool(0.5) {
            None
        } else {
            Some(rng.random_range(0..n_emo))
        };
        if let Some(e) = emotion {
            tokens.push(pick(&layout.emotion_words[e], rng));
        }
        tokens.shuffle(rng);
        let text = tokens.iter().map(|id| format!("w{id}")).collect::<Vec<_>>().join(" ");
        utterances.push(Utterance {
            index: i + 1,
            speaker: speaker_name(speakers[i]),
            emotion: emotion.map_or(NEUTRAL.to_string(), |e| layout.emotions[e].clone()),
            tokens,
            text: Some(text),
        });
    }
    let mut sample = ConversationSample {
        conversation_id: id,
        utterances,
        cause_mask: mask,
        cause_types: None,
    };
    sample.cause_types = Some(sample.derive_cause_types());
    Ok(sample)
}
