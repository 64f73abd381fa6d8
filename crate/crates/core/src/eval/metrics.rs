use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ConversationSample, UtteranceCause};
use crate::error::{Result, TsamError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pos_f1: f64,
    pub neg_f1: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause_type_accuracy: Option<BTreeMap<String, f64>>,
}

/// `2tp / (2tp + fp + fn)`, or 0 when the class never occurs in gold or
/// predictions.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(c: Confusion) -> Self {
        let pos_f1 = f1(c.tp, c.fp, c.fn_);
        let neg_f1 = f1(c.tn, c.fn_, c.fp);
        Self {
            pos_f1,
            neg_f1,
            macro_f1: (pos_f1 + neg_f1) / 2.0,
            confusion: c,
            cause_type_accuracy: None,
        }
    }
}

/// Pooled F1 over every (conversation, utterance) pair.
pub fn compute_f1<G: AsRef<[bool]>, P: AsRef<[bool]>>(gold: &[G], pred: &[P]) -> Result<MetricsReport> {
    if gold.len() != pred.len() {
        return Err(TsamError::InvalidArgument(format!(
            "{} gold conversations but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut c = Confusion::default();
    for (n, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(TsamError::InvalidArgument(format!(
                "conversation {n}: {} gold labels but {} predictions",
                g.len(),
                p.len()
            )));
        }
        for (&gi, &pi) in g.iter().zip(p) {
            c.add(gi, pi);
        }
    }
    Ok(MetricsReport::from_confusion(c))
}

/// Share of positive utterances of each cause type that were predicted
/// positive. Types with no positive utterance are omitted.
pub fn cause_type_accuracy<P: AsRef<[bool]>>(
    samples: &[ConversationSample],
    pred: &[P],
) -> Result<BTreeMap<UtteranceCause, f64>> {
    if samples.len() != pred.len() {
        return Err(TsamError::InvalidArgument(format!(
            "{} samples but {} predictions",
            samples.len(),
            pred.len()
        )));
    }
    let mut hits: BTreeMap<UtteranceCause, (usize, usize)> = BTreeMap::new();
    for (s, p) in samples.iter().zip(pred) {
        let types = s.cause_types.as_ref().ok_or_else(|| {
            TsamError::InvalidArgument(format!("sample `{}` has no cause_types annotation", s.conversation_id))
        })?;
        let p = p.as_ref();
        if p.len() != types.len() {
            return Err(TsamError::InvalidArgument(format!(
                "sample `{}`: {} predictions for {} utterances",
                s.conversation_id,
                p.len(),
                types.len()
            )));
        }
        for (&ty, &yes) in types.iter().zip(p) {
            if ty == UtteranceCause::None {
                continue;
            }
            let e = hits.entry(ty).or_default();
            e.1 += 1;
            if yes {
                e.0 += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|(k, (h, n))| (k, h as f64 / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::sample;

    #[test]
    fn perfect_predictions() {
        let gold = vec![vec![true, false], vec![false, true, true]];
        let r = compute_f1(&gold, &gold).unwrap();
        assert_eq!((r.pos_f1, r.neg_f1, r.macro_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_confusion_matrix() {
        let r = compute_f1(&[vec![true, false, true]], &[vec![true, false, false]]).unwrap();
        assert_eq!(
            r.confusion,
            Confusion {
                tp: 1,
                fp: 0,
                fn_: 1,
                tn: 1
            }
        );
        assert!((r.pos_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.neg_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_scores_zero() {
        let r = compute_f1(&[vec![false, false]], &[vec![false, false]]).unwrap();
        assert_eq!(r.pos_f1, 0.0);
        assert_eq!(r.neg_f1, 1.0);
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(compute_f1(&[vec![true]], &[vec![true, false]]).is_err());
        assert!(compute_f1(&[vec![true]], &Vec::<Vec<bool>>::new()).is_err());
    }

    #[test]
    fn cause_type_accuracy_counts() {
        let mut s = sample(
            "c",
            &[("A", "neutral", &[1]), ("B", "neutral", &[1]), ("A", "neutral", &[1]), ("B", "sad", &[1])],
            &[true, true, true, true],
        );
        s.cause_types = Some(s.derive_cause_types());
        // types: inter, intra, inter, no-context
        let acc = cause_type_accuracy(&[s.clone()], &[vec![true, true, false, true]]).unwrap();
        assert_eq!(acc[&UtteranceCause::Inter], 0.5);
        assert_eq!(acc[&UtteranceCause::Intra], 1.0);
        assert_eq!(acc[&UtteranceCause::NoContext], 1.0);
        let row: (&str, &str, &[u32]) = ("A", "neutral", &[1]);
        let mut four = sample("d", &[row; 5], &[true, true, true, true, false]);
        four.utterances[4].emotion = "sad".into();
        four.cause_types = Some(four.derive_cause_types());
        let acc = cause_type_accuracy(&[four], &[vec![true, true, false, true, false]]).unwrap();
        assert_eq!(acc[&UtteranceCause::Intra], 0.75);
        s.cause_types = None;
        assert!(cause_type_accuracy(&[s], &[vec![true; 4]]).is_err());
    }
}
