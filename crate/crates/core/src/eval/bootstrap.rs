use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, MetricsReport};
use crate::error::{Result, TsamError};
use crate::rng::{stream_rng, Stream};

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Macro F1 of A minus macro F1 of B on the original sample.
    pub observed_diff: f64,
    /// Share of resamples in which A does not beat B.
    pub p_value: f64,
    pub resamples: usize,
}

fn per_conversation<G: AsRef<[bool]>, P: AsRef<[bool]>>(gold: &[G], pred: &[P], which: &str) -> Result<Vec<Confusion>> {
    if gold.len() != pred.len() {
        return Err(TsamError::InvalidArgument(format!(
            "system {which}: {} predictions for {} conversations",
            pred.len(),
            gold.len()
        )));
    }
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(n, (g, p))| {
            let (g, p) = (g.as_ref(), p.as_ref());
            if g.len() != p.len() {
                return Err(TsamError::InvalidArgument(format!(
                    "system {which}, conversation {n}: {} predictions for {} utterances",
                    p.len(),
                    g.len()
                )));
            }
            let mut c = Confusion::default();
            for (&gi, &pi) in g.iter().zip(p) {
                c.add(gi, pi);
            }
            Ok(c)
        })
        .collect()
}

fn macro_of(parts: &[Confusion], idx: impl Iterator<Item = usize>) -> f64 {
    let mut c = Confusion::default();
    for i in idx {
        let p = &parts[i];
        c.tp += p.tp;
        c.fp += p.fp;
        c.fn_ += p.fn_;
        c.tn += p.tn;
    }
    MetricsReport::from_confusion(c).macro_f1
}

/// Paired bootstrap over conversations on the macro-F1 difference A − B.
pub fn bootstrap_significance<G, P, Q>(
    gold: &[G],
    pred_a: &[P],
    pred_b: &[Q],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult>
where
    G: AsRef<[bool]>,
    P: AsRef<[bool]>,
    Q: AsRef<[bool]>,
{
    if resamples < MIN_RESAMPLES {
        return Err(TsamError::InvalidArgument(format!(
            "at least {MIN_RESAMPLES} resamples are required, got {resamples}"
        )));
    }
    if gold.is_empty() {
        return Err(TsamError::InvalidArgument("no conversations to resample".into()));
    }
    let a = per_conversation(gold, pred_a, "A")?;
    let b = per_conversation(gold, pred_b, "B")?;
    let n = gold.len();
    let observed_diff = macro_of(&a, 0..n) - macro_of(&b, 0..n);
    let mut rng = stream_rng(seed, Stream::Bootstrap);
    let mut not_better = 0usize;
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let diff = macro_of(&a, idx.iter().copied()) - macro_of(&b, idx.iter().copied());
        if diff <= 0.0 {
            not_better += 1;
        }
    }
    Ok(BootstrapResult {
        observed_diff,
        p_value: not_better as f64 / resamples as f64,
        resamples,
    })
}
