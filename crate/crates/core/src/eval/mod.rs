//! Metrics, significance testing and experiment harnesses.

mod bootstrap;
mod experiments;
pub mod gradcheck;
mod metrics;
mod report;

use crate::data::ConversationSample;
use crate::error::Result;
use crate::model::{Prediction, TsamModel};
use crate::scalar::Real;

pub use bootstrap::{bootstrap_significance, BootstrapResult, MIN_RESAMPLES};
pub use experiments::{ablation_run, ablation_variants, layer_sweep, AblationRow, SweepRow, Variant};
pub use metrics::{cause_type_accuracy, compute_f1, f1, Confusion, MetricsReport};
pub use report::{render_sweep_table, render_variant_table, Report, SCHEMA_VERSION};

/// Eval-mode predictions for every sample.
pub fn predict_all<T: Real>(model: &TsamModel<T>, samples: &[ConversationSample]) -> Result<Vec<Prediction>> {
    samples.iter().map(|s| model.predict(s)).collect()
}

/// Pooled metrics of `model` on `samples`, with per-type accuracy when every
/// sample is annotated.
pub fn evaluate<T: Real>(model: &TsamModel<T>, samples: &[ConversationSample]) -> Result<(MetricsReport, Vec<Prediction>)> {
    let preds = predict_all(model, samples)?;
    let labels: Vec<&[bool]> = preds.iter().map(|p| p.labels.as_slice()).collect();
    let gold: Vec<&[bool]> = samples.iter().map(|s| s.cause_mask.as_slice()).collect();
    let mut report = compute_f1(&gold, &labels)?;
    if !samples.is_empty() && samples.iter().all(|s| s.cause_types.is_some()) {
        let acc = cause_type_accuracy(samples, &labels)?;
        report.cause_type_accuracy = Some(acc.into_iter().map(|(k, v)| (k.as_str().to_string(), v)).collect());
    }
    Ok((report, preds))
}
