use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiments::{AblationRow, SweepRow};
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Versioned envelope for every machine-readable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub kind: String,
    pub data: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(kind: impl Into<String>, data: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            data,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

pub fn render_variant_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:width$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "variant", "dev", "pos", "neg", "macro");
    for r in rows {
        let _ = writeln!(
            out,
            "{:width$}  {}  {}  {}  {}",
            r.name,
            pct(r.dev_macro_f1),
            pct(r.test.pos_f1),
            pct(r.test.neg_f1),
            pct(r.test.macro_f1)
        );
    }
    out
}

/// Macro F1 per layer count, with a bar for quick visual comparison.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from(" L   macro    pos    neg\n");
    for r in rows {
        let bar = "#".repeat((r.dev.macro_f1 * 40.0).round() as usize);
        let _ = writeln!(
            out,
            "{:2}  {} {} {}  {bar}",
            r.layers,
            pct(r.dev.macro_f1),
            pct(r.dev.pos_f1),
            pct(r.dev.neg_f1)
        );
    }
    out
}
