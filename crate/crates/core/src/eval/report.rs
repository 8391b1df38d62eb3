//! Per-run metrics reports and the cross-mode comparison table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::TrainMode;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub index: usize,
    /// Metrics on this segment's own test split right after training on it.
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
    pub trainable_parameters: usize,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    /// Mean wall time per epoch; not serialized so reports stay
    /// byte-reproducible.
    #[serde(skip)]
    pub epoch_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub mode: TrainMode,
    pub k: usize,
    pub seed: u64,
    pub config_hash: String,
    pub segments: Vec<SegmentReport>,
    /// `backward_recall[t][s]`: Recall@K on segment `s` after training
    /// through `t`, for `s ≤ t`.
    pub backward_recall: Vec<Vec<f64>>,
    pub backward_ndcg: Vec<Vec<f64>>,
    /// Means over every segment.
    pub avg_recall: f64,
    pub avg_ndcg: f64,
    /// Means over segments after the bootstrap; `None` with one segment.
    pub adapted_recall: Option<f64>,
    pub adapted_ndcg: Option<f64>,
    pub backward_transfer: Option<f64>,
    pub backward_transfer_ndcg: Option<f64>,
    /// Mean trainable-parameter count over segments after the bootstrap.
    pub adapted_parameters: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    /// Fills the averages from `segments` and the backward matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        mode: TrainMode,
        k: usize,
        seed: u64,
        config_hash: String,
        segments: Vec<SegmentReport>,
        backward_recall: Vec<Vec<f64>>,
        backward_ndcg: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Report("no segments".into()));
        }
        let bwt = |b: &[Vec<f64>]| match b.len() {
            0 | 1 => Ok(None),
            _ => super::backward_transfer(b).map(Some),
        };
        let adapted = || segments.iter().skip(1);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            mode,
            k,
            seed,
            config_hash,
            avg_recall: mean(segments.iter().map(|s| s.recall)).unwrap_or(0.0),
            avg_ndcg: mean(segments.iter().map(|s| s.ndcg)).unwrap_or(0.0),
            adapted_recall: mean(adapted().map(|s| s.recall)),
            adapted_ndcg: mean(adapted().map(|s| s.ndcg)),
            backward_transfer: bwt(&backward_recall)?,
            backward_transfer_ndcg: bwt(&backward_ndcg)?,
            adapted_parameters: mean(adapted().map(|s| s.trainable_parameters as f64)),
            segments,
            backward_recall,
            backward_ndcg,
        })
    }

    /// Mean per-epoch wall time over adapted segments that trained.
    pub fn adapted_epoch_ms(&self) -> Option<f64> {
        mean(self.segments.iter().skip(1).filter_map(|s| s.epoch_ms))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Report(format!("malformed report: {e}")))?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::Report(format!(
                "schema version {version:?} does not match {SCHEMA_VERSION}"
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::Report(format!("malformed report: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `(a − b) / b`, `None` when `b` is zero.
pub fn relative_improvement(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b)
}

/// Signed percentage with two decimals, e.g. `+4.16%`.
pub fn format_improvement(ratio: Option<f64>) -> String {
    match ratio {
        Some(r) => format!("{:+.2}%", r * 100.0),
        None => "n/a".into(),
    }
}

struct Row {
    label: String,
    values: Vec<Option<f64>>,
    /// Compare the last column against the best of the others.
    compare: bool,
    integer: bool,
}

/// Markdown table with one column per report and one row per metric. With
/// two or more reports an `Improv.` column compares the last report with the
/// best of the others on the ranking metrics.
pub fn comparison_table(reports: &[MetricsReport]) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Report("no reports to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(Error::Report(format!(
            "schema version {} does not match {SCHEMA_VERSION}",
            r.schema_version
        )));
    }
    if reports.iter().any(|r| r.k != first.k) {
        return Err(Error::Report("reports use different K".into()));
    }
    let k = first.k;
    let segments = reports.iter().map(|r| r.segments.len()).max().unwrap_or(0);
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| reports.iter().map(f).collect::<Vec<_>>();
    let mut rows = vec![
        Row {
            label: format!("Recall@{k} (avg)"),
            values: col(&|r| Some(r.avg_recall)),
            compare: true,
            integer: false,
        },
        Row {
            label: format!("NDCG@{k} (avg)"),
            values: col(&|r| Some(r.avg_ndcg)),
            compare: true,
            integer: false,
        },
        Row {
            label: format!("Recall@{k} (t≥1)"),
            values: col(&|r| r.adapted_recall),
            compare: true,
            integer: false,
        },
        Row {
            label: format!("NDCG@{k} (t≥1)"),
            values: col(&|r| r.adapted_ndcg),
            compare: true,
            integer: false,
        },
    ];
    for t in 0..segments {
        rows.push(Row {
            label: format!("Recall@{k} t={t}"),
            values: col(&|r| r.segments.get(t).map(|s| s.recall)),
            compare: true,
            integer: false,
        });
    }
    rows.push(Row {
        label: format!("BWT Recall@{k}"),
        values: col(&|r| r.backward_transfer),
        compare: false,
        integer: false,
    });
    rows.push(Row {
        label: "Trainable params (t≥1)".into(),
        values: col(&|r| r.adapted_parameters),
        compare: false,
        integer: true,
    });
    let timing = col(&|r| r.adapted_epoch_ms());
    if timing.iter().any(Option::is_some) {
        rows.push(Row {
            label: "ms / epoch (t≥1)".into(),
            values: timing,
            compare: false,
            integer: false,
        });
    }

    let improv = reports.len() >= 2;
    let mut out = String::from("| Metric |");
    for r in reports {
        write!(out, " {} |", r.mode).unwrap();
    }
    if improv {
        out.push_str(" Improv. |");
    }
    out.push_str("\n|---|");
    for _ in 0..reports.len() + usize::from(improv) {
        out.push_str("---:|");
    }
    out.push('\n');
    for row in rows {
        write!(out, "| {} |", row.label).unwrap();
        for v in &row.values {
            match v {
                Some(x) if row.integer => write!(out, " {x:.0} |").unwrap(),
                Some(x) => write!(out, " {x:.4} |").unwrap(),
                None => out.push_str(" – |"),
            }
        }
        if improv {
            let cell = match (row.compare, row.values.split_last()) {
                (true, Some((Some(last), others))) => {
                    let best = others.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
                    if best.is_finite() {
                        format_improvement(relative_improvement(*last, best))
                    } else {
                        "n/a".into()
                    }
                }
                _ => String::new(),
            };
            write!(out, " {cell} |").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
