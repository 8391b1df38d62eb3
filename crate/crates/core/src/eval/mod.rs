//! Ranking metrics, per-segment evaluation, backward transfer and reports.

pub mod evaluate;
pub mod metrics;
pub mod report;

pub use evaluate::{backward_transfer, evaluate_rankings, evaluate_segment, SegmentScore};
pub use metrics::{ndcg_at_k, recall_at_k};
pub use report::{
    comparison_table, format_improvement, relative_improvement, MetricsReport, SegmentReport, SCHEMA_VERSION,
};
