//! Interaction ingestion, stream segmentation and the cumulative graph.

pub mod graph;
pub mod records;
pub mod segment;
pub mod synth;

pub use graph::{BipartiteGraph, GraphDelta};
pub use records::{
    parse_interactions, write_interactions, Format, Interaction, InteractionRecord, Interactions, Vocabulary,
};
pub use segment::{compute_aer, segment_stream, split_sizes, Entity, StreamSegment};
pub use synth::{synth_stream, SynthConfig};
