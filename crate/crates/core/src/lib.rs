//! Continual adaptation of a graph-embedding recommender over a stream of
//! time-segmented interactions.
//!
//! A backbone propagates user and item embeddings over the cumulative
//! interaction graph. After a bootstrap segment trains it fully, later
//! segments can leave its rows frozen and train only a bank of prompts:
//! per-view node prompts, edge-level structure prompts and a codebook that
//! steers attention across views. New users and items get fresh rows that
//! stay trainable.
//!
//! ```
//! use streamprompt::data::{synth_stream, Interactions, SynthConfig};
//! use streamprompt::train::{run_stream, RunOptions, TrainConfig, TrainMode};
//!
//! let records = synth_stream(&SynthConfig {
//!     users: 20,
//!     items: 15,
//!     segments: 3,
//!     interactions_per_segment: 60,
//!     ..SynthConfig::default()
//! })?;
//! let data = Interactions::from_records(records);
//! let config = TrainConfig {
//!     mode: TrainMode::PromptTune,
//!     epochs: 2,
//!     dim: 4,
//!     ..TrainConfig::default()
//! };
//! let run = run_stream(&data, 3, &config, &RunOptions::default())?;
//! assert_eq!(run.report.segments.len(), 3);
//! assert!(run.report.backward_transfer.is_some());
//! # Ok::<(), streamprompt::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod train;

pub use error::{Error, Result};
