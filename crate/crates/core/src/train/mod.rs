//! Segment-wise training: modes, onboarding of new entities, the pairwise
//! ranking objective, the stream driver and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod segment;
pub mod stream;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::StreamSegment;
use crate::error::{Error, Result};
use crate::model::{AggregationMode, Model, ModelConfig};
use crate::numeric::{AdamConfig, AdamState, ParamId};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{bpr_loss, pairwise_loss, sample_batch, Triple};
pub use segment::{replay_pairs, train_segment, EpochLoss};
pub use stream::{run_segments, run_stream, RunOptions, StreamRun};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Pre-existing embedding rows frozen; prompts and new rows learn.
    PromptTune,
    FullFinetune,
    /// No updates after the bootstrap segment.
    Frozen,
    /// Full fine-tuning on the segment plus a uniform sample of history.
    UniformReplay,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::Frozen,
        TrainMode::UniformReplay,
        TrainMode::FullFinetune,
        TrainMode::PromptTune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::PromptTune => "prompt_tune",
            TrainMode::FullFinetune => "full_finetune",
            TrainMode::Frozen => "frozen",
            TrainMode::UniformReplay => "uniform_replay",
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    /// Only read in [`TrainMode::UniformReplay`].
    pub replay_fraction: f64,
    /// L2 weight on the trainable embedding rows of each batch.
    pub reg: f64,
    pub dim: usize,
    pub layers: usize,
    pub views: usize,
    pub node_prompts: usize,
    pub struct_prompts: usize,
    pub codebook: usize,
    pub aggregation: AggregationMode,
    pub seed: u64,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            mode: TrainMode::PromptTune,
            lr: 1e-3,
            epochs: 50,
            batch_size: 1024,
            negatives_per_positive: 1,
            replay_fraction: 0.1,
            reg: 1e-4,
            dim: m.dim,
            layers: m.layers,
            views: m.views,
            node_prompts: m.node_prompts,
            struct_prompts: m.struct_prompts,
            codebook: m.codebook,
            aggregation: m.aggregation,
            seed: 0,
            eval_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            layers: self.layers,
            views: self.views,
            node_prompts: self.node_prompts,
            struct_prompts: self.struct_prompts,
            codebook: self.codebook,
            aggregation: self.aggregation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Contract(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 || self.eval_k == 0 {
            return Err(Error::Contract(
                "batch size, negatives per positive and eval K must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return Err(Error::Contract(format!(
                "replay fraction {} outside [0, 1]",
                self.replay_fraction
            )));
        }
        if !(self.reg.is_finite() && self.reg >= 0.0) {
            return Err(Error::Contract(format!(
                "regularization {} must be non-negative",
                self.reg
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Model parameters plus the bookkeeping continual training needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub model: Model,
    pub optimizer: AdamState,
    /// Last segment trained on, `None` before the first.
    pub trained_through: Option<usize>,
    /// Table sizes before the latest onboarding; rows from here on are new.
    pub onboarded_from: (usize, usize),
}

impl ModelState {
    /// Empty embedding tables; prompts and maps drawn from `rng`.
    pub fn new(config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), 0, 0, rng)?;
        let optimizer = AdamState::new(&model.params);
        Ok(Self {
            model,
            optimizer,
            trained_through: None,
            onboarded_from: (0, 0),
        })
    }

    pub fn check_matches(&self, config: &TrainConfig) -> Result<()> {
        if self.model.config != config.model_config() {
            return Err(Error::Contract(format!(
                "state built for {:?}, config asks for {:?}",
                self.model.config,
                config.model_config()
            )));
        }
        Ok(())
    }

    /// Digest of the embedding rows that existed before the latest
    /// onboarding.
    pub fn backbone_digest(&self) -> String {
        let t = self.model.table;
        let (u, i) = self.onboarded_from;
        self.model.params.digest([(t.users, Some(u)), (t.items, Some(i))])
    }
}

/// Appends rows for entities `segment` introduces. New rows are drawn from
/// N(0, 0.01²) with `rng` and stay trainable in every mode; the rows present
/// before the call become the frozen block for `segment`.
pub fn init_new_entities(state: &mut ModelState, segment: &StreamSegment, rng: &mut impl Rng) -> (usize, usize) {
    let users = state.model.num_users();
    let items = state.model.num_items();
    state.onboarded_from = (users, items);
    let added = state
        .model
        .grow(segment.user_bound().max(users), segment.item_bound().max(items), rng);
    if added != (0, 0) {
        state.optimizer = AdamState::new(&state.model.params);
    }
    added
}

/// Marks tensors trainable as `mode` requires. Tensors the aggregation
/// mode never reads are left untrainable.
pub fn configure_mode(state: &mut ModelState, mode: TrainMode) {
    let model = &mut state.model;
    let active = model.prompts.active_tensors();
    let table = model.table;
    let boundary = state.onboarded_from;
    for id in model.params.ids().collect::<Vec<ParamId>>() {
        let t = model.params.get_mut(id);
        let is_table = id == table.users || id == table.items;
        t.frozen_rows = 0;
        t.trainable = match mode {
            TrainMode::Frozen => false,
            _ => is_table || active.contains(&id),
        };
        if mode == TrainMode::PromptTune && is_table {
            t.frozen_rows = if id == table.users { boundary.0 } else { boundary.1 };
        }
    }
}

/// Scalars an optimizer step may change under `mode`.
pub fn trainable_parameters(state: &ModelState, mode: TrainMode) -> usize {
    let mut probe = state.clone();
    configure_mode(&mut probe, mode);
    probe.model.params.iter().map(|t| t.updatable_len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(pairs: &[(usize, usize)]) -> StreamSegment {
        let events: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(t, &(user, item))| Interaction {
                user,
                item,
                timestamp: t as i64,
            })
            .collect();
        StreamSegment::from_events(0, 0.0, 1.0, &events)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            dim: 4,
            views: 2,
            node_prompts: 2,
            struct_prompts: 2,
            codebook: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn onboarding_grows_by_new_ids_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = ModelState::new(&small(), &mut rng).unwrap();
        assert_eq!(init_new_entities(&mut state, &seg(&[(0, 0), (1, 1)]), &mut rng), (2, 2));
        let before = state.model.params.clone();
        assert_eq!(init_new_entities(&mut state, &seg(&[(1, 0)]), &mut rng), (0, 0));
        assert_eq!(state.model.params, before);
        assert_eq!(state.onboarded_from, (2, 2));
        assert_eq!(init_new_entities(&mut state, &seg(&[(0, 4)]), &mut rng), (0, 3));
        assert_eq!(state.model.num_items(), 5);
        assert_eq!(state.onboarded_from, (2, 2));
        init_new_entities(&mut state, &seg(&[(0, 0)]), &mut rng);
        assert_eq!(state.onboarded_from, (2, 5));
    }

    #[test]
    fn onboarding_is_seed_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut state = ModelState::new(&small(), &mut rng).unwrap();
            init_new_entities(&mut state, &seg(&[(0, 2)]), &mut rng);
            state.model.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prompt_tune_counts_prompts_and_new_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = ModelState::new(&small(), &mut rng).unwrap();
        init_new_entities(&mut state, &seg(&[(0, 0), (1, 1)]), &mut rng);
        init_new_entities(&mut state, &seg(&[(2, 2)]), &mut rng);
        let d = 4;
        // views 2·(d²+d), node 2·2d, struct 2·2d, edge map 2d²+d, codebook 2d, query d²+d
        let prompts = 2 * (d * d + d) + 4 * d + 4 * d + (2 * d * d + d) + 2 * d + (d * d + d);
        assert_eq!(trainable_parameters(&state, TrainMode::PromptTune), prompts + 2 * d);
        assert_eq!(trainable_parameters(&state, TrainMode::FullFinetune), prompts + 6 * d);
        assert_eq!(trainable_parameters(&state, TrainMode::Frozen), 0);
    }

    #[test]
    fn modes_round_trip_through_strings() {
        for m in TrainMode::ALL {
            assert_eq!(m.as_str().parse::<TrainMode>().unwrap(), m);
        }
        assert!("sideways".parse::<TrainMode>().is_err());
    }

    #[test]
    fn invalid_configs_are_contract_errors() {
        for bad in [
            TrainConfig { lr: 0.0, ..small() },
            TrainConfig {
                batch_size: 0,
                ..small()
            },
            TrainConfig {
                replay_fraction: 1.5,
                ..small()
            },
            TrainConfig { views: 0, ..small() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Contract(_))));
        }
    }
}
