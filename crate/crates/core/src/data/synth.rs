//! Synthetic drifting interaction streams.
//!
//! Items belong to latent clusters and each user prefers a primary and a
//! secondary cluster. Segment `t` occupies timestamps
//! `[t·segment_seconds, (t+1)·segment_seconds)`. Before every segment after
//! the first, a `drift_rate` fraction of users re-draws its preferences and
//! a `drift_rate` fraction of the active catalog is retired and replaced by
//! fresh item ids.
//!
//! Every active user and item receives at least one interaction per segment
//! when the budget allows (`interactions_per_segment ≥ users + items`), so
//! the observed entity overlap tracks the catalog overlap.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::InteractionRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub segments: usize,
    pub drift_rate: f64,
    pub interactions_per_segment: usize,
    pub clusters: usize,
    pub segment_seconds: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 300,
            items: 200,
            segments: 5,
            drift_rate: 0.3,
            interactions_per_segment: 1000,
            clusters: 10,
            segment_seconds: 86_400,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 {
            return Err(Error::Contract("synthetic stream needs users and items".into()));
        }
        if !(0.0..=1.0).contains(&self.drift_rate) {
            return Err(Error::Contract(format!(
                "drift rate {} outside [0, 1]",
                self.drift_rate
            )));
        }
        if self.segments == 0 || self.interactions_per_segment == 0 || self.clusters == 0 {
            return Err(Error::Contract(
                "segments, interactions per segment and clusters must be positive".into(),
            ));
        }
        if self.segment_seconds < 2 {
            return Err(Error::Contract("segment_seconds must be at least 2".into()));
        }
        Ok(())
    }
}

const PRIMARY_SHARE: f64 = 0.7;
const SECONDARY_SHARE: f64 = 0.2;

struct Catalog {
    active: Vec<usize>,
    cluster_of: Vec<usize>,
    by_cluster: Vec<Vec<usize>>,
}

impl Catalog {
    fn rebuild_index(&mut self, clusters: usize) {
        self.by_cluster = vec![Vec::new(); clusters];
        for &item in &self.active {
            self.by_cluster[self.cluster_of[item]].push(item);
        }
    }
}

/// Generates a deterministic stream of records sorted by timestamp.
pub fn synth_stream(config: &SynthConfig) -> Result<Vec<InteractionRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.clusters;

    let mut catalog = Catalog {
        active: (0..config.items).collect(),
        cluster_of: (0..config.items).map(|i| i % k).collect(),
        by_cluster: Vec::new(),
    };
    catalog.rebuild_index(k);
    let mut prefs: Vec<(usize, usize)> = (0..config.users).map(|_| draw_pref(&mut rng, k)).collect();

    let mut out = Vec::with_capacity(config.segments * config.interactions_per_segment);
    for t in 0..config.segments {
        if t > 0 {
            drift(config, &mut rng, &mut prefs, &mut catalog);
        }
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(config.interactions_per_segment);
        let budget = config.interactions_per_segment;

        // coverage: every user, then every item not yet touched
        for (u, &pref) in prefs.iter().enumerate() {
            if pairs.len() == budget {
                break;
            }
            pairs.push((u, pick_item(&mut rng, &catalog, pref, k)));
        }
        let mut touched = vec![false; catalog.cluster_of.len()];
        for &(_, i) in &pairs {
            touched[i] = true;
        }
        let fans: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..config.users).filter(|&u| prefs[u].0 == c).collect())
            .collect();
        for &item in &catalog.active {
            if pairs.len() == budget {
                break;
            }
            if touched[item] {
                continue;
            }
            let group = &fans[catalog.cluster_of[item]];
            let u = if group.is_empty() {
                rng.random_range(0..config.users)
            } else {
                group[rng.random_range(0..group.len())]
            };
            pairs.push((u, item));
        }
        while pairs.len() < budget {
            let u = rng.random_range(0..config.users);
            pairs.push((u, pick_item(&mut rng, &catalog, prefs[u], k)));
        }

        let base = t as i64 * config.segment_seconds;
        let mut stamped: Vec<(i64, usize, usize)> = pairs
            .into_iter()
            .map(|(u, i)| (base + rng.random_range(0..config.segment_seconds), u, i))
            .collect();
        if t == 0 {
            stamped[0].0 = 0;
        }
        if t + 1 == config.segments {
            let last = stamped.len() - 1;
            stamped[last].0 = base + config.segment_seconds - 1;
        }
        stamped.sort_by_key(|&(ts, _, _)| ts);
        out.extend(stamped.into_iter().map(|(timestamp, u, i)| InteractionRecord {
            user_id: format!("u{u}"),
            item_id: format!("i{i}"),
            timestamp,
        }));
    }
    Ok(out)
}

fn draw_pref(rng: &mut ChaCha8Rng, clusters: usize) -> (usize, usize) {
    let primary = rng.random_range(0..clusters);
    if clusters == 1 {
        return (primary, primary);
    }
    let mut secondary = rng.random_range(0..clusters - 1);
    if secondary >= primary {
        secondary += 1;
    }
    (primary, secondary)
}

fn pick_item(rng: &mut ChaCha8Rng, catalog: &Catalog, pref: (usize, usize), clusters: usize) -> usize {
    let roll: f64 = rng.random();
    let cluster = if roll < PRIMARY_SHARE {
        pref.0
    } else if roll < PRIMARY_SHARE + SECONDARY_SHARE {
        pref.1
    } else {
        rng.random_range(0..clusters)
    };
    let pool = &catalog.by_cluster[cluster];
    if pool.is_empty() {
        catalog.active[rng.random_range(0..catalog.active.len())]
    } else {
        pool[rng.random_range(0..pool.len())]
    }
}

fn drift(config: &SynthConfig, rng: &mut ChaCha8Rng, prefs: &mut [(usize, usize)], catalog: &mut Catalog) {
    let k = config.clusters;
    let moved_users = (config.drift_rate * config.users as f64).round() as usize;
    let mut chosen = sample(rng, config.users, moved_users).into_vec();
    chosen.sort_unstable();
    for u in chosen {
        prefs[u] = draw_pref(rng, k);
    }

    let retired = (config.drift_rate * catalog.active.len() as f64).round() as usize;
    let mut slots = sample(rng, catalog.active.len(), retired).into_vec();
    slots.sort_unstable();
    for slot in slots {
        let fresh = catalog.cluster_of.len();
        catalog.cluster_of.push(rng.random_range(0..k));
        catalog.active[slot] = fresh;
    }
    catalog.rebuild_index(k);
}
