//! Equal-time segmentation, chronological 8:1:1 splits and entity overlap.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::records::Interaction;
use crate::error::{Error, Result};

/// A user or an item; the two id spaces are kept apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Entity {
    User(usize),
    Item(usize),
}

/// Interactions of one time window, split chronologically.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSegment {
    pub index: usize,
    /// Window start (inclusive) in seconds.
    pub start: f64,
    /// Window end in seconds; exclusive except for the last window.
    pub end: f64,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub entities: BTreeSet<Entity>,
}

impl StreamSegment {
    /// Builds a segment from time-ordered events: earliest 80% train, next
    /// 10% validation, last 10% test. Validation and test sizes are rounded
    /// to nearest; train absorbs the remainder.
    pub fn from_events(index: usize, start: f64, end: f64, events: &[Interaction]) -> Self {
        let (n_train, n_val, _) = split_sizes(events.len());
        let pair = |e: &Interaction| (e.user, e.item);
        let entities = events
            .iter()
            .flat_map(|e| [Entity::User(e.user), Entity::Item(e.item)])
            .collect();
        Self {
            index,
            start,
            end,
            train: events[..n_train].iter().map(pair).collect(),
            val: events[n_train..n_train + n_val].iter().map(pair).collect(),
            test: events[n_train + n_val..].iter().map(pair).collect(),
            entities,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One past the largest user id in the segment (0 if empty).
    pub fn user_bound(&self) -> usize {
        self.entities
            .iter()
            .filter_map(|e| match e {
                Entity::User(u) => Some(u + 1),
                Entity::Item(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// One past the largest item id in the segment (0 if empty).
    pub fn item_bound(&self) -> usize {
        self.entities
            .iter()
            .filter_map(|e| match e {
                Entity::Item(i) => Some(i + 1),
                Entity::User(_) => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// `(train, val, test)` sizes for `n` events.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n as f64 / 10.0).round() as usize;
    let n_val = tenth.min(n);
    let n_test = tenth.min(n - n_val);
    (n - n_val - n_test, n_val, n_test)
}

/// Splits the stream into `segments` windows of equal width covering
/// `[min_ts, max_ts]`, the last window closed.
///
/// Integer timestamps span `max − min + 1` seconds, so timestamps `0..=99`
/// cut into four windows of width 25.
pub fn segment_stream(events: &[Interaction], segments: usize) -> Result<Vec<StreamSegment>> {
    if segments < 2 {
        return Err(Error::Contract(format!("need at least 2 segments, got {segments}")));
    }
    if events.is_empty() {
        return Err(Error::Contract("cannot segment an empty stream".into()));
    }
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| e.timestamp);
    let min = sorted[0].timestamp;
    let max = sorted[sorted.len() - 1].timestamp;
    let span = max - min + 1;
    if (span as u128) < segments as u128 {
        return Err(Error::DegenerateSegmentation { segments, span });
    }
    let width = span as f64 / segments as f64;
    let mut buckets: Vec<Vec<Interaction>> = vec![Vec::new(); segments];
    for e in sorted {
        let k = (((e.timestamp - min) as f64) / width).floor() as usize;
        buckets[k.min(segments - 1)].push(e);
    }
    Ok(buckets
        .iter()
        .enumerate()
        .map(|(k, events)| {
            let start = min as f64 + k as f64 * width;
            StreamSegment::from_events(k, start, start + width, events)
        })
        .collect())
}

/// Mean Jaccard overlap of entity sets between consecutive segments.
pub fn compute_aer(segments: &[StreamSegment]) -> Result<f64> {
    if segments.len() < 2 {
        return Err(Error::Contract(format!(
            "entity overlap needs at least 2 segments, got {}",
            segments.len()
        )));
    }
    let total: f64 = segments
        .windows(2)
        .map(|w| jaccard(&w[0].entities, &w[1].entities))
        .sum();
    Ok(total / (segments.len() - 1) as f64)
}

fn jaccard(a: &BTreeSet<Entity>, b: &BTreeSet<Entity>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: usize, item: usize, timestamp: i64) -> Interaction {
        Interaction { user, item, timestamp }
    }

    fn with_entities(ids: &[usize]) -> StreamSegment {
        let events: Vec<_> = ids.iter().map(|&i| ev(i, i, 0)).collect();
        let mut s = StreamSegment::from_events(0, 0.0, 1.0, &events);
        s.entities = ids.iter().map(|&i| Entity::Item(i)).collect();
        s
    }

    #[test]
    fn uniform_timestamps_give_equal_windows() {
        let events: Vec<_> = (0..100).map(|t| ev(0, 0, t)).collect();
        let segs = segment_stream(&events, 4).unwrap();
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.len(), 25);
            assert_eq!(s.start, 25.0 * k as f64);
            assert_eq!(s.end - s.start, 25.0);
        }
    }

    #[test]
    fn ten_records_split_eight_one_one() {
        let events: Vec<_> = (0..10).map(|t| ev(t as usize, 0, t)).collect();
        let s = StreamSegment::from_events(0, 0.0, 10.0, &events);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s.test, vec![(9, 0)]);
        assert_eq!(s.val, vec![(8, 0)]);
    }

    #[test]
    fn single_timestamp_is_degenerate() {
        let events = vec![ev(0, 0, 7), ev(1, 1, 7)];
        assert!(matches!(
            segment_stream(&events, 2),
            Err(Error::DegenerateSegmentation { .. })
        ));
        assert!(segment_stream(&events, 1).is_err());
        assert!(segment_stream(&[], 2).is_err());
    }

    #[test]
    fn last_window_is_closed() {
        let events = vec![ev(0, 0, 0), ev(0, 1, 9)];
        let segs = segment_stream(&events, 2).unwrap();
        assert_eq!(segs[1].len(), 1);
    }

    #[test]
    fn aer_cases() {
        let a = with_entities(&[1, 2, 3, 4]);
        let b = with_entities(&[3, 4, 5, 6]);
        assert!((compute_aer(&[a.clone(), b]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_aer(&[a.clone(), a.clone(), a.clone()]).unwrap(), 1.0);
        let c = with_entities(&[7, 8]);
        assert_eq!(compute_aer(&[a.clone(), c]).unwrap(), 0.0);
        assert!(compute_aer(&[a]).is_err());
    }

    #[test]
    fn users_and_items_are_namespaced() {
        let s = StreamSegment::from_events(0, 0.0, 1.0, &[ev(3, 3, 0)]);
        assert_eq!(s.entities.len(), 2);
        assert_eq!((s.user_bound(), s.item_bound()), (4, 4));
    }

    proptest! {
        #[test]
        fn partitions_are_exhaustive_and_disjoint(
            raw in prop::collection::vec((0usize..20, 0usize..20, 0i64..500), 1..200),
            segments in 2usize..6,
        ) {
            let events: Vec<_> = raw.iter().map(|&(u, i, t)| ev(u, i, t)).collect();
            let span = events.iter().map(|e| e.timestamp).max().unwrap()
                - events.iter().map(|e| e.timestamp).min().unwrap() + 1;
            prop_assume!(span >= segments as i64);
            let segs = segment_stream(&events, segments).unwrap();
            prop_assert_eq!(segs.len(), segments);
            let mut all: Vec<(usize, usize)> = segs
                .iter()
                .flat_map(|s| s.train.iter().chain(&s.val).chain(&s.test).copied())
                .collect();
            let mut expected: Vec<(usize, usize)> = events.iter().map(|e| (e.user, e.item)).collect();
            all.sort_unstable();
            expected.sort_unstable();
            prop_assert_eq!(all, expected);
            for s in &segs {
                let (tr, va, te) = split_sizes(s.len());
                prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (tr, va, te));
            }
        }
    }
}
