use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamprompt::data::{BipartiteGraph, Interaction, StreamSegment};
use streamprompt::eval::{evaluate_rankings, evaluate_segment, ndcg_at_k, recall_at_k};
use streamprompt::numeric::DenseMatrix;
use streamprompt::train::{init_new_entities, ModelState, TrainConfig};

fn brute_recall(ranked: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for &t in truth {
        if ranked[..k.min(ranked.len())].contains(&t) {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

fn brute_ndcg(ranked: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().enumerate().take(k) {
        if truth.contains(item) {
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(truth.len()) {
        idcg += 1.0 / (pos as f64 + 2.0).log2();
    }
    dcg / idcg
}

#[test]
fn metrics_match_brute_force_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..100 {
        let n = rng.random_range(1..30);
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.shuffle(&mut rng);
        let truth: Vec<usize> = (0..n + 5).filter(|_| rng.random_bool(0.3)).collect();
        if truth.is_empty() {
            continue;
        }
        let k = rng.random_range(1..n + 3);
        let set: BTreeSet<usize> = truth.iter().copied().collect();
        assert!((recall_at_k(&ranked, &set, k).unwrap() - brute_recall(&ranked, &truth, k)).abs() <= 1e-12);
        assert!((ndcg_at_k(&ranked, &set, k).unwrap() - brute_ndcg(&ranked, &truth, k)).abs() <= 1e-12);
    }
}

#[test]
fn ndcg_of_single_item_at_rank_two() {
    let truth: BTreeSet<usize> = [7].into();
    let v = ndcg_at_k(&[1, 7], &truth, 2).unwrap();
    assert!((v - 0.6309297535714574).abs() < 1e-15);
}

/// Sorts every candidate with the standard library and scores by formula.
fn brute_evaluate(
    test: &[(usize, usize)],
    k: usize,
    scores: &[Vec<f64>],
    excluded: &HashSet<(usize, usize)>,
) -> Option<(f64, f64, usize)> {
    let users: BTreeSet<usize> = test.iter().filter(|p| !excluded.contains(p)).map(|p| p.0).collect();
    if users.is_empty() {
        return None;
    }
    let (mut r, mut n) = (0.0, 0.0);
    for &u in &users {
        let truth: Vec<usize> = test
            .iter()
            .filter(|p| p.0 == u && !excluded.contains(p))
            .map(|p| p.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut candidates: Vec<usize> = (0..scores[u].len()).filter(|&i| !excluded.contains(&(u, i))).collect();
        candidates.sort_by(|&a, &b| scores[u][b].partial_cmp(&scores[u][a]).unwrap().then(a.cmp(&b)));
        r += brute_recall(&candidates, &truth, k);
        n += brute_ndcg(&candidates, &truth, k);
    }
    Some((r / users.len() as f64, n / users.len() as f64, users.len()))
}

#[test]
fn evaluation_matches_brute_force_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..100 {
        let users = rng.random_range(1..8);
        let items = rng.random_range(2..25);
        // coarse scores so ties and the id tie-break are exercised
        let scores: Vec<Vec<f64>> = (0..users)
            .map(|_| (0..items).map(|_| rng.random_range(0..6) as f64).collect())
            .collect();
        let test: Vec<(usize, usize)> = (0..rng.random_range(1..20))
            .map(|_| (rng.random_range(0..users), rng.random_range(0..items)))
            .collect();
        let excluded: HashSet<(usize, usize)> = (0..rng.random_range(0..30))
            .map(|_| (rng.random_range(0..users), rng.random_range(0..items)))
            .collect();
        let k = rng.random_range(1..items + 2);
        let got = evaluate_rankings(&test, k, |u| Ok(scores[u].clone()), |u, i| excluded.contains(&(u, i)));
        match brute_evaluate(&test, k, &scores, &excluded) {
            None => assert!(got.is_err(), "case {case}"),
            Some((r, n, count)) => {
                let got = got.unwrap();
                assert!((got.recall - r).abs() <= 1e-12, "case {case}");
                assert!((got.ndcg - n).abs() <= 1e-12, "case {case}");
                assert_eq!(got.users, count);
            }
        }
    }
}

#[test]
fn an_oracle_scorer_gets_perfect_metrics() {
    let test = vec![(0, 3), (0, 5), (1, 2)];
    let score = evaluate_rankings(
        &test,
        2,
        |u| {
            Ok((0..10)
                .map(|i| if test.contains(&(u, i)) { 1.0 } else { 0.0 })
                .collect())
        },
        |_, _| false,
    )
    .unwrap();
    assert_eq!((score.recall, score.ndcg, score.users), (1.0, 1.0, 2));
}

#[test]
fn random_scores_recall_the_base_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let trials = 200;
    let mut total = 0.0;
    for _ in 0..trials {
        let truth = rng.random_range(0..1000);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        total += evaluate_rankings(&[(0, truth)], 20, |_| Ok(scores.clone()), |_, _| false)
            .unwrap()
            .recall;
    }
    let p = 20.0 / 1000.0;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let mean = total / trials as f64;
    assert!((mean - p).abs() <= 3.0 * sigma, "mean recall {mean}");
}

#[test]
fn evaluation_is_invariant_under_item_relabelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let (users, items) = (15, 20);
    let events: Vec<Interaction> = (0..200)
        .map(|t| Interaction {
            user: rng.random_range(0..users),
            item: rng.random_range(0..items),
            timestamp: t,
        })
        .collect();
    let seg = StreamSegment::from_events(0, 0.0, 200.0, &events);
    let config = TrainConfig {
        dim: 4,
        views: 2,
        node_prompts: 3,
        struct_prompts: 3,
        codebook: 3,
        ..TrainConfig::default()
    };
    let mut state = ModelState::new(&config, &mut rng).unwrap();
    init_new_entities(&mut state, &seg, &mut rng);
    let g = BipartiteGraph::from_edges(state.model.num_users(), state.model.num_items(), &seg.train).unwrap();
    let base = evaluate_segment(&state, &g, &seg, 5).unwrap();

    let mut perm: Vec<usize> = (0..state.model.num_items()).collect();
    perm.shuffle(&mut rng);
    let relabel = |pairs: &[(usize, usize)]| pairs.iter().map(|&(u, i)| (u, perm[i])).collect::<Vec<_>>();
    let mut moved = seg.clone();
    moved.train = relabel(&seg.train);
    moved.test = relabel(&seg.test);
    let table = state.model.table.items;
    let old = state.model.params.get(table).value.clone();
    let mut new = DenseMatrix::zeros(old.rows(), old.cols());
    for (i, &p) in perm.iter().enumerate() {
        new.row_mut(p).copy_from_slice(old.row(i));
    }
    let mut permuted = state.clone();
    permuted.model.params.get_mut(table).set_value(new);
    let g2 = BipartiteGraph::from_edges(g.num_users(), g.num_items(), &moved.train).unwrap();
    let after = evaluate_segment(&permuted, &g2, &moved, 5).unwrap();
    assert_eq!(base.users, after.users);
    assert!((base.recall - after.recall).abs() <= 1e-12);
    assert!((base.ndcg - after.ndcg).abs() <= 1e-12);
}
