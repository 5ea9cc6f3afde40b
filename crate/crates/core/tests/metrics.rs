use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rote::data::{Dataset, Event, IdMap, UserSequence};
use rote::metrics::*;
use rote::model::{EncodingMode, Model, ModelConfig};
use rote::Error;

/// Sort candidates by (score desc, index asc) and read off the position.
fn oracle_rank(scores: &[f64], target: usize, excl: &[usize]) -> usize {
    let mut cand: Vec<usize> = (1..scores.len()).filter(|j| !excl.contains(j) || *j == target).collect();
    cand.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    cand.iter().position(|&j| j == target).unwrap() + 1
}

fn oracle_ndcg(rank: usize, k: usize) -> f64 {
    if rank <= k {
        std::f64::consts::LN_2 / ((rank + 1) as f64).ln()
    } else {
        0.0
    }
}

#[test]
fn ranks_match_sort_oracle_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10_000 {
        let n = rng.random_range(2..60);
        // A small value set makes ties common.
        let levels = rng.random_range(1..8);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let target = rng.random_range(1..n);
        let excl: Vec<usize> = (0..rng.random_range(0..4))
            .map(|_| rng.random_range(0..n + 2))
            .filter(|&e| e != target)
            .collect();
        let got = rank_of_target(&scores, target, &excl).unwrap();
        let want = oracle_rank(&scores, target, &excl);
        assert_eq!(got, want, "trial {trial}: {scores:?} target {target} excl {excl:?}");
        for k in [1, 5, 10, 20] {
            assert_eq!(recall_at_k(got, k), if want <= k { 1.0 } else { 0.0 });
            assert!((ndcg_at_k(got, k) - oracle_ndcg(want, k)).abs() < 1e-15);
        }
    }
}

#[test]
fn analytic_values() {
    assert_eq!(ndcg_at_k(3, 5), 0.5);
    assert_eq!(ndcg_at_k(1, 1), 1.0);
    assert_eq!(ndcg_at_k(6, 5), 0.0);
    assert_eq!(recall_at_k(5, 5), 1.0);
    assert_eq!(recall_at_k(0, 5), 0.0);
    assert_eq!(ndcg_at_k(0, 5), 0.0);
}

#[test]
fn rank_rejects_bad_inputs() {
    let s = [0.0, 1.0, f64::NAN, 2.0];
    assert!(matches!(rank_of_target(&s, 0, &[]), Err(Error::Index { .. })));
    assert!(matches!(rank_of_target(&s, 4, &[]), Err(Error::Index { .. })));
    assert!(matches!(rank_of_target(&s, 2, &[]), Err(Error::Domain(_))));
    assert!(matches!(rank_of_target(&s, 1, &[1]), Err(Error::Domain(_))));
    // NaN competitors never rank ahead
    assert_eq!(rank_of_target(&s, 1, &[]).unwrap(), 2);
}

/// Five users over items 1..=6, each with four events.
fn toy() -> Dataset {
    let mut items = IdMap::new(1);
    for id in ["a", "b", "c", "d", "e", "f"] {
        items.insert(id);
    }
    let mut users = IdMap::new(0);
    let rows: [[usize; 4]; 5] = [[4, 5, 2, 1], [1, 2, 6, 3], [2, 3, 4, 6], [5, 6, 1, 2], [3, 3, 3, 5]];
    let sequences = rows
        .iter()
        .enumerate()
        .map(|(u, r)| {
            users.insert(&format!("u{u}"));
            UserSequence {
                user_index: u,
                events: r.iter().enumerate().map(|(t, &i)| Event::new(i, 86_400 * t as i64).unwrap()).collect(),
            }
        })
        .collect();
    Dataset {
        users,
        items,
        sequences,
        dropped_users: 0,
    }
}

/// Item 1 scores highest and item 6 lowest, whatever the history.
fn fixed(_: &[Event]) -> rote::Result<Vec<f64>> {
    Ok(vec![100.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0])
}

fn opts(exclude: bool, threads: usize) -> EvalOptions {
    EvalOptions {
        ks: vec![1, 5, 10],
        exclude_history: exclude,
        threads,
    }
}

#[test]
fn five_user_toy_evaluation() {
    let ds = toy();
    let l2 = |r: f64| 1.0 / (r + 1.0).log2();

    // test targets 1,3,6,2,5 rank at their own index
    let test = eval_cases(&ds, EvalSplit::Test).unwrap();
    assert_eq!(test.iter().map(|c| c.target).collect::<Vec<_>>(), [1, 3, 6, 2, 5]);
    assert!(test.iter().all(|c| c.input.len() == 3));
    let m = evaluate_with(EvalSplit::Test, &test, &opts(false, 1), fixed).unwrap();
    assert_eq!(m.n_users, 5);
    assert_eq!(m.recall_at(1), Some(0.2));
    assert_eq!(m.recall_at(5), Some(0.8));
    assert_eq!(m.recall_at(10), Some(1.0));
    let want5 = (l2(1.0) + l2(3.0) + l2(2.0) + l2(5.0)) / 5.0;
    assert!((m.ndcg_at(5).unwrap() - want5).abs() < 1e-15);
    assert_eq!(m.ndcg_at(7), None);

    // Excluding history items: ranks become 1,1,3,1,4.
    let m = evaluate_with(EvalSplit::Test, &test, &opts(true, 1), fixed).unwrap();
    assert_eq!(m.recall_at(1), Some(0.6));
    assert_eq!(m.recall_at(5), Some(1.0));
    let want = (3.0 * l2(1.0) + l2(3.0) + l2(4.0)) / 5.0;
    assert!((m.ndcg_at(5).unwrap() - want).abs() < 1e-15);

    // validation targets 2,6,4,1,3 with two-event inputs
    let valid = eval_cases(&ds, EvalSplit::Valid).unwrap();
    assert_eq!(valid.iter().map(|c| c.target).collect::<Vec<_>>(), [2, 6, 4, 1, 3]);
    assert!(valid.iter().all(|c| c.input.len() == 2));
    let m = evaluate_with(EvalSplit::Valid, &valid, &opts(false, 1), fixed).unwrap();
    assert_eq!(m.recall_at(5), Some(0.8));
    let want = (l2(2.0) + l2(4.0) + l2(1.0) + l2(3.0)) / 5.0;
    assert!((m.ndcg_at(5).unwrap() - want).abs() < 1e-15);

    let tsv = m.to_tsv();
    assert!(tsv.starts_with("split\tK\trecall\tndcg\tn_users\n"));
    assert!(tsv.contains("valid\t5\t0.800000\t"));
}

#[test]
fn evaluation_is_independent_of_thread_count() {
    let ds = toy();
    let mut cfg = ModelConfig::new(ds.vocab_size(), EncodingMode::YearMonthDay);
    cfg.d_model = 8;
    cfg.sync_head_dim();
    let model = Model::init_with_std(cfg, 3, 0.3).unwrap();
    let one = evaluate(&model, &ds, EvalSplit::Test, &opts(false, 1)).unwrap();
    let four = evaluate(&model, &ds, EvalSplit::Test, &opts(false, 4)).unwrap();
    assert_eq!(one, four);
    let cases = eval_cases(&ds, EvalSplit::Test).unwrap();
    let direct = evaluate_with(EvalSplit::Test, &cases, &opts(false, 1), |h| model.score_next(h)).unwrap();
    assert_eq!(one, direct);

    let mut other = ModelConfig::new(ds.vocab_size() + 1, EncodingMode::YearMonthDay);
    other.d_model = 8;
    other.sync_head_dim();
    let wrong = Model::init(other, 0).unwrap();
    assert!(matches!(
        evaluate(&wrong, &ds, EvalSplit::Test, &opts(false, 1)),
        Err(Error::Mismatch { .. })
    ));
    assert!(matches!(
        RankingMetrics::from_ranks(EvalSplit::Test, &[], &[10]),
        Err(Error::Domain(_))
    ));
}

proptest! {
    #[test]
    fn ranking_is_invariant_to_monotone_rescaling(
        scores in prop::collection::vec(-5.0f64..5.0, 2..40),
        t in 1usize..40,
        a in prop::sample::select(vec![0.25f64, 0.5, 2.0, 8.0]),
    ) {
        let t = 1 + (t - 1) % (scores.len() - 1);
        let r = rank_of_target(&scores, t, &[]).unwrap();
        // power-of-two scaling is exact, so no new ties appear
        let affine: Vec<f64> = scores.iter().map(|s| a * s).collect();
        prop_assert_eq!(rank_of_target(&affine, t, &[]).unwrap(), r);
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(rank_of_target(&exp, t, &[]).unwrap(), r);
    }

    #[test]
    fn raising_the_target_never_hurts(
        scores in prop::collection::vec(-5.0f64..5.0, 2..40),
        t in 1usize..40,
        bump in 0.0f64..4.0,
    ) {
        let t = 1 + (t - 1) % (scores.len() - 1);
        let r = rank_of_target(&scores, t, &[]).unwrap();
        let mut up = scores.clone();
        up[t] += bump;
        prop_assert!(rank_of_target(&up, t, &[]).unwrap() <= r);
        // excluding a competitor never hurts either
        let other = if t == 1 { scores.len() - 1 } else { 1 };
        if other != t {
            prop_assert!(rank_of_target(&scores, t, &[other]).unwrap() <= r);
        }
    }

    #[test]
    fn ndcg_is_bounded_by_recall_and_decreasing(rank in 1usize..100, k in 1usize..50) {
        prop_assert!(ndcg_at_k(rank, k) <= recall_at_k(rank, k));
        prop_assert!(ndcg_at_k(rank + 1, k) <= ndcg_at_k(rank, k));
        prop_assert!(recall_at_k(rank, k + 1) >= recall_at_k(rank, k));
    }
}
