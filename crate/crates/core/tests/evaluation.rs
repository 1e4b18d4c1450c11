use proptest::prelude::*;
use rand::seq::SliceRandom;
use stagecf::evaluator::{
    evaluate, ndcg_at_k, popularity_groups, random_recall_expectation, recall_at_k, PopularityGroup,
};
use stagecf::pipeline::{synthesize, SynthConfig};
use stagecf::recommender::RecommendationList;
use stagecf::rng::{stream, Purpose};

#[test]
fn random_ranker_matches_null_model() {
    let (train, test) = synthesize(&SynthConfig::default()).unwrap();
    let expected = random_recall_expectation(&train, &test, 10);
    let reps = 200;
    let mut total = 0.0;
    for rep in 0..reps {
        let lists: Vec<RecommendationList> = (0..train.n_users())
            .map(|u| {
                let mut rng = stream(rep, Purpose::Verify, u as u64, 0);
                let mut cand: Vec<u32> = (0..train.n_items() as u32)
                    .filter(|&i| !train.contains(u, i))
                    .collect();
                cand.shuffle(&mut rng);
                cand.truncate(50);
                RecommendationList {
                    user: u,
                    scores: vec![0; cand.len()],
                    items: cand,
                }
            })
            .collect();
        total += evaluate(&lists, &test, None, None, &[10], "", "")
            .unwrap()
            .metric(10)
            .unwrap()
            .recall;
    }
    let mean = total / reps as f64;
    assert!((mean - expected).abs() < 0.005, "{mean} vs {expected}");
}

#[test]
fn group_breakdown_partitions_catalog() {
    let (train, test) = synthesize(&SynthConfig {
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let groups = popularity_groups(&train);
    let lists: Vec<RecommendationList> = (0..train.n_users())
        .map(|u| {
            let items: Vec<u32> = (0..train.n_items() as u32)
                .filter(|&i| !train.contains(u, i))
                .collect();
            RecommendationList {
                user: u,
                scores: vec![0; items.len()],
                items,
            }
        })
        .collect();
    let r = evaluate(
        &lists,
        &test,
        Some(&train),
        Some(&groups),
        &[10, 20, 50],
        "h",
        "g",
    )
    .unwrap();
    let sizes: Vec<usize> = r.groups.iter().map(|g| g.n_items).collect();
    assert_eq!(sizes, vec![34, 33, 33]);
    assert_eq!(
        r.groups.iter().map(|g| g.group).collect::<Vec<_>>(),
        PopularityGroup::ALL.to_vec()
    );
    let deg = train.item_degrees();
    let min_popular = (0..deg.len())
        .filter(|&i| groups[i] == PopularityGroup::Popular)
        .map(|i| deg[i])
        .min();
    let max_personal = (0..deg.len())
        .filter(|&i| groups[i] == PopularityGroup::Personal)
        .map(|i| deg[i])
        .max();
    assert!(min_popular >= max_personal);
}

fn ranking_and_truth() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (
        Just((0u32..30).collect::<Vec<_>>()).prop_shuffle(),
        prop::collection::btree_set(0u32..30, 0..10),
    )
        .prop_map(|(r, t)| (r, t.into_iter().collect()))
}

proptest! {
    #[test]
    fn metrics_bounded_and_monotone_in_k((ranked, truth) in ranking_and_truth()) {
        let mut last = (0.0, 0.0);
        for k in 1..=30 {
            let r = recall_at_k(&ranked, &truth, k);
            let n = ndcg_at_k(&ranked, &truth, k);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
            // Normalized DCG can fall as k grows; the unnormalized gain cannot.
            let ideal: f64 = (0..k.min(truth.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
            let dcg = n * ideal;
            prop_assert!(r >= last.0);
            prop_assert!(dcg >= last.1 - 1e-12);
            last = (r, dcg);
        }
        if !truth.is_empty() {
            prop_assert_eq!(recall_at_k(&ranked, &truth, 30), 1.0);
        }
    }

    #[test]
    fn perfect_ranking_scores_one(truth in prop::collection::btree_set(0u32..30, 1..10)) {
        let truth: Vec<u32> = truth.into_iter().collect();
        let mut ranked = truth.clone();
        ranked.extend((0u32..30).filter(|i| !truth.contains(i)));
        let k = truth.len();
        prop_assert_eq!(recall_at_k(&ranked, &truth, k), 1.0);
        prop_assert!((ndcg_at_k(&ranked, &truth, k) - 1.0).abs() < 1e-12);
    }
}
