//! Recall@K, NDCG@K and popularity-group breakdowns.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;
use crate::recommender::RecommendationList;

pub const DEFAULT_CUTOFFS: [usize; 3] = [10, 20, 50];

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        compensated_sum(values) / values.len() as f64
    }
}

/// `|top-k ∩ truth| / |truth|`; zero for empty truth.
pub fn recall_at_k(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let set: HashSet<u32> = truth.iter().copied().collect();
    let hits = ranked.iter().take(k).filter(|i| set.contains(i)).count();
    hits as f64 / set.len() as f64
}

/// Binary-relevance NDCG; zero for empty truth.
pub fn ndcg_at_k(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
    let set: HashSet<u32> = truth.iter().copied().collect();
    if set.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| set.contains(i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(set.len()))
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    dcg / idcg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityGroup {
    Popular,
    Medium,
    Personal,
}

impl PopularityGroup {
    pub const ALL: [PopularityGroup; 3] = [
        PopularityGroup::Popular,
        PopularityGroup::Medium,
        PopularityGroup::Personal,
    ];
}

/// Item → group by training count, top third popular, bottom third personal.
/// Ties sort by item id ascending.
pub fn popularity_groups(train: &InteractionMatrix) -> Vec<PopularityGroup> {
    let deg = train.item_degrees();
    let n = deg.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    let b1 = n.div_ceil(3);
    let b2 = (2 * n).div_ceil(3);
    let mut groups = vec![PopularityGroup::Personal; n];
    for (pos, &item) in order.iter().enumerate() {
        groups[item] = if pos < b1 {
            PopularityGroup::Popular
        } else if pos < b2 {
            PopularityGroup::Medium
        } else {
            PopularityGroup::Personal
        };
    }
    groups
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: PopularityGroup,
    pub n_items: usize,
    pub n_users: usize,
    pub metrics: Vec<CutoffMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Vec<CutoffMetrics>,
    pub groups: Vec<GroupReport>,
    pub n_users: usize,
    /// Users with test interactions but no recommendation list, plus users
    /// with lists but no test interactions.
    pub n_users_skipped: usize,
    pub config_hash: String,
    pub git_revision: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn metric(&self, k: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

fn metrics_for(pairs: &[(&[u32], Vec<u32>)], cutoffs: &[usize]) -> Vec<CutoffMetrics> {
    cutoffs
        .iter()
        .map(|&k| {
            let r: Vec<f64> = pairs.iter().map(|(l, t)| recall_at_k(l, t, k)).collect();
            let n: Vec<f64> = pairs.iter().map(|(l, t)| ndcg_at_k(l, t, k)).collect();
            CutoffMetrics {
                k,
                recall: compensated_mean(&r),
                ndcg: compensated_mean(&n),
            }
        })
        .collect()
}

/// Macro-average over users that have both a list and test items. Lists must
/// reach the largest cutoff unless the user ran out of candidates, given as
/// `n_items - |train_u|` when `train` is supplied.
pub fn evaluate(
    recs: &[RecommendationList],
    test: &InteractionMatrix,
    train: Option<&InteractionMatrix>,
    groups: Option<&[PopularityGroup]>,
    cutoffs: &[usize],
    config_hash: &str,
    git_revision: &str,
) -> Result<MetricsReport> {
    let max_k = cutoffs.iter().copied().max().unwrap_or(0);
    if max_k == 0 {
        return Err(Error::Config(
            "at least one positive cutoff required".into(),
        ));
    }
    let by_user: BTreeMap<usize, &RecommendationList> = recs.iter().map(|l| (l.user, l)).collect();
    let mut pairs: Vec<(&[u32], Vec<u32>)> = Vec::new();
    let mut skipped = 0;
    for u in 0..test.n_users() {
        let truth = test.row(u);
        match (by_user.get(&u), truth.is_empty()) {
            (Some(l), false) => {
                let available = train.map_or(usize::MAX, |tr| {
                    let hist = if u < tr.n_users() { tr.row(u).len() } else { 0 };
                    test.n_items().saturating_sub(hist)
                });
                if l.items.len() < max_k.min(available) {
                    return Err(Error::ShortList {
                        user: u,
                        len: l.items.len(),
                        cutoff: max_k,
                    });
                }
                pairs.push((&l.items, truth.to_vec()));
            }
            (None, false) => skipped += 1,
            _ => {}
        }
    }
    skipped += by_user
        .keys()
        .filter(|&&u| u >= test.n_users() || test.row(u).is_empty())
        .count();

    let mut group_reports = Vec::new();
    if let Some(g) = groups {
        if g.len() != test.n_items() {
            return Err(Error::DimensionMismatch {
                expected: test.n_items(),
                actual: g.len(),
            });
        }
        for group in PopularityGroup::ALL {
            let sub: Vec<(&[u32], Vec<u32>)> = pairs
                .iter()
                .map(|(l, t)| {
                    (
                        *l,
                        t.iter()
                            .copied()
                            .filter(|&i| g[i as usize] == group)
                            .collect::<Vec<_>>(),
                    )
                })
                .filter(|(_, t)| !t.is_empty())
                .collect();
            group_reports.push(GroupReport {
                group,
                n_items: g.iter().filter(|&&x| x == group).count(),
                n_users: sub.len(),
                metrics: metrics_for(&sub, cutoffs),
            });
        }
    }
    Ok(MetricsReport {
        metrics: metrics_for(&pairs, cutoffs),
        groups: group_reports,
        n_users: pairs.len(),
        n_users_skipped: skipped,
        config_hash: config_hash.to_string(),
        git_revision: git_revision.to_string(),
    })
}

/// Expected Recall@k of a uniformly random ranking of each user's unseen
/// items: `min(k, n_cand) / n_cand`, macro-averaged over users with test
/// items.
pub fn random_recall_expectation(
    train: &InteractionMatrix,
    test: &InteractionMatrix,
    k: usize,
) -> f64 {
    let vals: Vec<f64> = (0..test.n_users())
        .filter(|&u| !test.row(u).is_empty())
        .map(|u| {
            let hist = if u < train.n_users() {
                train.row(u).len()
            } else {
                0
            };
            let cand = test.n_items().saturating_sub(hist).max(1);
            k.min(cand) as f64 / cand as f64
        })
        .collect();
    compensated_mean(&vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[0, 2], &[0, 1], 2), 0.5);
        assert_eq!(recall_at_k(&[1, 0, 5], &[0, 1], 3), 1.0);
        assert_eq!(recall_at_k(&[4, 5], &[0, 1], 2), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[7, 1], &[7], 2), 1.0);
        let v = ndcg_at_k(&[1, 7], &[7], 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[1, 2], &[7], 2), 0.0);
    }

    #[test]
    fn groups_one_per_third() {
        let train = InteractionMatrix::from_rows(3, vec![vec![0, 1, 2]; 1]).unwrap();
        let g = popularity_groups(&train);
        assert_eq!(
            g,
            vec![
                PopularityGroup::Popular,
                PopularityGroup::Medium,
                PopularityGroup::Personal
            ]
        );

        let rows: Vec<Vec<u32>> = (0..9)
            .map(|u| {
                if u < 1 {
                    vec![2]
                } else if u < 6 {
                    vec![0]
                } else {
                    vec![1]
                }
            })
            .collect();
        let mut rows = rows;
        rows.extend(std::iter::repeat_n(vec![0], 4));
        let train = InteractionMatrix::from_rows(3, rows).unwrap();
        assert_eq!(
            popularity_groups(&train),
            vec![
                PopularityGroup::Popular,
                PopularityGroup::Medium,
                PopularityGroup::Personal
            ]
        );
    }

    #[test]
    fn equal_counts_split_by_id() {
        let train = InteractionMatrix::from_rows(7, vec![(0..7).collect()]).unwrap();
        let g = popularity_groups(&train);
        let count = |x| g.iter().filter(|&&y| y == x).count();
        assert_eq!(count(PopularityGroup::Popular), 3);
        assert_eq!(count(PopularityGroup::Medium), 2);
        assert_eq!(count(PopularityGroup::Personal), 2);
        assert_eq!(&g[..3], &[PopularityGroup::Popular; 3]);
    }

    #[test]
    fn macro_average_hand_fixture() {
        let test =
            InteractionMatrix::from_rows(6, vec![vec![0, 1], vec![2], vec![3, 4, 5]]).unwrap();
        let recs = vec![
            RecommendationList {
                user: 0,
                items: vec![0, 5],
                scores: vec![1, 1],
            },
            RecommendationList {
                user: 1,
                items: vec![1, 2],
                scores: vec![1, 1],
            },
            RecommendationList {
                user: 2,
                items: vec![3, 4],
                scores: vec![1, 1],
            },
        ];
        let r = evaluate(&recs, &test, None, None, &[2], "h", "rev").unwrap();
        let recall = (0.5 + 1.0 + 2.0 / 3.0) / 3.0;
        let l3 = 1.0 / 3f64.log2();
        let ndcg = (1.0 / (1.0 + l3) + l3 + 1.0) / 3.0;
        assert!((r.metrics[0].recall - recall).abs() < 1e-12);
        assert!((r.metrics[0].ndcg - ndcg).abs() < 1e-12);
        assert_eq!(r.n_users, 3);
    }

    #[test]
    fn short_list_names_user() {
        let test = InteractionMatrix::from_rows(60, vec![vec![0], vec![1]]).unwrap();
        let recs = vec![
            RecommendationList {
                user: 0,
                items: (0..50).collect(),
                scores: vec![0; 50],
            },
            RecommendationList {
                user: 1,
                items: vec![1],
                scores: vec![0],
            },
        ];
        match evaluate(&recs, &test, None, None, &DEFAULT_CUTOFFS, "", "") {
            Err(Error::ShortList { user, .. }) => assert_eq!(user, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skipped_users_counted() {
        let test = InteractionMatrix::with_dims(3, 4, vec![vec![0], vec![], vec![2]]).unwrap();
        let recs = vec![
            RecommendationList {
                user: 0,
                items: vec![0, 1],
                scores: vec![0; 2],
            },
            RecommendationList {
                user: 1,
                items: vec![0, 1],
                scores: vec![0; 2],
            },
        ];
        let r = evaluate(&recs, &test, None, None, &[2], "", "").unwrap();
        assert_eq!(r.n_users, 1);
        assert_eq!(r.n_users_skipped, 2);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(&v), 2.0);
    }

    #[test]
    fn random_expectation() {
        let train = InteractionMatrix::from_rows(10, vec![vec![0, 1, 2, 3, 4], vec![0]]).unwrap();
        let test = InteractionMatrix::from_rows(10, vec![vec![5], vec![1]]).unwrap();
        let e = random_recall_expectation(&train, &test, 2);
        assert!((e - (2.0 / 5.0 + 2.0 / 9.0) / 2.0).abs() < 1e-15);
    }
}
