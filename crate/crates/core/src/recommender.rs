//! Reverse burn-up sampling and top-K ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::{DecayCache, InteractionMatrix};
use crate::kernel::{
    sample_binomial, sample_poisson, stage_init, DecaySchemeConfig, DiffusionSchedule, RateMode,
    SamplerMode, StageVector,
};
use crate::network::{scaled_state, softplus, ScoreNet};
use crate::rng::{self, Purpose};

/// Users sampled together through one batched network pass.
const USER_CHUNK: usize = 64;

/// Everything the burn-up loop needs besides the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub k: u32,
    pub schedule: DiffusionSchedule,
    pub decay: DecaySchemeConfig,
    pub seed: u64,
    pub parallel: bool,
}

/// Source of the remaining-deficit estimate `q` during burn-up.
pub trait DeficitEstimator: Sync {
    /// One row of nonnegative estimates per state.
    fn estimate(
        &self,
        users: &[usize],
        states: &[StageVector],
        k: u32,
        step: usize,
    ) -> Result<Vec<Vec<f64>>>;
}

impl DeficitEstimator for ScoreNet {
    fn estimate(
        &self,
        _users: &[usize],
        states: &[StageVector],
        k: u32,
        step: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let x = scaled_state(states, k, self.n_items())?;
        let steps = vec![step; states.len()];
        let (logits, _) = self.forward(x.view(), &steps, None)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&z| softplus(z)).collect())
            .collect())
    }
}

/// Oracle that knows each user's clean state and returns the exact deficit.
#[derive(Clone, Debug, Default)]
pub struct TrueDeficit {
    pub targets: BTreeMap<usize, StageVector>,
}

impl DeficitEstimator for TrueDeficit {
    fn estimate(
        &self,
        users: &[usize],
        states: &[StageVector],
        _k: u32,
        _step: usize,
    ) -> Result<Vec<Vec<f64>>> {
        users
            .iter()
            .zip(states)
            .map(|(u, x)| {
                let target = self
                    .targets
                    .get(u)
                    .ok_or_else(|| Error::Domain(format!("no target state for user {u}")))?;
                Ok(target
                    .counts
                    .iter()
                    .zip(&x.counts)
                    .map(|(&a, &b)| a.saturating_sub(b) as f64)
                    .collect())
            })
            .collect()
    }
}

/// The same estimate for every item, state and step.
#[derive(Clone, Copy, Debug)]
pub struct ConstantDeficit(pub f64);

impl DeficitEstimator for ConstantDeficit {
    fn estimate(
        &self,
        _users: &[usize],
        states: &[StageVector],
        _k: u32,
        _step: usize,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(states.iter().map(|x| vec![self.0; x.len()]).collect())
    }
}

/// Run the reverse loop for a group of users from their initial states.
/// `coeffs[j]` are the decay coefficients of `users[j]`.
pub fn burn_up_batch<E: DeficitEstimator + ?Sized>(
    est: &E,
    users: &[usize],
    init: Vec<StageVector>,
    coeffs: &[&[f64]],
    settings: &SamplerSettings,
) -> Result<Vec<StageVector>> {
    if init.len() != users.len() || coeffs.len() != users.len() {
        return Err(Error::DimensionMismatch {
            expected: users.len(),
            actual: init.len().min(coeffs.len()),
        });
    }
    let k = settings.k;
    let sched = &settings.schedule;
    let dt = sched.dt();
    let mut states = init;
    for (x, c) in states.iter().zip(coeffs) {
        if c.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: c.len(),
            });
        }
        if let Some(&v) = x.counts.iter().find(|&&v| v > k) {
            return Err(Error::Domain(format!("initial count {v} exceeds K = {k}")));
        }
    }
    for step in (1..=sched.reverse_steps()).rev() {
        let t = sched.time(step);
        let q = est.estimate(users, &states, k, step)?;
        if q.len() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                actual: q.len(),
            });
        }
        for (j, x) in states.iter_mut().enumerate() {
            let mut rng = rng::stream(settings.seed, Purpose::BurnUp, users[j] as u64, step as u64);
            let qj = &q[j];
            if qj.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    actual: qj.len(),
                });
            }
            match sched.mode {
                SamplerMode::Bridge => {
                    let global = match sched.rate_mode {
                        RateMode::Global => {
                            Some(settings.decay.reverse_ratio(0.0, t, dt, RateMode::Global)?)
                        }
                        RateMode::Personalized => None,
                    };
                    for i in 0..x.len() {
                        let room = k - x.counts[i];
                        let trials = qj[i].clamp(0.0, room as f64).round() as u32;
                        if trials == 0 {
                            continue;
                        }
                        let ratio = match global {
                            Some(r) => r,
                            None => settings.decay.reverse_ratio(
                                coeffs[j][i],
                                t,
                                dt,
                                RateMode::Personalized,
                            )?,
                        };
                        x.counts[i] += sample_binomial(trials, ratio, &mut rng);
                    }
                }
                SamplerMode::Poisson => {
                    let ratio = settings.decay.reverse_ratio(0.0, t, dt, RateMode::Global)?;
                    for i in 0..x.len() {
                        let room = k - x.counts[i];
                        let qi = qj[i].clamp(0.0, room as f64);
                        x.counts[i] += sample_poisson(ratio * qi, &mut rng).min(room);
                    }
                }
            }
        }
    }
    Ok(states)
}

/// Burn up a single user from `K · r_u`.
pub fn burn_up<E: DeficitEstimator + ?Sized>(
    est: &E,
    user: usize,
    history: &[u32],
    coeffs: &[f64],
    settings: &SamplerSettings,
) -> Result<StageVector> {
    let x = stage_init(history, coeffs.len(), settings.k)?;
    let mut out = burn_up_batch(est, &[user], vec![x], &[coeffs], settings)?;
    Ok(out.pop().expect("one state in, one out"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<u32>,
    pub scores: Vec<u32>,
}

/// Mask the history, sort by score descending and break ties by a hash of
/// `(seed, user, item)`.
pub fn top_k(
    scores: &[u32],
    history: &[u32],
    cutoff: usize,
    user: usize,
    seed: u64,
) -> Result<RecommendationList> {
    if cutoff == 0 {
        return Err(Error::Domain("cutoff must be >= 1".into()));
    }
    let mut masked = vec![false; scores.len()];
    for &i in history {
        if let Some(m) = masked.get_mut(i as usize) {
            *m = true;
        }
    }
    let mut cand: Vec<(u32, u64, u32)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !masked[*i])
        .map(|(i, &s)| (s, rng::hash3(seed, user as u64, i as u64), i as u32))
        .collect();
    cand.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cand.truncate(cutoff);
    Ok(RecommendationList {
        user,
        items: cand.iter().map(|c| c.2).collect(),
        scores: cand.iter().map(|c| c.0).collect(),
    })
}

/// Burn up and rank every user in `users`, in order.
pub fn recommend_users<E: DeficitEstimator + ?Sized>(
    est: &E,
    history: &InteractionMatrix,
    decay: &DecayCache,
    settings: &SamplerSettings,
    users: &[usize],
    cutoff: usize,
) -> Result<Vec<RecommendationList>> {
    let run = |chunk: &[usize]| -> Result<Vec<RecommendationList>> {
        let init = chunk
            .iter()
            .map(|&u| stage_init(history.row(u), history.n_items(), settings.k))
            .collect::<Result<Vec<_>>>()?;
        let coeffs = chunk
            .iter()
            .map(|&u| decay.get(u))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = coeffs.iter().map(|c| c.as_ref()).collect();
        let finals = burn_up_batch(est, chunk, init, &refs, settings)?;
        chunk
            .iter()
            .zip(finals)
            .map(|(&u, x)| top_k(&x.counts, history.row(u), cutoff, u, settings.seed))
            .collect()
    };
    let parts: Vec<Result<Vec<RecommendationList>>> = if settings.parallel {
        users.par_chunks(USER_CHUNK).map(run).collect()
    } else {
        users.chunks(USER_CHUNK).map(run).collect()
    };
    let mut out = Vec::with_capacity(users.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Rank unseen items by training popularity.
pub fn popularity_recommend(
    train: &InteractionMatrix,
    users: &[usize],
    cutoff: usize,
    seed: u64,
) -> Result<Vec<RecommendationList>> {
    let degrees: Vec<u32> = train.item_degrees().into_iter().map(|d| d as u32).collect();
    users
        .iter()
        .map(|&u| top_k(&degrees, train.row(u), cutoff, u, seed))
        .collect()
}

/// Write lists as `user\titem\tscore\trank` with 1-based ranks.
pub fn write_recommendations(path: &Path, lists: &[RecommendationList]) -> Result<()> {
    let mut out = String::new();
    for l in lists {
        for (r, (item, score)) in l.items.iter().zip(&l.scores).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", l.user, item, score, r + 1).expect("write to string");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read lists written by [`write_recommendations`], grouped by user in file
/// order and sorted by rank.
pub fn read_recommendations(path: &Path) -> Result<Vec<RecommendationList>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut by_user: BTreeMap<usize, Vec<(usize, u32, u32)>> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |token: &str| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            token: token.to_string(),
        };
        if fields.len() != 4 {
            return Err(parse_err(line));
        }
        let user: usize = fields[0].parse().map_err(|_| parse_err(fields[0]))?;
        let item: u32 = fields[1].parse().map_err(|_| parse_err(fields[1]))?;
        let score: u32 = fields[2].parse().map_err(|_| parse_err(fields[2]))?;
        let rank: usize = fields[3].parse().map_err(|_| parse_err(fields[3]))?;
        if rank == 0 {
            return Err(parse_err(fields[3]));
        }
        by_user.entry(user).or_default().push((rank, item, score));
    }
    Ok(by_user
        .into_iter()
        .map(|(user, mut rows)| {
            rows.sort_unstable();
            RecommendationList {
                user,
                items: rows.iter().map(|r| r.1).collect(),
                scores: rows.iter().map(|r| r.2).collect(),
            }
        })
        .collect())
}
