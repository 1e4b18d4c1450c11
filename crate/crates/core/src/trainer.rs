//! Monte Carlo training of the score network.
//!
//! Each epoch shuffles the users with history, and for every user draws a
//! single grid step, burns the stage vector down to that time and fits the
//! network's deficit estimate with the importance-weighted Poisson-style
//! objective `Σ_i w_i (q_i - d_i log q_i)`.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluator::recall_at_k;
use crate::interactions::{DecayCache, InteractionMatrix, DEFAULT_CACHE_BYTES};
use crate::kernel::{stage_init, DecayScheme, DecaySchemeConfig, DiffusionSchedule, StageVector};
use crate::network::{
    adam_step, scaled_state, sigmoid, softplus, AdamConfig, AdamState, Checkpoint, DropoutMasks,
    NetShape, ParamSet, ScoreNet,
};
use crate::recommender::{recommend_users, SamplerSettings};
use crate::rng::{self, Purpose};

/// Floor applied to `q` inside the logarithm only.
pub const LOG_FLOOR: f64 = 1e-12;

/// Rows per gradient shard. Shards are summed in a fixed order so serial and
/// parallel execution produce the same bits.
const SHARD_ROWS: usize = 32;

/// Validation cutoff used for model selection.
pub const SELECTION_CUTOFF: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Weight `e^{-F_i(t)}` per item.
    #[default]
    Instantaneous,
    /// Weight `t e^{-t}` shared by all items.
    FiniteTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Stage count `K`.
    pub k: u32,
    pub schedule: DiffusionSchedule,
    pub decay: DecaySchemeConfig,
    pub gamma: f64,
    pub objective: Objective,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Run gradient shards and sampling on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 300,
            schedule: DiffusionSchedule::default(),
            decay: DecaySchemeConfig::default(),
            gamma: 1.0,
            objective: Objective::Instantaneous,
            hidden: vec![1000],
            time_dim: 16,
            dropout: 0.5,
            lr: 1e-4,
            batch_size: 512,
            patience: 5,
            max_epochs: 200,
            validation_fraction: 0.1,
            seed: 2024,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.decay.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn net_shape(&self, n_items: usize) -> NetShape {
        NetShape {
            n_items,
            hidden: self.hidden.clone(),
            time_dim: self.time_dim,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// SHA-256 over every field that shapes the trained weights. Sampler
    /// choices (mode, rate mode, reverse horizon) and the execution mode are
    /// excluded so one checkpoint can be sampled several ways.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("struct serializes to object");
        obj.remove("parallel");
        if let Some(s) = obj.get_mut("schedule").and_then(|s| s.as_object_mut()) {
            s.remove("mode");
            s.remove("rate_mode");
            s.remove("reverse_horizon");
        }
        let digest = Sha256::digest(serde_json::to_vec(&value).expect("value serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sampler(&self) -> SamplerSettings {
        SamplerSettings {
            k: self.k,
            schedule: self.schedule.clone(),
            decay: self.decay.clone(),
            seed: self.seed,
            parallel: self.parallel,
        }
    }
}

/// Importance-weighted loss `Σ_i w_i (q_i - d_i ln q_i)` and `dL/dq`.
fn weighted_loss(
    q: &[f64],
    x0: &StageVector,
    xt: &StageVector,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = q.len();
    for len in [x0.len(), xt.len(), weights.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let qi = q[i];
        if !(qi > 0.0) {
            return Err(Error::Domain(format!("q must be > 0, got q[{i}] = {qi}")));
        }
        let (a, b) = (x0.counts[i], xt.counts[i]);
        if b > a {
            return Err(Error::Domain(format!(
                "x_t[{i}] = {b} exceeds x_0[{i}] = {a}"
            )));
        }
        let d = (a - b) as f64;
        let w = weights[i];
        total += w * (qi - d * qi.max(LOG_FLOOR).ln());
        grad.push(w * (1.0 - d / qi));
    }
    Ok((total, grad))
}

/// Instantaneous objective with per-item decay exponents `F`.
pub fn elbo_loss(
    q: &[f64],
    x0: &StageVector,
    xt: &StageVector,
    decay_exponent: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let w: Vec<f64> = decay_exponent.iter().map(|f| (-f).exp()).collect();
    weighted_loss(q, x0, xt, &w)
}

/// Finite-time objective with the shared weight `t e^{-t}`.
pub fn finite_time_loss(
    q: &[f64],
    x0: &StageVector,
    xt: &StageVector,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    let w = vec![t * (-t).exp(); q.len()];
    weighted_loss(q, x0, xt, &w)
}

/// Per-item loss weights at time `t` for the configured objective and decay.
pub fn loss_weights(cfg: &TrainConfig, coeffs: &[f64], t: f64) -> Vec<f64> {
    match cfg.objective {
        Objective::FiniteTime => vec![t * (-t).exp(); coeffs.len()],
        Objective::Instantaneous => match cfg.decay.scheme {
            DecayScheme::Burndown => coeffs.iter().map(|c| (-t / (1.0 + c)).exp()).collect(),
            _ => coeffs.iter().map(|&c| cfg.decay.survival(c, t)).collect(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Sum of per-user losses over the epoch.
    pub total: f64,
    /// Mean of the per-batch mean losses.
    pub mean: f64,
    /// Monte Carlo samples drawn (one per user).
    pub samples: usize,
}

/// Network and optimizer state between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub net: ScoreNet,
    pub adam: AdamState,
    pub epoch: usize,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, n_items: usize) -> Result<Self> {
        let mut rng = rng::stream(cfg.seed, Purpose::Init, 0, 0);
        let net = ScoreNet::new(cfg.net_shape(n_items), &mut rng)?;
        let adam = AdamState::new(&net.params);
        Ok(TrainState {
            net,
            adam,
            epoch: 0,
        })
    }

    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config_hash: cfg.fingerprint(),
            net: self.net.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
        }
    }
}

/// One user's perturbed sample.
struct Sample {
    user: usize,
    step: usize,
    x0: StageVector,
    xt: StageVector,
    weights: Vec<f64>,
}

fn draw_sample(
    cfg: &TrainConfig,
    decay: &DecayCache,
    train: &InteractionMatrix,
    user: usize,
    epoch: usize,
) -> Result<Sample> {
    let n_steps = cfg.schedule.n_steps;
    let step = rng::stream(cfg.seed, Purpose::TimeDraw, user as u64, epoch as u64)
        .random_range(1..=n_steps);
    let t = cfg.schedule.time(step);
    let coeffs = decay.get(user)?;
    let x0 = stage_init(train.row(user), train.n_items(), cfg.k)?;
    let mut fwd = rng::stream(cfg.seed, Purpose::Forward, user as u64, epoch as u64);
    let xt = cfg.decay.forward(&x0, &coeffs, t, &mut fwd)?;
    let weights = loss_weights(cfg, &coeffs, t);
    Ok(Sample {
        user,
        step,
        x0,
        xt,
        weights,
    })
}

/// Per-row inputs of the objective: clean and perturbed states, loss
/// weights and grid steps.
#[derive(Clone, Copy, Debug)]
pub struct BatchInputs<'a> {
    pub x0: &'a [StageVector],
    pub xt: &'a [StageVector],
    pub weights: &'a [Vec<f64>],
    pub steps: &'a [usize],
}

/// Objective through softplus and the network, each row divided by
/// `denom`, with exact parameter gradients. Non-finite logits give a NaN
/// loss so the caller can report the batch.
pub fn batch_loss_and_grad(
    net: &ScoreNet,
    k: u32,
    inputs: BatchInputs<'_>,
    masks: Option<DropoutMasks>,
    denom: f64,
) -> Result<(f64, ParamSet)> {
    let x = scaled_state(inputs.xt, k, net.n_items())?;
    let (logits, cache) = net.forward(x.view(), inputs.steps, masks)?;
    let mut grad_logits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    if logits.iter().any(|z| !z.is_finite()) {
        return Ok((f64::NAN, net.params.zeros_like()));
    }
    for (r, row) in logits.rows().into_iter().enumerate() {
        let q: Vec<f64> = row.iter().map(|&z| softplus(z)).collect();
        let (l, dq) = weighted_loss(&q, &inputs.x0[r], &inputs.xt[r], &inputs.weights[r])?;
        loss += l / denom;
        for (i, (&z, g)) in row.iter().zip(dq).enumerate() {
            grad_logits[[r, i]] = g * sigmoid(z) / denom;
        }
    }
    let grads = net.backward(&cache, grad_logits.view())?;
    Ok((loss, grads))
}

/// Loss sum and gradient sum for one shard of samples.
fn shard_gradient(
    net: &ScoreNet,
    cfg: &TrainConfig,
    samples: &[Sample],
    epoch: usize,
    denom: f64,
) -> Result<(f64, ParamSet)> {
    let x0: Vec<StageVector> = samples.iter().map(|s| s.x0.clone()).collect();
    let xt: Vec<StageVector> = samples.iter().map(|s| s.xt.clone()).collect();
    let weights: Vec<Vec<f64>> = samples.iter().map(|s| s.weights.clone()).collect();
    let steps: Vec<usize> = samples.iter().map(|s| s.step).collect();
    let masks = (cfg.dropout > 0.0).then(|| {
        let mut rngs: Vec<_> = samples
            .iter()
            .map(|s| rng::stream(cfg.seed, Purpose::Dropout, s.user as u64, epoch as u64))
            .collect();
        DropoutMasks::sample(&net.shape, cfg.dropout, &mut rngs)
    });
    let inputs = BatchInputs {
        x0: &x0,
        xt: &xt,
        weights: &weights,
        steps: &steps,
    };
    batch_loss_and_grad(net, cfg.k, inputs, masks, denom)
}

/// One pass over all users with history.
pub fn train_epoch(
    state: &mut TrainState,
    train: &InteractionMatrix,
    decay: &DecayCache,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let epoch = state.epoch + 1;
    let mut users: Vec<usize> = (0..train.n_users())
        .filter(|&u| !train.row(u).is_empty())
        .collect();
    users.shuffle(&mut rng::stream(
        cfg.seed,
        Purpose::Shuffle,
        0,
        epoch as u64,
    ));

    let adam_cfg = cfg.adam();
    let mut total = 0.0;
    let mut batch_means = 0.0;
    let mut n_batches = 0usize;
    for (b, batch) in users.chunks(cfg.batch_size).enumerate() {
        let samples = batch
            .iter()
            .map(|&u| draw_sample(cfg, decay, train, u, epoch))
            .collect::<Result<Vec<_>>>()?;
        let denom = samples.len() as f64;
        let shards: Vec<&[Sample]> = samples.chunks(SHARD_ROWS).collect();
        let results: Vec<Result<(f64, ParamSet)>> = if cfg.parallel {
            shards
                .par_iter()
                .map(|s| shard_gradient(&state.net, cfg, s, epoch, denom))
                .collect()
        } else {
            shards
                .iter()
                .map(|s| shard_gradient(&state.net, cfg, s, epoch, denom))
                .collect()
        };
        let mut loss = 0.0;
        let mut grads = state.net.params.zeros_like();
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.add_assign(&g);
        }
        if !loss.is_finite() || !grads.is_finite() {
            let detail = samples
                .iter()
                .map(|s| format!("user {} step {} deficit {}", s.user, s.step, deficit_sum(s)))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: b,
                detail,
            });
        }
        adam_step(&mut state.net.params, &grads, &mut state.adam, &adam_cfg);
        total += loss * denom;
        batch_means += loss;
        n_batches += 1;
    }
    state.epoch = epoch;
    Ok(LossBreakdown {
        total,
        mean: if n_batches > 0 {
            batch_means / n_batches as f64
        } else {
            0.0
        },
        samples: users.len(),
    })
}

fn deficit_sum(s: &Sample) -> u64 {
    s.x0.counts
        .iter()
        .zip(&s.xt.counts)
        .map(|(a, b)| u64::from(a - b))
        .sum()
}

/// Outcome of observing one validation value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a metric to maximize.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if metric <= best => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_recall: f64,
    pub elapsed_secs: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} valid_recall@{}={:.6} elapsed={:.3}",
            self.epoch, self.mean_loss, SELECTION_CUTOFF, self.valid_recall, self.elapsed_secs
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

/// Validation Recall@20: burn up from each user's training history and
/// score against their held-out items.
pub fn validation_recall(
    net: &ScoreNet,
    train: &InteractionMatrix,
    valid: &InteractionMatrix,
    decay: &DecayCache,
    cfg: &TrainConfig,
) -> Result<f64> {
    let users: Vec<usize> = (0..valid.n_users())
        .filter(|&u| !valid.row(u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::Domain("validation set is empty".into()));
    }
    let lists = recommend_users(net, train, decay, &cfg.sampler(), &users, SELECTION_CUTOFF)?;
    let recalls: Vec<f64> = lists
        .iter()
        .map(|l| recall_at_k(&l.items, valid.row(l.user), SELECTION_CUTOFF))
        .collect();
    Ok(crate::evaluator::compensated_mean(&recalls))
}

/// Train with early stopping on validation Recall@20 and return the best
/// epoch's checkpoint. `on_epoch` sees every epoch record as it is produced.
pub fn fit(
    train: &InteractionMatrix,
    valid: &InteractionMatrix,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if valid.nnz() == 0 {
        return Err(Error::Domain("validation set is empty".into()));
    }
    let decay = DecayCache::new(train.clone(), cfg.gamma, DEFAULT_CACHE_BYTES)?;
    let mut state = TrainState::init(cfg, train.n_items())?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = state.checkpoint(cfg);
    let mut curve = Vec::new();
    let started = Instant::now();
    for _ in 0..cfg.max_epochs {
        let loss = train_epoch(&mut state, train, &decay, cfg)?;
        let recall = validation_recall(&state.net, train, valid, &decay, cfg)?;
        let record = EpochRecord {
            epoch: state.epoch,
            mean_loss: loss.mean,
            valid_recall: recall,
            elapsed_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        curve.push(record);
        match stopper.observe(state.epoch, recall) {
            StopDecision::Improved => best = state.checkpoint(cfg),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let best_epoch = stopper.best().map_or(0, |(e, _)| e);
    Ok(FitResult {
        best,
        best_epoch,
        curve,
    })
}

/// Train from scratch for exactly `epochs` epochs, without validation.
pub fn train_for_epochs(
    train: &InteractionMatrix,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainState> {
    cfg.validate()?;
    let decay = DecayCache::new(train.clone(), cfg.gamma, DEFAULT_CACHE_BYTES)?;
    let mut state = TrainState::init(cfg, train.n_items())?;
    for _ in 0..epochs {
        train_epoch(&mut state, train, &decay, cfg)?;
    }
    Ok(state)
}
