//! Subcommand bodies: configuration, data loading and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, popularity_groups, MetricsReport, DEFAULT_CUTOFFS};
use crate::interactions::{
    load_interactions, split_validation, DecayCache, InteractionMatrix, DEFAULT_CACHE_BYTES,
};
use crate::network::Checkpoint;
use crate::recommender::{read_recommendations, recommend_users, write_recommendations};
use crate::rng::{self, Purpose};
use crate::trainer::{fit, TrainConfig};
use crate::verification::{
    bridge_recovery_suite, gradient_suite, posterior_sweep, sampler_ratio, spectral_suite, RatioFn,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.tsv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_items: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub workers: usize,
    pub cutoff: usize,
    pub cutoffs: Vec<usize>,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            workers: 1,
            cutoff: 50,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the TOML file when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.cutoff == 0 || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be >= 1".into()));
        }
        Ok(())
    }

    /// The training config with the execution mode taken from `workers`.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            parallel: self.workers > 1,
            ..self.train.clone()
        }
    }

    fn dump(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    fn require(path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::Config(format!("data.{name} is not set")))
    }
}

/// Re-dimension a matrix, padding missing users with empty rows.
fn resize(m: InteractionMatrix, n_users: usize, n_items: usize) -> Result<InteractionMatrix> {
    let mut rows = m.rows().to_vec();
    rows.resize(n_users, Vec::new());
    InteractionMatrix::with_dims(n_users, n_items, rows)
}

/// Load every file that is present and bring them to shared dimensions.
/// Returns (train, valid, test).
pub fn load_data(
    data: &DataConfig,
    train: &Path,
) -> Result<(
    InteractionMatrix,
    Option<InteractionMatrix>,
    Option<InteractionMatrix>,
)> {
    let load = |p: &Path| load_interactions(p, data.n_users, data.n_items);
    let tr = load(train)?;
    let va = data.valid.as_deref().map(load).transpose()?;
    let te = data.test.as_deref().map(load).transpose()?;
    let all = [Some(&tr), va.as_ref(), te.as_ref()];
    let nu = data
        .n_users
        .unwrap_or_else(|| all.iter().flatten().map(|m| m.n_users()).max().unwrap_or(0));
    let ni = data
        .n_items
        .unwrap_or_else(|| all.iter().flatten().map(|m| m.n_items()).max().unwrap_or(0));
    Ok((
        resize(tr, nu, ni)?,
        va.map(|m| resize(m, nu, ni)).transpose()?,
        te.map(|m| resize(m, nu, ni)).transpose()?,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_valid_recall: f64,
    pub epochs_run: usize,
    pub config_hash: String,
}

/// Fit on the training file and write the best checkpoint, the training
/// log, the validation curve and the best-epoch record.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_path = RunConfig::require(&cfg.data.train, "train")?;
    let tcfg = cfg.effective_train();
    let (train, valid, _) = load_data(&cfg.data, &train_path)?;
    let (fit_train, valid) = match valid {
        Some(v) => (train, v),
        None => split_validation(&train, tcfg.validation_fraction, tcfg.seed)?,
    };
    if valid.nnz() == 0 {
        return Err(Error::Config(
            "validation set is empty; pass --valid or raise validation_fraction".into(),
        ));
    }
    cfg.dump()?;
    info!(
        "training on {} users, {} items, {} interactions ({} held for validation)",
        fit_train.n_users(),
        fit_train.n_items(),
        fit_train.nnz(),
        valid.nnz()
    );
    let mut log_lines = String::new();
    let result = fit(&fit_train, &valid, &tcfg, |rec| {
        let line = rec.log_line();
        info!("{line}");
        log_lines.push_str(&line);
        log_lines.push('\n');
    })?;

    let out = &cfg.output_dir;
    let write = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("train_log.txt", log_lines)?;
    let mut curve = String::from("epoch\tmean_loss\tvalid_recall@20\n");
    for r in &result.curve {
        curve.push_str(&format!(
            "{}\t{:.9}\t{:.9}\n",
            r.epoch, r.mean_loss, r.valid_recall
        ));
    }
    write("validation_curve.tsv", curve)?;
    let best_recall = result
        .curve
        .iter()
        .find(|r| r.epoch == result.best_epoch)
        .map_or(0.0, |r| r.valid_recall);
    let hash = tcfg.fingerprint();
    write(
        "best_epoch.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "best_epoch": result.best_epoch,
            "valid_recall@20": best_recall,
            "epochs_run": result.curve.len(),
            "config_hash": hash,
        }))
        .expect("json")
            + "\n",
    )?;
    let ckpt = out.join(CHECKPOINT_FILE);
    result.best.save(&ckpt)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        best_epoch: result.best_epoch,
        best_valid_recall: best_recall,
        epochs_run: result.curve.len(),
        config_hash: hash,
    })
}

/// Burn up every user of the training file and write ranked lists.
pub fn cmd_recommend(cfg: &RunConfig, checkpoint: &Path, cutoff: usize) -> Result<PathBuf> {
    cfg.validate()?;
    if cutoff == 0 {
        return Err(Error::Config("cutoff must be >= 1".into()));
    }
    let train_path = RunConfig::require(&cfg.data.train, "train")?;
    let tcfg = cfg.effective_train();
    let ckpt = Checkpoint::load_checked(checkpoint, &tcfg.fingerprint())?;
    let (train, _, _) = load_data(&cfg.data, &train_path)?;
    if ckpt.net.n_items() != train.n_items() {
        return Err(Error::DimensionMismatch {
            expected: ckpt.net.n_items(),
            actual: train.n_items(),
        });
    }
    let users: Vec<usize> = (0..train.n_users()).collect();
    for &u in &users {
        if train.row(u).len() == train.n_items() {
            warn!("user {u} has interacted with every item; empty recommendation list");
        }
    }
    let decay = DecayCache::new(train.clone(), tcfg.gamma, DEFAULT_CACHE_BYTES)?;
    let lists = recommend_users(&ckpt.net, &train, &decay, &tcfg.sampler(), &users, cutoff)?;
    cfg.dump()?;
    let path = cfg.output_dir.join(RECOMMENDATIONS_FILE);
    write_recommendations(&path, &lists)?;
    Ok(path)
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Score a recommendation file against a test file, with popularity groups
/// taken from the training file.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    recs: &Path,
    test: &Path,
    train: &Path,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let data = DataConfig {
        test: Some(test.to_path_buf()),
        ..cfg.data.clone()
    };
    let (train, _, test) = load_data(&data, train)?;
    let test = test.expect("test path supplied");
    let lists = read_recommendations(recs)?;
    let groups = popularity_groups(&train);
    let report = evaluate(
        &lists,
        &test,
        Some(&train),
        Some(&groups),
        &cfg.cutoffs,
        &cfg.effective_train().fingerprint(),
        &git_revision(),
    )?;
    if report.n_users_skipped > 0 {
        warn!(
            "{} users skipped (no list or no test items)",
            report.n_users_skipped
        );
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join(METRICS_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

/// Run the oracle suites with an injectable reverse ratio.
pub fn run_verification(ratio: &RatioFn) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    let sweep = posterior_sweep(6, ratio)?;
    suites.push(SuiteResult {
        name: "reverse_posterior".into(),
        passed: sweep.max_abs_diff <= 1e-12,
        detail: format!(
            "{} cells, max abs diff {:.3e}",
            sweep.cells, sweep.max_abs_diff
        ),
    });
    let misses = bridge_recovery_suite(100, 11)?;
    suites.push(SuiteResult {
        name: "bridge_recovery".into(),
        passed: misses == 0,
        detail: format!("{misses} of 100 instances not recovered"),
    });
    let g = gradient_suite(20, 12)?;
    suites.push(SuiteResult {
        name: "gradients".into(),
        passed: g.loss_max_rel <= 1e-6 && g.composite_max_rel <= 1e-4,
        detail: format!(
            "loss {:.3e}, composite {:.3e}",
            g.loss_max_rel, g.composite_max_rel
        ),
    });
    let s = spectral_suite(20, 10, 13, 1.0)?;
    suites.push(SuiteResult {
        name: "decay_ordering".into(),
        passed: s.violations == 0 && s.item_violations == 0 && s.coeff_max_err <= 1e-12,
        detail: format!(
            "{} spectral pairs, {} violations, {} item violations, coefficient error {:.1e}, instantaneous-rate misses {}",
            s.pairs_checked, s.violations, s.item_violations, s.coeff_max_err, s.initial_rate_violations
        ),
    });
    Ok(VerifyReport { suites })
}

pub fn cmd_verify() -> Result<VerifyReport> {
    run_verification(&sampler_ratio)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    pub holdout: f64,
    pub seed: u64,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 100,
            n_blocks: 2,
            holdout: 0.2,
            seed: 1,
            p_in: 0.6,
            p_out: 0.02,
        }
    }
}

/// Block-structured interactions. Users and items are split into contiguous
/// blocks; inside a block item `j` of `m` carries a propensity weight spaced
/// evenly over `[0.5, 1.5]`, so the in-block probability is `p_in · w_j`
/// (mean `p_in`). Cross-block pairs interact with probability `p_out`.
pub fn synthesize(cfg: &SynthConfig) -> Result<(InteractionMatrix, InteractionMatrix)> {
    if cfg.n_users == 0
        || cfg.n_items == 0
        || cfg.n_blocks == 0
        || cfg.n_blocks > cfg.n_items.min(cfg.n_users)
    {
        return Err(Error::Config(
            "need 1 <= blocks <= min(users, items)".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(format!(
            "holdout must be in [0, 1), got {}",
            cfg.holdout
        )));
    }
    if !(0.0..=1.0).contains(&(cfg.p_in * 1.5)) || !(0.0..=1.0).contains(&cfg.p_out) {
        return Err(Error::Config(
            "interaction probabilities out of range".into(),
        ));
    }
    let item_block = |i: usize| i * cfg.n_blocks / cfg.n_items;
    let mut block_items: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_blocks];
    for i in 0..cfg.n_items {
        block_items[item_block(i)].push(i);
    }
    let mut weight = vec![1.0; cfg.n_items];
    for items in &block_items {
        let m = items.len();
        for (j, &i) in items.iter().enumerate() {
            weight[i] = if m > 1 {
                0.5 + j as f64 / (m - 1) as f64
            } else {
                1.0
            };
        }
    }
    let mut train = Vec::with_capacity(cfg.n_users);
    let mut test = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut rng = rng::stream(cfg.seed, Purpose::Synth, u as u64, 0);
        let b = u * cfg.n_blocks / cfg.n_users;
        let mut items: Vec<u32> = (0..cfg.n_items)
            .filter(|&i| {
                let p = if item_block(i) == b {
                    cfg.p_in * weight[i]
                } else {
                    cfg.p_out
                };
                rng.random_bool(p)
            })
            .map(|i| i as u32)
            .collect();
        items.shuffle(&mut rng);
        let mut n_test = (cfg.holdout * items.len() as f64).round() as usize;
        if n_test >= items.len() {
            n_test = items.len().saturating_sub(1);
        }
        let held = items.split_off(items.len() - n_test);
        train.push(items);
        test.push(held);
    }
    Ok((
        InteractionMatrix::with_dims(cfg.n_users, cfg.n_items, train)?,
        InteractionMatrix::with_dims_allow_empty(cfg.n_users, cfg.n_items, test),
    ))
}

/// Write `train.txt` and `test.txt` into `dir`.
pub fn cmd_synth(cfg: &SynthConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = synthesize(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tp, sp) = (dir.join("train.txt"), dir.join("test.txt"));
    train.write(&tp)?;
    test.write(&sp)?;
    info!(
        "wrote {} train and {} test interactions for {} users, {} items",
        train.nnz(),
        test.nnz(),
        cfg.n_users,
        cfg.n_items
    );
    Ok((tp, sp))
}
