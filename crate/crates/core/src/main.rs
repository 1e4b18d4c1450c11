use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use stagecf::kernel::{RateMode, SamplerMode};
use stagecf::pipeline::{self, RunConfig, SynthConfig};
use stagecf::trainer::Objective;
use stagecf::Error;

#[derive(Parser)]
#[command(name = "stagecf", version, about = "Stage-wise diffusion recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with early stopping and write the best checkpoint.
    Train(Common),
    /// Write top-K lists for every user.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a recommendation file against held-out interactions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recommendations: PathBuf,
    },
    /// Run the oracle suites.
    Verify,
    /// Generate block-structured synthetic train/test files.
    Synth {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "data")]
        output_dir: PathBuf,
    },
}

/// Config file plus flag overrides. Flags win over the file, the file over
/// built-in defaults.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    reverse_horizon: Option<f64>,
    #[arg(long, value_parser = parse_sampler)]
    sampler: Option<SamplerMode>,
    #[arg(long, value_parser = parse_rate_mode)]
    rate_mode: Option<RateMode>,
    #[arg(long)]
    cutoff: Option<usize>,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "instantaneous" => Ok(Objective::Instantaneous),
        "finite_time" => Ok(Objective::FiniteTime),
        _ => Err(format!("unknown objective {s:?}")),
    }
}

fn parse_sampler(s: &str) -> Result<SamplerMode, String> {
    match s {
        "bridge" => Ok(SamplerMode::Bridge),
        "poisson" => Ok(SamplerMode::Poisson),
        _ => Err(format!("unknown sampler {s:?}")),
    }
}

fn parse_rate_mode(s: &str) -> Result<RateMode, String> {
    match s {
        "personalized" => Ok(RateMode::Personalized),
        "global" => Ok(RateMode::Global),
        _ => Err(format!("unknown rate mode {s:?}")),
    }
}

impl Common {
    fn resolve(&self) -> stagecf::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        macro_rules! set {
            ($flag:expr, $dst:expr) => {
                if let Some(v) = $flag.clone() {
                    $dst = v;
                }
            };
        }
        if self.train.is_some() {
            cfg.data.train = self.train.clone();
        }
        if self.valid.is_some() {
            cfg.data.valid = self.valid.clone();
        }
        if self.test.is_some() {
            cfg.data.test = self.test.clone();
        }
        set!(self.output_dir, cfg.output_dir);
        set!(self.seed, cfg.train.seed);
        set!(self.workers, cfg.workers);
        set!(self.k, cfg.train.k);
        set!(self.gamma, cfg.train.gamma);
        set!(self.lr, cfg.train.lr);
        set!(self.dropout, cfg.train.dropout);
        set!(self.batch_size, cfg.train.batch_size);
        set!(self.patience, cfg.train.patience);
        set!(self.max_epochs, cfg.train.max_epochs);
        set!(self.hidden, cfg.train.hidden);
        set!(self.objective, cfg.train.objective);
        set!(self.horizon, cfg.train.schedule.horizon);
        set!(self.steps, cfg.train.schedule.n_steps);
        set!(self.reverse_horizon, cfg.train.schedule.reverse_horizon);
        set!(self.sampler, cfg.train.schedule.mode);
        set!(self.rate_mode, cfg.train.schedule.rate_mode);
        set!(self.cutoff, cfg.cutoff);
        cfg.validate()?;
        if cfg.workers > 1 {
            // A second initialization only fails if the pool already exists.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build_global();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> stagecf::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = pipeline::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Recommend { common, checkpoint } => {
            let cfg = common.resolve()?;
            let path = pipeline::cmd_recommend(&cfg, &checkpoint, cfg.cutoff)?;
            println!("{}", path.display());
        }
        Command::Evaluate {
            common,
            recommendations,
        } => {
            let cfg = common.resolve()?;
            let test = cfg
                .data
                .test
                .clone()
                .ok_or_else(|| Error::Config("--test is required".into()))?;
            let train = cfg
                .data
                .train
                .clone()
                .ok_or_else(|| Error::Config("--train is required".into()))?;
            let report = pipeline::cmd_evaluate(&cfg, &recommendations, &test, &train)?;
            print!("{}", report.to_json());
        }
        Command::Verify => {
            let report = pipeline::cmd_verify()?;
            for s in &report.suites {
                println!(
                    "{} {}: {}",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.detail
                );
            }
            if !report.all_passed() {
                return Err(Error::Domain("verification failed".into()));
            }
        }
        Command::Synth {
            users,
            items,
            blocks,
            holdout,
            seed,
            output_dir,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                n_blocks: blocks,
                holdout,
                seed,
                ..SynthConfig::default()
            };
            let (train, test) = pipeline::cmd_synth(&cfg, &output_dir)?;
            println!("{}\n{}", train.display(), test.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::OutOfBounds { .. }
        | Error::Empty
        | Error::Config(_)
        | Error::HashMismatch { .. }
        | Error::Checkpoint(_)
        | Error::DimensionMismatch { .. }
        | Error::ShortList { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
