//! Stage-wise burn-down/burn-up diffusion for implicit-feedback
//! collaborative filtering.
//!
//! Interactions are lifted to integer interest counts in `[0, K]`. Training
//! burns them down with personalized binomial thinning and fits a score
//! network to the remaining deficit; recommendation burns them back up
//! with binomial-bridge draws and ranks items by their final counts.

pub mod error;
pub mod evaluator;
pub mod interactions;
pub mod kernel;
pub mod network;
pub mod pipeline;
pub mod recommender;
pub mod rng;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
pub use interactions::{load_interactions, DecayCache, InteractionMatrix};
pub use kernel::{DiffusionSchedule, RateMode, SamplerMode, StageVector};
pub use network::{Checkpoint, ScoreNet};
pub use pipeline::RunConfig;
pub use recommender::RecommendationList;
pub use trainer::TrainConfig;
