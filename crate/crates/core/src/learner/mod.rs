//! Recurrent actor-critic agents sharing one coordinator network.

pub mod loss;
pub mod model;
pub mod network;
pub mod optim;
pub mod train;

pub use loss::{
    backward, evaluate, policy_entropy, policy_loss, td_advantage, td_target, total_loss, value_loss, LossBreakdown,
    LossWeights, ObservationRecord,
};
pub use model::{AgentPolicy, TrainedModel, MODEL_FORMAT};
pub use network::{forward, policy_value_forward, rnn_forward, Carry, Layout, Params};
pub use optim::{clipped_delta, grad_norm, Adam};
pub use train::{continue_training, smoothed, train, EpisodeLog, TrainConfig};

use thiserror::Error;

use crate::risk::RiskError;
use crate::session::RateError;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model field {field}: {message}")]
    Model { field: String, message: String },
    #[error("episode {episode}, EVSE {evse_id}: {source}")]
    Episode {
        episode: u64,
        evse_id: String,
        source: Box<LearnerError>,
    },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Rate(#[from] RateError),
}
