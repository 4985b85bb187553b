//! Federated content filtering: a federated text categorizer, per-category
//! user personas, and a personalized feed ranker with a like/dislike
//! feedback loop.

pub mod api;
pub mod config;
pub mod federated;
pub mod feedback;
pub mod filtering;
pub mod model;
pub mod persona;
pub mod pipeline;
pub mod storage;
pub mod synth;
pub mod text;
pub mod types;

pub use config::Config;
pub use federated::{ClientState, ClientUpdate, Partition, RoundReport, TrainConfig};
pub use feedback::FeedbackPolicy;
pub use filtering::{FeedItem, FilterSettings, FriendRank, RankWeights};
pub use model::{CategorySet, Example, FeatureVector, ModelParams};
pub use persona::{PersonaProfile, PersonaWeights, TextResources};
pub use storage::{Snapshot, Store};
pub use types::{EngagementCounts, FeedbackEvent, InteractionEvent, InteractionKind, Post, UserRecord, Verdict};

use thiserror::Error;

/// Errors surfaced by store-level operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Storage(#[from] storage::StorageError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Federated(#[from] federated::FederatedError),
    #[error(transparent)]
    Persona(#[from] persona::PersonaError),
    #[error(transparent)]
    Feedback(#[from] feedback::FeedbackError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
}

impl Error {
    /// Whether the error means a referenced user or post does not exist.
    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::Storage(storage::StorageError::NotFound(_)))
    }
}
