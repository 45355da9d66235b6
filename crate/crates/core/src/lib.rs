//! Desk-scale simulator for a two-agent Metropolis–Hastings captioning game
//! over synthetic heterogeneous perception, with the evaluation battery used
//! to measure what the emergent token sequences encode.

pub mod agent;
pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod game;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod synthworld;
pub mod training;

pub use agent::{AgentConfig, AgentParams, DecodeMode, GaussParams, Modality, Pooling, TokenSequence};
pub use error::{Error, Result};
pub use game::{AcceptanceRule, Decision, DirectionLog, EpochLog, GameConfig, ItmMode, Speaker};
pub use synthworld::{Dataset, EncoderPairSpec, SyntheticEncoder, VisualFeature, WorldConfig, WorldItem};
pub use training::{OptimizerKind, TrainHyper, UpdateTrace};
