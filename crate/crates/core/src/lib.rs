//! Explicit and implicit reward models under fixed hidden representations.
//!
//! The crate covers a small autoregressive softmax policy over a finite
//! vocabulary, five reward parameterizations behind one scoring interface,
//! Bradley–Terry training with only the head or unembedding trainable,
//! closed-form one-step reward dynamics, executable versions of the
//! verifier-without-generator construction and the unseen-token
//! generalization gap, and the synthetic tasks and metrics that drive them.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod rewards;
pub mod seqmodel;
pub mod tasks;
pub mod theory;
pub mod training;

pub use dataset::{PreferenceDataset, PreferenceExample};
pub use error::{LabError, Result};
pub use rewards::{GrmTemplate, LinearHead, Params, RewardFn, RewardScorer, ScorerKind};
pub use seqmodel::{PolicyState, RepresentationProvider, TokenId, TokenSeq, Vocabulary};
