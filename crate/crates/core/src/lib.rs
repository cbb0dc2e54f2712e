//! Fine-grained entity typing over a type hierarchy.
//!
//! * [`hierarchy`]: the type DAG, ancestor closure and link derivation.
//! * [`corpus`]: word vectors, mentions, distant labels and batching.
//! * [`model`]: the mention encoder, membership scores and checkpoints.
//! * [`training`]: losses, gradients, Adam and the training loop.
//! * [`eval`]: average precision and MAP.
//! * [`synthetic`]: a small generated task for tests.

pub mod corpus;
pub mod eval;
pub mod hierarchy;
pub mod model;
pub mod synthetic;
pub mod training;

pub use corpus::{EmbeddingTable, LabeledExample, Mention, PreparedExample};
pub use eval::{average_precision, EvalReport};
pub use hierarchy::{LinkKind, NamedLink, TypeHierarchy, TypeId, TypeSet};
pub use model::{EncoderMode, Model, ModelConfig, Params, ScoreKind};
pub use training::{train, TrainConfig, TrainError, TrainOutcome};
