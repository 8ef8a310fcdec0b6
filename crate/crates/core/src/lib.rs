//! Teacher-student meta-RL on a synthetic task ladder.
//!
//! A teacher policy proposes datasets of questions; each dataset is scored by
//! how much a short RL run on it improves a student on held-out hard tasks,
//! and the teacher is trained on that score with a leave-one-out policy
//! gradient. The numerical building blocks (policies, optimizer, RLOO,
//! metrics) are generic over [`Scalar`]; the environment and the two loops
//! work in `f64`.

pub mod error;
pub mod inner;
pub mod metrics;
pub mod optim;
pub mod outer;
pub mod policy;
pub mod rloo;
pub mod scalar;
pub mod seed;
pub mod tasklab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Policy = policy::CategoricalPolicy<f64>;
pub type Policy32 = policy::CategoricalPolicy<f32>;
pub type Grad = policy::Gradient<f64>;
pub type Grad32 = policy::Gradient<f32>;
pub type Adam = optim::AdamW<f64>;
pub type Adam32 = optim::AdamW<f32>;
pub type Group = rloo::RolloutGroup<f64>;
pub type Group32 = rloo::RolloutGroup<f32>;
pub type Embeddings = metrics::EmbeddingMatrix<f64>;
pub type Embeddings32 = metrics::EmbeddingMatrix<f32>;
pub type Series = metrics::MetricSeries<f64>;
