//! Soft Actor-Critic with independently sized actor and critic networks,
//! swappable twin-critic aggregation, critic regularizers, and the
//! diagnostics used to study small actors: critic overfitting ratio,
//! dormant units, effective rank, validation Q values and policy entropy.
//!
//! The crate is self-contained: dense networks with hand-written gradients
//! ([`nn`]), the agent ([`agent`]), built-in control tasks ([`envs`]), replay
//! storage ([`storage`]), measurements ([`diagnostics`]) and experiment
//! orchestration ([`harness`]).

pub mod agent;
pub mod codec;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod seeding;
pub mod storage;

pub use error::{Error, Result};
pub use linalg::Matrix;
