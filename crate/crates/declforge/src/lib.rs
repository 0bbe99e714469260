//! Multi-task cooperative reinforcement learning with a transferable decision layer.
//!
//! Agents are recurrent Q-networks split into two halves. A per-task perception
//! layer reads an observation, the previous action, and the agent id, and folds
//! them into a GRU hidden state. Candidate actions are then *prepositioned*: each
//! available action is appended to the hidden state and a shared decision layer
//! scores the pair with a single scalar. Because the decision layer only ever sees
//! `(features, candidate)` rows of a fixed width, one instance of it can be trained
//! jointly across tasks with different observation and action spaces, frozen, and
//! reused on a new task.
//!
//! Module map:
//!
//! - [`rng`]: small deterministic generator used everywhere randomness is needed
//! - [`nnkit`]: dense layers, a GRU cell, reverse-mode gradients, RMSProp, and a
//!   finite-difference gradient auditor
//! - [`envsuite`]: desk-scale cooperative grid tasks (`teamreach`, `preychase`)
//! - [`apnnet`]: the two-half agent network and its checkpoint format
//! - [`mixers`]: additive and monotonic state-conditioned joint-value mixing
//! - [`replay`]: episode-granularity FIFO buffer and padded batch assembly
//! - [`trainer`]: TD(0) training loops, failure-rate task weighting, evaluation
//! - [`config`]: run configuration files
//! - [`report`]: metrics summaries and SVG learning curves

pub mod apnnet;
pub mod config;
pub mod envsuite;
pub mod mixers;
pub mod nnkit;
pub mod replay;
pub mod report;
pub mod rng;
pub mod trainer;
