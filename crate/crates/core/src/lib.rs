//! Learned caches for DNN inference serving.
//!
//! The crate trains small predictor/selector networks on the hidden layers
//! of a base classifier, composes a cache set under accuracy, memory and
//! lookup-concurrency constraints, simulates serving with online cache
//! retraining, and plans multi-model query DAGs under latency SLOs.

pub mod base;
pub mod cache;
pub mod compose;
pub mod config;
mod error;
pub mod nn;
pub mod planner;
pub mod sim;
pub mod textfmt;

pub use error::{Error, Result};
