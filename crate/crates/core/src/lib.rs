//! Dialogue-to-memory pipeline engine.
//!
//! Raw multi-turn dialogue goes through three stages — one-pass fact
//! extraction, embedding-based completion of uncovered turns, and
//! self-questioning verification against the original dialogue — producing
//! a verified per-owner memory store that backs retrieval QA. An
//! evaluation harness scores stores against gold annotations, and a
//! token-drop compressor stresses the pipeline with degraded input.
//!
//! Every model interaction flows through [`gateway::Gateway`], backed
//! either by a live OpenAI-compatible HTTP backend or by deterministic
//! fixtures, so the whole pipeline runs and tests offline.

pub mod api;
pub mod completion;
pub mod compressor;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod store;
pub mod verification;

pub use error::{Error, Result};
