//! Analysis and enhancement toolkit for cascade spoken dialogue state
//! tracking: scoring tracker output against gold states, normalizing and
//! entity-correcting ASR transcripts, simulating character-level ASR errors,
//! and classifying residual value errors.

pub mod corpus;
pub mod dst_metrics;
pub mod entity_corrector;
pub mod error;
pub mod error_simulator;
pub mod error_taxonomy;
pub mod normalizer;
pub mod report;
pub mod state_codec;
pub mod text;
pub mod text_metrics;

pub use error::{Error, Result};
