//! Multilingual postediting prompt pipeline.
//!
//! Selects typologically close auxiliary languages, renders postediting
//! prompts that carry teacher translations in those languages, drives
//! teacher and student generation endpoints, scores outputs with chrF and
//! BLEU, and exports finetuning and distillation datasets.

pub mod attnviz;
pub mod corpus;
pub mod digest;
pub mod distill;
pub mod error;
pub mod langdist;
pub mod language;
pub mod llmclient;
pub mod metrics;
pub mod promptgen;
pub mod rng;

pub use error::{Error, Result};
pub use language::{LanguageRegistry, LanguageSpec, ResourceLevel};
