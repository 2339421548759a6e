//! Medical dialogue generation via explicit reasoning chains.
//!
//! The library decomposes each physician response into a short chain of
//! sub-questions, solves the chain step by step against a pluggable text
//! generation backend, filters the resulting reasoning traces with
//! embedding similarity (two bootstrap strategies), drives an external
//! fine-tuning loop on the filtered data, and scores generated corpora
//! with BLEU / ROUGE / DISTINCT.

pub mod backend;
pub mod bootstrap;
pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod similarity;
