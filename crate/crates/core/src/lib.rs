//! Chunked, replayable LLM extraction over research corpora, with the
//! scoring tools used to judge the results.

pub mod chunker;
pub mod eval;
pub mod extraction;
pub mod ingest;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod report;
pub mod tasks;
