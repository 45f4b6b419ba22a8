//! Cascaded, evidence-grounded question answering over clinical note excerpts.
//!
//! The crate is split along the pipeline's seams:
//!
//! - [`corpus`]: case records, gold annotations, prompt assets and submission files.
//! - [`textproc`]: word counting, answer sentence segmentation and the two truncation rules.
//! - [`llm`]: the chat backend trait plus HTTP, mock, replay and recording backends.
//! - [`pipeline`]: the four stages (interpret, evidence, generate, align) and the orchestrator.
//! - [`metrics`]: evidence/alignment P/R/F1, BLEU, ROUGE-Lsum, SARI and overall-score aggregation.

pub mod corpus;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod textproc;
