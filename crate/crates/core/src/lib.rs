//! Self-synthesized task data: generate inputs from a handful of demonstrations,
//! annotate them in context, filter the pairs, and evaluate the result.
//!
//! The crate is organised bottom-up:
//!
//! - [`task`]: task specifications, examples, datasets and the NIv2 loader.
//! - [`prompt`]: the input-generation and output-annotation templates.
//! - [`backend`]: the generation interface (HTTP chat-completion or offline mock)
//!   and the finetuning export.
//! - [`filters`]: noise-term and length-band quality gates.
//! - [`synthesis`]: the staged generate / filter / annotate / filter pipeline.
//! - [`metrics`]: Exact Match, ROUGE-L, label distributions.
//! - [`tuner`]: random search maximizing the worst per-task improvement.
//! - [`analysis`]: label randomization, filter ablation, Self-ICL packing,
//!   prompt sensitivity and distribution rows.
//! - [`report`]: score, ablation, sensitivity and distribution tables.
//! - [`manifest`]: run manifests and content digests.

pub mod analysis;
pub mod backend;
pub mod error;
pub mod filters;
pub mod manifest;
pub mod metrics;
pub mod prompt;
pub mod report;
pub mod synthesis;
pub mod task;
pub mod tuner;

pub use error::{Error, Result};
