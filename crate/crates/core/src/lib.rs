//! Model-agnostic bias evaluation and post-hoc debiasing.
//!
//! The engine never touches model weights. A bridge exports embeddings,
//! token log-probabilities and completions into the JSONL schemas defined in
//! [`corpus_io`]; everything downstream is pure math over those dumps:
//!
//! * [`association`]: WEAT/SEAT association tests and Hellinger distance
//!   between class-conditioned next-token distributions.
//! * [`likelihood`]: StereoSet scores, CrowS-style pseudo-log-likelihood
//!   preference and the HONEST hurtful-completion rate.
//! * [`cda`]: counterfactual corpus rewriting.
//! * [`projection`]: iterative nullspace projection and distribution blending.
//! * [`selfdebias`]: self-debiasing rescaling of next-token distributions.
//! * [`report`]: self-describing bias reports and before/after comparison.

pub mod association;
pub mod cda;
pub mod corpus_io;
mod error;
pub mod likelihood;
pub mod pipeline;
pub mod prob;
pub mod projection;
pub mod report;
pub mod selfdebias;
pub mod stats;

pub use error::{Error, ErrorClass};

/// Version string embedded in every report.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
