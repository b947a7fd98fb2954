//! Permutation tests for whether LLM-generated multiple-choice survey
//! answers follow the same distribution as human answers, and the
//! subgroup- and question-level misalignment scores built on them.

pub mod collector;
pub mod error;
pub mod metrics;
pub mod perm;
pub mod pipeline;
pub mod run;
pub mod sim;
pub mod stats;
pub mod survey;

pub use error::{Error, ErrorClass, Result};
