//! Two-stage tabular data synthesis: few-shot LLM generation from clustered
//! exemplars, then attribution-guided importance resampling that pulls the
//! synthetic table toward the original distribution.

pub mod align;
pub mod attribution;
pub mod data;
pub mod error;
pub mod eval;
pub mod exemplar;
pub mod fixtures;
pub mod llm;
pub mod matrix;
pub mod pipeline;
pub mod predictor;
pub mod seed;

pub use error::{Error, Result};
