//! Concept-based argumentation models: mine concepts from feature descriptions,
//! fit them field-wise, and explain predictions as a dialogue.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod explainer;
pub mod learner;
pub mod miner;
pub mod numeric;
pub mod pipeline;
pub mod preprocess;
pub mod qaf;
pub mod reasoner;
pub mod service;

pub use error::{CamError, Result};
pub use numeric::logistic;
pub use pipeline::{build, CamModel};
pub use qaf::{ArgumentNode, Edge, NodeKind, QafModel};
