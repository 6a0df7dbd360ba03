//! Temporal compositional modular network for localizing moments in video
//! from natural-language queries with temporal structure.
//!
//! A query's constituency tree is encoded by a child-sum Tree-LSTM; tree
//! attention splits it into main-event, context-event and temporal-signal
//! phrases, which score every pair of candidate video segments. Four
//! streams, one per (main, context) modality pair, are trained separately
//! and fused late.

pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod language;
pub mod matching;
pub mod model;
pub mod tensor;
pub mod training;
pub mod treebank;
pub mod video;

pub use error::{Error, Result};
