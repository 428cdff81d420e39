//! Two-stage contrastive speech/style-caption training over precomputed
//! backbone features, with retrieval, zero-shot and correlation evaluation
//! and a rule-based caption verification checklist.

pub mod cli;
pub mod curriculum;
pub mod eval;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod store;
pub mod sweep;
pub mod verify;
