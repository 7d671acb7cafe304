//! Explanation-structure prediction for perturbation ("what if") questions
//! over procedural text.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod baselines;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explanation;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod predict;
pub mod probe;
pub mod quartet;
pub mod report;
pub mod tagging;
pub mod train;

pub use error::ModelError;
