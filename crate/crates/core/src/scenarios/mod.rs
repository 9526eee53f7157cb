//! Deterministic model generators: the surveillance grid world, the
//! recommendation system and random instances for tests and benchmarks.

pub mod grid;
pub mod random;
pub mod recsys;

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub use grid::{gen_grid, GridSpec};
pub use recsys::{gen_recsys, RecSysSpec};
