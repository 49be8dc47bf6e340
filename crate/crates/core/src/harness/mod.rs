//! Equivalence checking and random test material.

mod diff;
mod gen;

use thiserror::Error;

use crate::interpreter::RunError;
use crate::rewriter::RewriteError;

pub use diff::{
    diff_graphs, diff_split, random_inputs, run_split, DiffReport, OutputDiff, DEFAULT_TOLERANCE, DEFAULT_TRIALS,
};
pub use gen::{gen_random_graph, GenParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("signature mismatch: {0}")]
    Signature(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}
