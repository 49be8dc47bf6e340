//! Graph transformations for the four conversion scenarios.
//!
//! Every function here takes a graph by reference and returns a new one; the
//! input is never modified.

mod convert;
mod convtranspose;
mod custom;
mod fusion;
mod rules;
mod split;

use std::collections::HashSet;

use thiserror::Error;

use crate::interpreter::RunError;
use crate::ir::{infer_shapes, Graph, GraphParts, IrError};

pub use convert::{convert, AppliedRule, ConversionResult, ConvertOptions, ConvertedModel};
pub use convtranspose::{rewrite_convtranspose, ConvTransposeMode};
pub use custom::{emit_custom_manifest, CustomOpManifest, IoSignature, DEFAULT_SOURCE_FRAMEWORK};
pub use fusion::{defuse, fuse_outputs, FusedGraph, FusionEntry};
pub use rules::{
    CastNoopDrop, ConvTransposeExact, ConvTransposeStructural, DropoutDrop, RewriteRule, RuleRegistry, SubConstToAdd,
    SubToAddNeg,
};
pub use split::{split_tail, SplitArtifacts};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewriteError {
    #[error("rule '{rule}' does not apply to node '{node}': {reason}")]
    Rejected { rule: String, node: String, reason: String },
    #[error("no node '{0}' in graph")]
    NodeNotFound(String),
    #[error("precondition failed at node '{node}': {reason}")]
    Precondition { node: String, reason: String },
    #[error("could not find a fresh name for '{0}'")]
    NamesExhausted(String),
    #[error("{0}")]
    Split(String),
    #[error("fusion: {0}")]
    Fusion(String),
    #[error("rewrite produced an invalid graph: {0}")]
    Invalid(#[from] IrError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// A rewritten graph plus what it took to get there.
#[derive(Debug, Clone, PartialEq)]
pub struct Rewritten {
    pub graph: Graph,
    pub rule_id: String,
    pub node_id: String,
    pub retraining_required: bool,
}

/// Deterministic generator of unused names: `base__rw0`, `base__rw1`, ...
#[derive(Debug, Clone)]
pub struct NameGen {
    used: HashSet<String>,
}

const MAX_SUFFIX: usize = 1_000_000;

impl NameGen {
    pub fn new(g: &Graph) -> Self {
        NameGen { used: g.used_names() }
    }

    pub fn from_parts(parts: &GraphParts) -> Self {
        let mut used: HashSet<String> = HashSet::new();
        used.extend(parts.inputs.iter().map(|s| s.name.clone()));
        used.extend(parts.initializers.iter().map(|i| i.name().to_string()));
        for n in &parts.nodes {
            used.insert(n.id.clone());
            used.extend(n.outputs.iter().cloned());
        }
        NameGen { used }
    }

    pub fn fresh(&mut self, base: &str) -> Result<String, RewriteError> {
        for k in 0..MAX_SUFFIX {
            let candidate = format!("{base}__rw{k}");
            if self.used.insert(candidate.clone()) {
                return Ok(candidate);
            }
        }
        Err(RewriteError::NamesExhausted(base.to_string()))
    }
}

/// Apply `rule` at `node_id`.
pub fn apply_rule(g: &Graph, node_id: &str, rule: &dyn RewriteRule) -> Result<Rewritten, RewriteError> {
    let node = g
        .node(node_id)
        .ok_or_else(|| RewriteError::NodeNotFound(node_id.to_string()))?;
    rule.matches(g, node).map_err(|reason| RewriteError::Rejected {
        rule: rule.id().to_string(),
        node: node_id.to_string(),
        reason,
    })?;
    let mut names = NameGen::new(g);
    let parts = rule.rewrite(g, node, &mut names)?;
    let graph = finish(parts)?;
    Ok(Rewritten {
        graph,
        rule_id: rule.id().to_string(),
        node_id: node_id.to_string(),
        retraining_required: rule.retraining_required(),
    })
}

/// Drop initializers nobody reads any more, then fully validate.
pub(crate) fn finish(mut parts: GraphParts) -> Result<Graph, RewriteError> {
    prune_initializers(&mut parts);
    let g = Graph::new(parts)?;
    infer_shapes(&g)?;
    Ok(g)
}

pub(crate) fn prune_initializers(parts: &mut GraphParts) {
    let read: HashSet<&str> = parts
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .chain(parts.outputs.iter().map(String::as_str))
        .collect();
    let keep: Vec<bool> = parts.initializers.iter().map(|i| read.contains(i.name())).collect();
    let mut it = keep.into_iter();
    parts.initializers.retain(|_| it.next().unwrap_or(true));
}
