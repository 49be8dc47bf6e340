use std::collections::{BTreeSet, HashSet};

use super::{finish, fuse_outputs, FusionEntry, RewriteError};
use crate::ir::{infer_shapes, Graph, GraphParts, Producer, TensorSpec};
use crate::profiles::CapabilityProfile;

/// A graph cut into a deployable prefix and a post-processing suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitArtifacts {
    pub prefix: Graph,
    pub postprocess: Graph,
    /// Values handed from prefix to postprocess, before any fusion.
    pub cut_tensors: Vec<TensorSpec>,
    /// Empty unless the prefix outputs were fused.
    pub fusion_manifest: Vec<FusionEntry>,
    pub fused_output_name: Option<String>,
}

/// Move everything downstream of `seeds` into a separate graph.
pub fn split_tail(g: &Graph, seeds: &BTreeSet<String>, p: &CapabilityProfile) -> Result<SplitArtifacts, RewriteError> {
    let mut roots = Vec::new();
    for s in seeds {
        roots.push(
            g.node_index(s)
                .ok_or_else(|| RewriteError::Split(format!("seed node '{s}' not found")))?,
        );
    }
    let suffix = g.descendant_closure(&roots);
    if !g.nodes().is_empty() && suffix.len() == g.nodes().len() {
        return Err(RewriteError::Split(
            "closure covers all nodes; nothing would remain to deploy. \
             Consider implementing the op as a custom layer (S4) instead"
                .into(),
        ));
    }
    let shapes = infer_shapes(g)?;

    let produced_in_suffix: HashSet<&str> = suffix
        .iter()
        .flat_map(|&i| g.nodes()[i].outputs.iter().map(String::as_str))
        .collect();
    let mut cut: Vec<String> = Vec::new();
    let mut suffix_inits: Vec<String> = Vec::new();
    for &i in g.topo_order() {
        if !suffix.contains(&i) {
            continue;
        }
        for inp in &g.nodes()[i].inputs {
            if produced_in_suffix.contains(inp.as_str()) {
                continue;
            }
            let list = match g.producer(inp) {
                Some(Producer::Initializer(_)) => &mut suffix_inits,
                _ => &mut cut,
            };
            if !list.contains(inp) {
                list.push(inp.clone());
            }
        }
    }
    let mut prefix_outputs = cut.clone();
    for out in g.outputs() {
        if !produced_in_suffix.contains(out.as_str()) && !prefix_outputs.contains(out) {
            prefix_outputs.push(out.clone());
        }
    }
    let cut_specs: Vec<TensorSpec> = prefix_outputs.iter().map(|n| shapes[n].clone()).collect();

    let prefix_reads: HashSet<&str> = g
        .nodes()
        .iter()
        .enumerate()
        .filter(|(i, _)| !suffix.contains(i))
        .flat_map(|(_, n)| n.inputs.iter().map(String::as_str))
        .chain(prefix_outputs.iter().map(String::as_str))
        .collect();

    let prefix_parts = GraphParts {
        name: g.name().to_string(),
        inputs: g.inputs().to_vec(),
        outputs: prefix_outputs.clone(),
        initializers: g
            .initializers()
            .iter()
            .filter(|i| !suffix_inits.iter().any(|s| s == i.name()) || prefix_reads.contains(i.name()))
            .cloned()
            .collect(),
        nodes: g
            .nodes()
            .iter()
            .enumerate()
            .filter(|(i, _)| !suffix.contains(i))
            .map(|(_, n)| n.clone())
            .collect(),
    };
    let post_parts = GraphParts {
        name: format!("{}.post", g.name()),
        inputs: cut_specs.clone(),
        outputs: g.outputs().to_vec(),
        initializers: g
            .initializers()
            .iter()
            .filter(|i| suffix_inits.iter().any(|s| s == i.name()))
            .cloned()
            .collect(),
        nodes: g
            .nodes()
            .iter()
            .enumerate()
            .filter(|(i, _)| suffix.contains(i))
            .map(|(_, n)| n.clone())
            .collect(),
    };
    let mut prefix = Graph::new(prefix_parts)?;
    let postprocess = finish(post_parts)?;

    let mut fusion_manifest = Vec::new();
    let mut fused_output_name = None;
    if p.single_output_only && prefix.outputs().len() > 1 {
        let fused = fuse_outputs(&prefix)?;
        prefix = fused.graph;
        fusion_manifest = fused.manifest;
        fused_output_name = Some(fused.fused_output_name);
    }
    infer_shapes(&prefix)?;
    Ok(SplitArtifacts {
        prefix,
        postprocess,
        cut_tensors: cut_specs,
        fusion_manifest,
        fused_output_name,
    })
}
