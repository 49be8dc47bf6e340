use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analyzer::{CompatibilityReport, Scenario};
use crate::ir::{infer_shapes, Graph, IrError, TensorSpec};

/// Label for the framework the model comes from when none is given.
pub const DEFAULT_SOURCE_FRAMEWORK: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSignature {
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
}

/// An op that has to be implemented by hand in both frameworks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomOpManifest {
    /// Signature of the first occurrence.
    pub io_signature: IoSignature,
    pub occurrences: Vec<String>,
    pub op_type: String,
    /// Source framework, then target profile.
    pub required_in: Vec<String>,
}

/// One manifest per distinct op type assigned S4 in `report`.
pub fn emit_custom_manifest(
    g: &Graph,
    report: &CompatibilityReport,
    source_framework: &str,
) -> Result<Vec<CustomOpManifest>, IrError> {
    let s4: Vec<_> = report.nodes_in(Scenario::S4CustomOp).collect();
    if s4.is_empty() {
        return Ok(Vec::new());
    }
    let shapes = infer_shapes(g)?;
    let mut by_op: BTreeMap<&str, CustomOpManifest> = BTreeMap::new();
    for a in s4 {
        let Some(node) = g.node(&a.node_id) else {
            continue;
        };
        by_op
            .entry(node.op_type.as_str())
            .or_insert_with(|| CustomOpManifest {
                io_signature: IoSignature {
                    inputs: node.inputs.iter().map(|n| shapes[n].clone()).collect(),
                    outputs: node.outputs.iter().map(|n| shapes[n].clone()).collect(),
                },
                occurrences: Vec::new(),
                op_type: node.op_type.clone(),
                required_in: vec![source_framework.to_string(), report.profile_name.clone()],
            })
            .occurrences
            .push(node.id.clone());
    }
    Ok(by_op.into_values().collect())
}
