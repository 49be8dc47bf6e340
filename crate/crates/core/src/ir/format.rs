//! The `.nng.json` interchange format.
//!
//! Serialization is canonical: object keys are sorted, floats use the shortest
//! representation that round-trips, and arrays of scalars are kept on one line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttrValue, Graph, GraphParts, Initializer, IrError, Node, TensorSpec};
use crate::tensor::{DType, TensorData};

pub const FORMAT_VERSION: u64 = 1;

// Field order is alphabetical so the serialized key order is canonical.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireModel<D> {
    format_version: u64,
    initializers: Vec<WireInitializer<D>>,
    inputs: Vec<TensorSpec>,
    name: String,
    nodes: Vec<WireNode>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireInitializer<D> {
    data: D,
    dtype: DType,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    #[serde(default)]
    attrs: BTreeMap<String, AttrValue>,
    id: String,
    inputs: Vec<String>,
    op: String,
    outputs: Vec<String>,
}

/// Parse and validate a model from interchange text.
pub fn parse_model(text: &str) -> Result<Graph, IrError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| IrError::Syntax(e.to_string()))?;
    match raw.get("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(IrError::Syntax(format!(
                "unsupported format_version {v} (expected {FORMAT_VERSION})"
            )))
        }
        None => return Err(IrError::Syntax("missing field `format_version`".into())),
    }
    let wire: WireModel<Vec<serde_json::Value>> =
        serde_json::from_value(raw).map_err(|e| IrError::Syntax(e.to_string()))?;

    let initializers = wire
        .initializers
        .into_iter()
        .map(|w| {
            let data = TensorData::from_json(w.dtype, &w.data).map_err(|reason| IrError::Validation {
                location: format!("initializer '{}'", w.name),
                reason,
            })?;
            Ok(Initializer {
                spec: TensorSpec::new(w.name, w.dtype, w.shape),
                data,
            })
        })
        .collect::<Result<Vec<_>, IrError>>()?;

    let nodes = wire
        .nodes
        .into_iter()
        .map(|w| Node {
            id: w.id,
            op_type: w.op,
            inputs: w.inputs,
            outputs: w.outputs,
            attrs: w.attrs,
        })
        .collect();

    Graph::new(GraphParts {
        name: wire.name,
        inputs: wire.inputs,
        outputs: wire.outputs,
        initializers,
        nodes,
    })
}

/// Canonical interchange text for `g`.
pub fn serialize_model(g: &Graph) -> String {
    let parts = g.parts();
    let wire = WireModel {
        format_version: FORMAT_VERSION,
        initializers: parts
            .initializers
            .iter()
            .map(|i| WireInitializer {
                data: &i.data,
                dtype: i.spec.dtype,
                name: i.spec.name.clone(),
                shape: i.spec.shape.clone(),
            })
            .collect(),
        inputs: parts.inputs.clone(),
        name: parts.name.clone(),
        nodes: parts
            .nodes
            .iter()
            .map(|n| WireNode {
                attrs: n.attrs.clone(),
                id: n.id.clone(),
                inputs: n.inputs.clone(),
                op: n.op_type.clone(),
                outputs: n.outputs.clone(),
            })
            .collect(),
        outputs: parts.outputs.clone(),
    };
    let pretty = serde_json::to_string_pretty(&wire).expect("model serialization is infallible");
    let mut text = collapse_scalar_arrays(&pretty);
    text.push('\n');
    text
}

/// Rewrite every array that holds only scalars onto a single line.
pub(crate) fn collapse_scalar_arrays(pretty: &str) -> String {
    let bytes = pretty.as_bytes();
    let mut out = String::with_capacity(pretty.len());
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'"' {
            let end = skip_string(bytes, i);
            out.push_str(&pretty[i..end]);
            i = end;
        } else if c == b'[' {
            match scalar_array_end(bytes, i) {
                Some(end) => {
                    out.push_str(&inline_array(&pretty[i..=end]));
                    i = end + 1;
                }
                None => {
                    out.push('[');
                    i += 1;
                }
            }
        } else {
            let ch = pretty[i..].chars().next().expect("in bounds");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

/// Index just past the string literal starting at `start`.
fn skip_string(bytes: &[u8], start: usize) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len()
}

/// If the array opening at `start` contains no nested arrays or objects,
/// the index of its closing bracket.
fn scalar_array_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => i = skip_string(bytes, i),
            b'[' | b'{' => return None,
            b']' => return Some(i),
            _ => i += 1,
        }
    }
    None
}

fn inline_array(block: &str) -> String {
    let bytes = block.as_bytes();
    let mut out = String::with_capacity(block.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                let end = skip_string(bytes, i);
                out.push_str(&block[i..end]);
                i = end;
            }
            b' ' | b'\n' | b'\r' | b'\t' => i += 1,
            b',' => {
                out.push_str(", ");
                i += 1;
            }
            _ => {
                let ch = block[i..].chars().next().expect("in bounds");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    out
}
