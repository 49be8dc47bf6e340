use serde::{Deserialize, Serialize};

use super::{finish, NameGen, RewriteError};
use crate::interpreter::TensorMap;
use crate::ir::{infer_shapes, AttrValue, Graph, Node};
use crate::tensor::{numel, DType, TensorValue};

/// Where one original output sits inside the fused vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionEntry {
    pub flat_length: usize,
    pub flat_offset: usize,
    pub shape: Vec<usize>,
    pub value_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGraph {
    pub graph: Graph,
    pub manifest: Vec<FusionEntry>,
    pub fused_output_name: String,
}

/// Flatten every output and concatenate them into one rank-1 output.
pub fn fuse_outputs(g: &Graph) -> Result<FusedGraph, RewriteError> {
    if g.outputs().is_empty() {
        return Err(RewriteError::Fusion("graph has no outputs".into()));
    }
    let shapes = infer_shapes(g)?;
    let mut names = NameGen::new(g);
    let mut parts = g.to_parts();
    let mut manifest = Vec::new();
    let mut flats = Vec::new();
    let mut offset = 0;
    for out in g.outputs() {
        let spec = &shapes[out];
        if spec.dtype != DType::Float32 {
            return Err(RewriteError::Fusion(format!(
                "output '{out}' is {}; only float32 outputs can be fused",
                spec.dtype
            )));
        }
        let flat = names.fresh(out)?;
        parts.nodes.push(Node::new(
            names.fresh("fuse_flatten")?,
            "Flatten",
            [out.clone()],
            [flat.clone()],
        ));
        flats.push(flat);
        let len = numel(&spec.shape);
        manifest.push(FusionEntry {
            flat_length: len,
            flat_offset: offset,
            shape: spec.shape.clone(),
            value_name: out.clone(),
        });
        offset += len;
    }
    let fused = names.fresh("fused")?;
    parts.nodes.push(
        Node::new(names.fresh("fuse_concat")?, "Concat", flats, vec![fused.clone()])
            .with_attr("axis", AttrValue::Int(0)),
    );
    parts.outputs = vec![fused.clone()];
    Ok(FusedGraph {
        graph: finish(parts)?,
        manifest,
        fused_output_name: fused,
    })
}

/// Split a fused vector back into the named tensors.
pub fn defuse(manifest: &[FusionEntry], fused: &TensorValue) -> Result<TensorMap, RewriteError> {
    let err = |m: String| RewriteError::Fusion(m);
    let t = fused
        .as_f32()
        .map_err(|_| err(format!("fused tensor is {}, expected float32", fused.dtype())))?;
    if t.rank() != 1 {
        return Err(err(format!("fused tensor has shape {:?}, expected rank 1", t.shape())));
    }
    let data = t.data();
    let total: usize = manifest.iter().map(|e| e.flat_length).sum();
    if total != data.len() {
        return Err(err(format!(
            "manifest covers {total} elements but the fused tensor has {}",
            data.len()
        )));
    }
    let mut out = TensorMap::new();
    for e in manifest {
        if e.flat_length != numel(&e.shape) {
            return Err(err(format!(
                "entry '{}' has length {} but shape {:?}",
                e.value_name, e.flat_length, e.shape
            )));
        }
        let end = e
            .flat_offset
            .checked_add(e.flat_length)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| {
                err(format!(
                    "entry '{}' runs past the end of the fused tensor",
                    e.value_name
                ))
            })?;
        let v =
            TensorValue::f32(e.shape.clone(), data[e.flat_offset..end].to_vec()).expect("length checked against shape");
        out.insert(e.value_name.clone(), v);
    }
    Ok(out)
}
