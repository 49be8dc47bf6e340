use serde::{Deserialize, Serialize};

use super::rules::{ints, ConvTransposeExact, ConvTransposeStructural, RewriteRule};
use super::{apply_rule, NameGen, RewriteError, Rewritten};
use crate::ir::{
    infer_shapes, is_constant, AttrValue, ConvGeometry, Graph, GraphParts, Initializer, Node, OpKind, TensorSpec,
};
use crate::tensor::{DType, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvTransposeMode {
    /// stride == kernel, no padding: exact 1x1 conv + pixel shuffle.
    ExactNonoverlap,
    /// Shape-preserving replacement with zeroed weights.
    Structural,
}

/// Replace the transposed convolution `node_id`.
pub fn rewrite_convtranspose(g: &Graph, node_id: &str, mode: ConvTransposeMode) -> Result<Rewritten, RewriteError> {
    let node = g
        .node(node_id)
        .ok_or_else(|| RewriteError::NodeNotFound(node_id.to_string()))?;
    check(g, node, mode).map_err(|reason| RewriteError::Precondition {
        node: node_id.to_string(),
        reason,
    })?;
    let rule: &dyn RewriteRule = match mode {
        ConvTransposeMode::ExactNonoverlap => &ConvTransposeExact,
        ConvTransposeMode::Structural => &ConvTransposeStructural,
    };
    apply_rule(g, node_id, rule)
}

pub(crate) fn check(g: &Graph, node: &Node, mode: ConvTransposeMode) -> Result<ConvGeometry, String> {
    if !node.is(OpKind::ConvTranspose2D) {
        return Err(format!("expected ConvTranspose2D, found {}", node.op_type));
    }
    let shapes = infer_shapes(g).map_err(|e| e.to_string())?;
    let ins: Vec<&TensorSpec> = node.inputs.iter().map(|n| &shapes[n]).collect();
    if ins.iter().any(|s| s.dtype != DType::Float32) {
        return Err("operands must be float32".into());
    }
    let geo = ConvGeometry::for_conv_transpose(node, &ins)?;
    if mode == ConvTransposeMode::ExactNonoverlap {
        if geo.kernel_h != geo.stride || geo.kernel_w != geo.stride || geo.padding != 0 {
            return Err(format!(
                "exact mode needs stride == kernel and no padding (kernel {}x{}, stride {}, padding {})",
                geo.kernel_h, geo.kernel_w, geo.stride, geo.padding
            ));
        }
        for name in &node.inputs[1..] {
            if is_constant(g, name).is_none() {
                return Err(format!("'{name}' is not constant"));
            }
        }
    }
    Ok(geo)
}

fn floats(init: &Initializer) -> &[f32] {
    match &init.data {
        TensorData::Float32(v) => v,
        _ => unreachable!("operands checked to be float32"),
    }
}

pub(crate) fn rewrite(
    g: &Graph,
    node: &Node,
    mode: ConvTransposeMode,
    names: &mut NameGen,
) -> Result<GraphParts, RewriteError> {
    let geo = check(g, node, mode).map_err(|reason| RewriteError::Precondition {
        node: node.id.clone(),
        reason,
    })?;
    let (replacement, inits) = match mode {
        ConvTransposeMode::ExactNonoverlap => exact(g, node, &geo, names)?,
        ConvTransposeMode::Structural => structural(node, &geo, names)?,
    };
    let mut parts = g.to_parts();
    let at = parts.nodes.iter().position(|n| n.id == node.id).expect("anchor exists");
    parts.nodes.splice(at..=at, replacement);
    parts.initializers.extend(inits);
    Ok(parts)
}

/// conv output -> Reshape(split) -> Transpose(perm) -> Reshape(merged), the
/// last writing the original output name.
fn shuffle(
    node: &Node,
    conv_out: String,
    split: Vec<usize>,
    perm: [usize; 6],
    merged: Vec<usize>,
    names: &mut NameGen,
) -> Result<Vec<Node>, RewriteError> {
    let out = &node.outputs[0];
    let (r1, t) = (names.fresh(out)?, names.fresh(out)?);
    Ok(vec![
        Node::new(names.fresh(&node.id)?, "Reshape", [conv_out], [r1.clone()]).with_attr("shape", ints(&split)),
        Node::new(names.fresh(&node.id)?, "Transpose", [r1], [t.clone()]).with_attr("perm", ints(&perm)),
        Node::new(names.fresh(&node.id)?, "Reshape", [t], [out.clone()]).with_attr("shape", ints(&merged)),
    ])
}

fn conv_node(id: String, inputs: Vec<String>, output: String, padding: usize) -> Node {
    Node::new(id, "Conv2D", inputs, [output])
        .with_attr("stride", AttrValue::Int(1))
        .with_attr("padding", AttrValue::Int(padding as i64))
}

fn exact(
    g: &Graph,
    node: &Node,
    geo: &ConvGeometry,
    names: &mut NameGen,
) -> Result<(Vec<Node>, Vec<Initializer>), RewriteError> {
    let s = geo.stride;
    let (cin, cout) = (geo.in_channels, geo.out_channels);
    let w_init = is_constant(g, &node.inputs[1]).expect("checked");
    let w = floats(&w_init);
    // channel (i*s + j)*Cout + co of the 1x1 conv holds kernel tap (i, j) of co
    let mut wc = vec![0f32; cout * s * s * cin];
    for ci in 0..cin {
        for co in 0..cout {
            for i in 0..s {
                for j in 0..s {
                    let src = ((ci * cout + co) * s + i) * s + j;
                    let dst = ((i * s + j) * cout + co) * cin + ci;
                    wc[dst] = w[src];
                }
            }
        }
    }
    let mut inits = vec![Initializer::f32(
        names.fresh(w_init.name())?,
        vec![cout * s * s, cin, 1, 1],
        wc,
    )];
    if let Some(b_name) = node.inputs.get(2) {
        let b_init = is_constant(g, b_name).expect("checked");
        let b = floats(&b_init);
        let repeated: Vec<f32> = (0..s * s).flat_map(|_| b.iter().copied()).collect();
        inits.push(Initializer::f32(
            names.fresh(b_init.name())?,
            vec![cout * s * s],
            repeated,
        ));
    }

    let mut conv_inputs = vec![node.inputs[0].clone()];
    conv_inputs.extend(inits.iter().map(|i| i.name().to_string()));
    if s == 1 {
        return Ok((
            vec![conv_node(
                names.fresh(&node.id)?,
                conv_inputs,
                node.outputs[0].clone(),
                0,
            )],
            inits,
        ));
    }
    let conv_out = names.fresh(&node.outputs[0])?;
    let mut nodes = vec![conv_node(names.fresh(&node.id)?, conv_inputs, conv_out.clone(), 0)];
    let (n, h, w) = (geo.batch, geo.in_h, geo.in_w);
    nodes.extend(shuffle(
        node,
        conv_out,
        vec![n, s, s, cout, h, w],
        [0, 3, 4, 1, 5, 2],
        vec![n, cout, h * s, w * s],
        names,
    )?);
    Ok((nodes, inits))
}

/// Upscale factor for one axis: `out / input` when that divides evenly,
/// otherwise the divisor of `out` nearest `stride` (larger on ties).
fn upscale(input: usize, out: usize, stride: usize) -> usize {
    if out.is_multiple_of(input) {
        return out / input;
    }
    (1..=out)
        .filter(|&d| out.is_multiple_of(d))
        .min_by_key(|&d| (d.abs_diff(stride), std::cmp::Reverse(d)))
        .expect("1 divides everything")
}

fn structural(
    node: &Node,
    geo: &ConvGeometry,
    names: &mut NameGen,
) -> Result<(Vec<Node>, Vec<Initializer>), RewriteError> {
    let (ho, wo) = (geo.out_h, geo.out_w);
    let a = upscale(geo.in_h, ho, geo.stride);
    let b = upscale(geo.in_w, wo, geo.stride);
    let (hc, wc) = (ho / a, wo / b);
    let grow = |c: usize, i: usize| c.saturating_sub(i).div_ceil(2);
    let pad = 1.max(grow(hc, geo.in_h)).max(grow(wc, geo.in_w));
    let kh = geo.in_h + 2 * pad + 1 - hc;
    let kw = geo.in_w + 2 * pad + 1 - wc;
    let channels = geo.out_channels * a * b;

    let base_w = &node.inputs[1];
    let mut inits = vec![Initializer::f32(
        names.fresh(base_w)?,
        vec![channels, geo.in_channels, kh, kw],
        vec![0.0; channels * geo.in_channels * kh * kw],
    )];
    if let Some(b_name) = node.inputs.get(2) {
        inits.push(Initializer::f32(
            names.fresh(b_name)?,
            vec![channels],
            vec![0.0; channels],
        ));
    }
    let mut conv_inputs = vec![node.inputs[0].clone()];
    conv_inputs.extend(inits.iter().map(|i| i.name().to_string()));
    let conv_out = names.fresh(&node.outputs[0])?;
    let mut nodes = vec![conv_node(names.fresh(&node.id)?, conv_inputs, conv_out.clone(), pad)];
    let (n, cout) = (geo.batch, geo.out_channels);
    nodes.extend(shuffle(
        node,
        conv_out,
        vec![n, cout, a, b, hc, wc],
        [0, 1, 4, 2, 5, 3],
        vec![n, cout, ho, wo],
        names,
    )?);
    Ok((nodes, inits))
}
