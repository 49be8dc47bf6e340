//! Reference executor for the op vocabulary.
//!
//! Nodes run one at a time in topological order. Values are dropped as soon as
//! their last consumer has run, which is what the peak-memory figure in
//! [`BenchReport`] measures.

mod bench;
pub mod kernels;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::ir::{self, ConvGeometry, Graph, Node, OpKind, TensorSpec};
use crate::tensor::{DType, DenseTensor, TensorError, TensorValue};

pub use bench::{bench, mac_count, BenchReport};
use kernels::KernelError;

/// Named tensors, ordered by name.
pub type TensorMap = BTreeMap<String, TensorValue>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("missing graph input '{0}'")]
    MissingInput(String),
    #[error("'{0}' is not a graph input")]
    UnexpectedInput(String),
    #[error("input '{name}' expected {expected_dtype}{expected_shape:?}, got {dtype}{shape:?}")]
    InputMismatch {
        name: String,
        expected_dtype: DType,
        expected_shape: Vec<usize>,
        dtype: DType,
        shape: Vec<usize>,
    },
    #[error("node '{node}': op '{op}' has no reference kernel")]
    Unsupported { node: String, op: String },
    #[error("internal error at node '{node}': {reason}")]
    Internal { node: String, reason: String },
    #[error("repetitions must be at least 1")]
    Repetitions,
    #[error(transparent)]
    Shape(#[from] ir::IrError),
}

/// Evaluate `g` on `inputs`, returning every declared graph output.
pub fn run_graph(g: &Graph, inputs: &TensorMap) -> Result<TensorMap, RunError> {
    execute(g, inputs).map(|(out, _)| out)
}

fn check_inputs(g: &Graph, inputs: &TensorMap) -> Result<(), RunError> {
    for spec in g.inputs() {
        let value = inputs
            .get(&spec.name)
            .ok_or_else(|| RunError::MissingInput(spec.name.clone()))?;
        if value.dtype() != spec.dtype || value.shape() != spec.shape.as_slice() {
            return Err(RunError::InputMismatch {
                name: spec.name.clone(),
                expected_dtype: spec.dtype,
                expected_shape: spec.shape.clone(),
                dtype: value.dtype(),
                shape: value.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = inputs.keys().find(|k| g.input(k).is_none()) {
        return Err(RunError::UnexpectedInput(extra.clone()));
    }
    Ok(())
}

/// Run the graph and report the peak number of live tensor bytes.
pub(crate) fn execute(g: &Graph, inputs: &TensorMap) -> Result<(TensorMap, usize), RunError> {
    check_inputs(g, inputs)?;
    let order = g.topo_order();

    // position (in `order`) of each value's last consumer; outputs live forever
    let mut last_use: HashMap<&str, usize> = HashMap::new();
    for (pos, &i) in order.iter().enumerate() {
        for inp in &g.nodes()[i].inputs {
            last_use.insert(inp.as_str(), pos);
        }
    }
    for out in g.outputs() {
        last_use.insert(out.as_str(), usize::MAX);
    }

    let mut live: HashMap<String, TensorValue> = HashMap::new();
    let mut live_bytes = 0usize;
    for spec in g.inputs() {
        if last_use.contains_key(spec.name.as_str()) {
            let v = inputs[&spec.name].clone();
            live_bytes += v.byte_size();
            live.insert(spec.name.clone(), v);
        }
    }
    for init in g.initializers() {
        if last_use.contains_key(init.name()) {
            let v = init.to_value();
            live_bytes += v.byte_size();
            live.insert(init.name().to_string(), v);
        }
    }
    let mut peak = live_bytes;

    for (pos, &i) in order.iter().enumerate() {
        let node = &g.nodes()[i];
        let args: Vec<&TensorValue> = node.inputs.iter().map(|n| &live[n]).collect();
        let result = eval_node(node, &args)?;
        live_bytes += result.byte_size();
        peak = peak.max(live_bytes);
        let out_name = &node.outputs[0];
        if last_use.contains_key(out_name.as_str()) {
            live.insert(out_name.clone(), result);
        } else {
            live_bytes -= result.byte_size();
        }
        for inp in &node.inputs {
            if last_use.get(inp.as_str()) == Some(&pos) {
                if let Some(v) = live.remove(inp) {
                    live_bytes -= v.byte_size();
                }
            }
        }
    }

    let outputs = g.outputs().iter().map(|o| (o.clone(), live[o].clone())).collect();
    Ok((outputs, peak))
}

fn spec_of(name: &str, v: &TensorValue) -> TensorSpec {
    TensorSpec::new(name, v.dtype(), v.shape().to_vec())
}

/// Evaluate a single node on concrete arguments.
pub(crate) fn eval_node(node: &Node, args: &[&TensorValue]) -> Result<TensorValue, RunError> {
    let internal = |reason: String| RunError::Internal {
        node: node.id.clone(),
        reason,
    };
    let Some(kind) = node.kind() else {
        return Err(RunError::Unsupported {
            node: node.id.clone(),
            op: node.op_type.clone(),
        });
    };
    let f32_arg =
        |i: usize| -> Result<&DenseTensor<f32>, RunError> { args[i].as_f32().map_err(|e| internal(e.to_string())) };
    let kernel = |r: Result<DenseTensor<f32>, KernelError>| -> Result<TensorValue, RunError> {
        r.map(TensorValue::Float32).map_err(|e| internal(e.to_string()))
    };
    let layout = |r: Result<TensorValue, KernelError>| r.map_err(|e| internal(e.to_string()));

    match kind {
        OpKind::Add => kernel(kernels::binary(f32_arg(0)?, f32_arg(1)?, |a, b| a + b)),
        OpKind::Sub => kernel(kernels::binary(f32_arg(0)?, f32_arg(1)?, |a, b| a - b)),
        OpKind::Mul => kernel(kernels::binary(f32_arg(0)?, f32_arg(1)?, |a, b| a * b)),
        OpKind::Neg => Ok(kernels::neg(f32_arg(0)?).into()),
        OpKind::Relu => Ok(kernels::relu(f32_arg(0)?).into()),
        OpKind::Softmax => {
            let x = f32_arg(0)?;
            let axis = ir::normalize_axis(node.attr_int("axis").unwrap_or(-1), x.rank()).map_err(internal)?;
            kernel(kernels::softmax(x, axis))
        }
        OpKind::Conv2D | OpKind::ConvTranspose2D => {
            let specs: Vec<TensorSpec> = args.iter().zip(&node.inputs).map(|(v, n)| spec_of(n, v)).collect();
            let refs: Vec<&TensorSpec> = specs.iter().collect();
            let bias = if args.len() > 2 { Some(f32_arg(2)?) } else { None };
            if kind == OpKind::Conv2D {
                let geo = ConvGeometry::for_conv(node, &refs).map_err(internal)?;
                kernel(kernels::conv2d(f32_arg(0)?, f32_arg(1)?, bias, &geo))
            } else {
                let geo = ConvGeometry::for_conv_transpose(node, &refs).map_err(internal)?;
                kernel(kernels::conv_transpose2d(f32_arg(0)?, f32_arg(1)?, bias, &geo))
            }
        }
        OpKind::Reshape => {
            let dims: Vec<usize> = node
                .attr_ints("shape")
                .unwrap_or_default()
                .iter()
                .map(|&d| d as usize)
                .collect();
            args[0].clone().with_shape(dims).map_err(|e| internal(e.to_string()))
        }
        OpKind::Flatten => {
            let n = args[0].numel();
            args[0].clone().with_shape(vec![n]).map_err(|e| internal(e.to_string()))
        }
        OpKind::Dropout => Ok(args[0].clone()),
        OpKind::Transpose => {
            let perm =
                ir::permutation(node.attr_ints("perm").unwrap_or_default(), args[0].shape().len()).map_err(internal)?;
            layout(map_layout(
                args[0],
                |t| kernels::transpose(t, &perm),
                |t| kernels::transpose(t, &perm),
                |t| kernels::transpose(t, &perm),
            ))
        }
        OpKind::Slice => {
            let ranges = ir::slice_ranges(node, args[0].shape()).map_err(internal)?;
            layout(map_layout(
                args[0],
                |t| kernels::slice(t, &ranges),
                |t| kernels::slice(t, &ranges),
                |t| kernels::slice(t, &ranges),
            ))
        }
        OpKind::DepthToSpace => {
            let b = node.attr_int("blocksize").unwrap_or(0).max(0) as usize;
            layout(map_layout(
                args[0],
                |t| kernels::depth_to_space(t, b),
                |t| kernels::depth_to_space(t, b),
                |t| kernels::depth_to_space(t, b),
            ))
        }
        OpKind::Concat => {
            let axis =
                ir::normalize_axis(node.attr_int("axis").unwrap_or(0), args[0].shape().len()).map_err(internal)?;
            layout(concat_values(args, axis))
        }
        OpKind::Cast => {
            let to = node
                .attr_str("to")
                .and_then(DType::parse)
                .ok_or_else(|| internal("invalid Cast target".into()))?;
            cast(args[0], to).map_err(|e| internal(e.to_string()))
        }
    }
}

fn map_layout(
    v: &TensorValue,
    f: impl FnOnce(&DenseTensor<f32>) -> Result<DenseTensor<f32>, KernelError>,
    i: impl FnOnce(&DenseTensor<i64>) -> Result<DenseTensor<i64>, KernelError>,
    b: impl FnOnce(&DenseTensor<bool>) -> Result<DenseTensor<bool>, KernelError>,
) -> Result<TensorValue, KernelError> {
    Ok(match v {
        TensorValue::Float32(t) => TensorValue::Float32(f(t)?),
        TensorValue::Int64(t) => TensorValue::Int64(i(t)?),
        TensorValue::Bool(t) => TensorValue::Bool(b(t)?),
    })
}

fn concat_values(args: &[&TensorValue], axis: usize) -> Result<TensorValue, KernelError> {
    fn gather<'a, T: Copy + 'a>(
        args: &[&'a TensorValue],
        pick: impl Fn(&'a TensorValue) -> Option<&'a DenseTensor<T>>,
    ) -> Result<Vec<&'a DenseTensor<T>>, KernelError> {
        args.iter()
            .map(|v| pick(v).ok_or_else(|| KernelError::Shape("concat of mixed dtypes".into())))
            .collect()
    }
    Ok(match args[0] {
        TensorValue::Float32(_) => TensorValue::Float32(kernels::concat(
            &gather(args, |v| match v {
                TensorValue::Float32(t) => Some(t),
                _ => None,
            })?,
            axis,
        )?),
        TensorValue::Int64(_) => TensorValue::Int64(kernels::concat(
            &gather(args, |v| match v {
                TensorValue::Int64(t) => Some(t),
                _ => None,
            })?,
            axis,
        )?),
        TensorValue::Bool(_) => TensorValue::Bool(kernels::concat(
            &gather(args, |v| match v {
                TensorValue::Bool(t) => Some(t),
                _ => None,
            })?,
            axis,
        )?),
    })
}

/// float32 -> int64 truncates toward zero (saturating); same-dtype casts copy.
fn cast(v: &TensorValue, to: DType) -> Result<TensorValue, TensorError> {
    match (v, to) {
        (TensorValue::Float32(_), DType::Float32) | (TensorValue::Int64(_), DType::Int64) => Ok(v.clone()),
        (TensorValue::Float32(t), DType::Int64) => Ok(TensorValue::Int64(t.map(|&x| x as i64))),
        (TensorValue::Int64(t), DType::Float32) => Ok(TensorValue::Float32(t.map(|&x| x as f32))),
        (other, to) => Err(TensorError::DType {
            expected: to,
            actual: other.dtype(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{AttrValue, GraphParts, Initializer};

    fn graph(inputs: Vec<TensorSpec>, inits: Vec<Initializer>, nodes: Vec<Node>, outputs: &[&str]) -> Graph {
        Graph::new(GraphParts {
            name: "t".into(),
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            initializers: inits,
            nodes,
        })
        .unwrap()
    }

    fn feed(name: &str, shape: Vec<usize>, data: Vec<f32>) -> TensorMap {
        BTreeMap::from([(name.to_string(), TensorValue::f32(shape, data).unwrap())])
    }

    #[test]
    fn add_constant() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![2])],
            vec![Initializer::f32("c", vec![2], vec![3.0, 4.0])],
            vec![Node::new("a", "Add", ["x", "c"], ["y"])],
            &["y"],
        );
        let out = run_graph(&g, &feed("x", vec![2], vec![1.0, 2.0])).unwrap();
        assert_eq!(out["y"], TensorValue::f32(vec![2], vec![4.0, 6.0]).unwrap());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![2])],
            vec![],
            vec![Node::new("s", "Softmax", ["x"], ["y"]).with_attr("axis", AttrValue::Int(0))],
            &["y"],
        );
        let out = run_graph(&g, &feed("x", vec![2], vec![0.0, 0.0])).unwrap();
        assert_eq!(out["y"], TensorValue::f32(vec![2], vec![0.5, 0.5]).unwrap());
    }

    #[test]
    fn identity_kernel_conv() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![1, 1, 3, 3])],
            vec![Initializer::f32("w", vec![1, 1, 1, 1], vec![1.0])],
            vec![Node::new("c", "Conv2D", ["x", "w"], ["y"])],
            &["y"],
        );
        let data: Vec<f32> = (0..9).map(|v| v as f32 * 0.5 - 1.0).collect();
        let out = run_graph(&g, &feed("x", vec![1, 1, 3, 3], data.clone())).unwrap();
        assert_eq!(out["y"], TensorValue::f32(vec![1, 1, 3, 3], data).unwrap());
    }

    #[test]
    fn dropout_and_noop_cast_are_exact() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![3])],
            vec![],
            vec![
                Node::new("d", "Dropout", ["x"], ["a"]).with_attr("ratio", AttrValue::Float(0.3)),
                Node::new("c", "Cast", ["a"], ["y"]).with_attr("to", AttrValue::Str("float32".into())),
            ],
            &["y"],
        );
        let data = vec![0.1f32, -7.25, 1e-30];
        let out = run_graph(&g, &feed("x", vec![3], data.clone())).unwrap();
        assert_eq!(out["y"], TensorValue::f32(vec![3], data).unwrap());
    }

    #[test]
    fn cast_round_trip_truncates() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![3])],
            vec![],
            vec![
                Node::new("a", "Cast", ["x"], ["i"]).with_attr("to", AttrValue::Str("int64".into())),
                Node::new("b", "Cast", ["i"], ["y"]).with_attr("to", AttrValue::Str("float32".into())),
            ],
            &["i", "y"],
        );
        let out = run_graph(&g, &feed("x", vec![3], vec![1.7, -1.7, 0.2])).unwrap();
        assert_eq!(out["i"], TensorValue::i64(vec![3], vec![1, -1, 0]).unwrap());
        assert_eq!(out["y"], TensorValue::f32(vec![3], vec![1.0, -1.0, 0.0]).unwrap());
    }

    #[test]
    fn input_contract_enforced() {
        let g = graph(vec![TensorSpec::f32("x", vec![2])], vec![], vec![], &["x"]);
        assert_eq!(
            run_graph(&g, &BTreeMap::new()).unwrap_err(),
            RunError::MissingInput("x".into())
        );
        assert!(matches!(
            run_graph(&g, &feed("x", vec![3], vec![0.0; 3])),
            Err(RunError::InputMismatch { .. })
        ));
        let mut extra = feed("x", vec![2], vec![0.0; 2]);
        extra.insert("z".into(), TensorValue::f32(vec![1], vec![0.0]).unwrap());
        assert_eq!(
            run_graph(&g, &extra).unwrap_err(),
            RunError::UnexpectedInput("z".into())
        );
    }

    #[test]
    fn custom_op_has_no_kernel() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![2])],
            vec![],
            vec![Node::new("w", "Custom:warp", ["x"], ["y"])],
            &["y"],
        );
        assert!(matches!(
            run_graph(&g, &feed("x", vec![2], vec![0.0; 2])),
            Err(RunError::Unsupported { .. })
        ));
    }

    #[test]
    fn concat_mixed_layout_ops() {
        let g = graph(
            vec![TensorSpec::f32("x", vec![2, 2])],
            vec![],
            vec![
                Node::new("t", "Transpose", ["x"], ["t"]).with_attr("perm", AttrValue::Ints(vec![1, 0])),
                Node::new("c", "Concat", ["x", "t"], ["c"]).with_attr("axis", AttrValue::Int(0)),
                Node::new("s", "Slice", ["c"], ["y"])
                    .with_attr("starts", AttrValue::Ints(vec![2]))
                    .with_attr("ends", AttrValue::Ints(vec![4])),
            ],
            &["y"],
        );
        let out = run_graph(&g, &feed("x", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(
            out["y"],
            TensorValue::f32(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap()
        );
    }
}
