//! Static shape and dtype inference.

use std::collections::BTreeMap;

use super::{Graph, IrError, Node, OpKind, TensorSpec};
use crate::tensor::{numel, DType};

/// Inferred spec of every value in a graph, keyed by value name.
pub type ShapeMap = BTreeMap<String, TensorSpec>;

/// Annotate every value of `g` with a concrete dtype and shape.
pub fn infer_shapes(g: &Graph) -> Result<ShapeMap, IrError> {
    let mut specs: ShapeMap = BTreeMap::new();
    for spec in g.inputs() {
        specs.insert(spec.name.clone(), spec.clone());
    }
    for init in g.initializers() {
        specs.insert(init.spec.name.clone(), init.spec.clone());
    }
    for &i in g.topo_order() {
        let node = &g.nodes()[i];
        let ins: Vec<&TensorSpec> = node.inputs.iter().map(|n| &specs[n]).collect();
        let outs = infer_node(node, &ins).map_err(|reason| IrError::Shape {
            node: node.id.clone(),
            reason,
        })?;
        for (name, (dtype, shape)) in node.outputs.iter().zip(outs) {
            specs.insert(name.clone(), TensorSpec::new(name.clone(), dtype, shape));
        }
    }
    Ok(specs)
}

type Inferred = (DType, Vec<usize>);

/// Output dtype/shape for a single node given its input specs.
fn infer_node(node: &Node, ins: &[&TensorSpec]) -> Result<Vec<Inferred>, String> {
    let Some(kind) = node.kind() else {
        return infer_custom(node, ins);
    };
    let out = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            require_f32(ins)?;
            let shape = broadcast_shape(&ins[0].shape, &ins[1].shape).ok_or_else(|| {
                format!(
                    "operands {:?} and {:?} are not broadcast-compatible",
                    ins[0].shape, ins[1].shape
                )
            })?;
            (DType::Float32, shape)
        }
        OpKind::Neg | OpKind::Relu => {
            require_f32(ins)?;
            (DType::Float32, ins[0].shape.clone())
        }
        OpKind::Softmax => {
            require_f32(ins)?;
            normalize_axis(node.attr_int("axis").unwrap_or(-1), ins[0].shape.len())?;
            (DType::Float32, ins[0].shape.clone())
        }
        OpKind::Reshape => {
            let target = node.attr_ints("shape").unwrap_or_default();
            let target = to_dims(target, "reshape target")?;
            if numel(&target) != ins[0].numel() {
                return Err(format!(
                    "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                    ins[0].shape,
                    ins[0].numel(),
                    target,
                    numel(&target)
                ));
            }
            (ins[0].dtype, target)
        }
        OpKind::Transpose => {
            let perm = permutation(node.attr_ints("perm").unwrap_or_default(), ins[0].shape.len())?;
            (ins[0].dtype, perm.iter().map(|&p| ins[0].shape[p]).collect())
        }
        OpKind::Concat => (ins[0].dtype, concat_shape(node, ins)?),
        OpKind::Slice => {
            let ranges = slice_ranges(node, &ins[0].shape)?;
            (ins[0].dtype, ranges.iter().map(|(s, e)| e - s).collect())
        }
        OpKind::Flatten => (ins[0].dtype, vec![ins[0].numel()]),
        OpKind::Conv2D => {
            let g = ConvGeometry::for_conv(node, ins)?;
            (DType::Float32, vec![g.batch, g.out_channels, g.out_h, g.out_w])
        }
        OpKind::ConvTranspose2D => {
            let g = ConvGeometry::for_conv_transpose(node, ins)?;
            (DType::Float32, vec![g.batch, g.out_channels, g.out_h, g.out_w])
        }
        OpKind::DepthToSpace => {
            let b = positive(node.attr_int("blocksize").unwrap_or(0), "blocksize")?;
            let s = rank4(ins[0], "input")?;
            if s[1] % (b * b) != 0 {
                return Err(format!("channels {} not divisible by blocksize² {}", s[1], b * b));
            }
            (ins[0].dtype, vec![s[0], s[1] / (b * b), s[2] * b, s[3] * b])
        }
        OpKind::Dropout => {
            let ratio = node.attr_float("ratio").unwrap_or(0.5);
            if !(0.0..1.0).contains(&ratio) {
                return Err(format!("dropout ratio {ratio} outside [0, 1)"));
            }
            (ins[0].dtype, ins[0].shape.clone())
        }
        OpKind::Cast => {
            if ins[0].dtype == DType::Bool {
                return Err("Cast supports float32 and int64 inputs only".into());
            }
            let to = node
                .attr_str("to")
                .and_then(DType::parse)
                .ok_or("invalid Cast target")?;
            (to, ins[0].shape.clone())
        }
    };
    Ok(vec![out])
}

/// Custom ops are opaque: every output takes the `out_shape` attribute when
/// present, otherwise the spec of the first input.
fn infer_custom(node: &Node, ins: &[&TensorSpec]) -> Result<Vec<Inferred>, String> {
    let dtype = ins.first().map_or(DType::Float32, |s| s.dtype);
    let shape = match node.attr_ints("out_shape") {
        Some(dims) => to_dims(dims, "out_shape")?,
        None => ins
            .first()
            .map(|s| s.shape.clone())
            .ok_or("custom op without inputs needs an `out_shape` attribute")?,
    };
    Ok(node.outputs.iter().map(|_| (dtype, shape.clone())).collect())
}

fn require_f32(ins: &[&TensorSpec]) -> Result<(), String> {
    match ins.iter().find(|s| s.dtype != DType::Float32) {
        Some(s) => Err(format!("operand '{}' is {}, expected float32", s.name, s.dtype)),
        None => Ok(()),
    }
}

fn positive(v: i64, what: &str) -> Result<usize, String> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        Err(format!("{what} must be positive, got {v}"))
    }
}

fn to_dims(v: &[i64], what: &str) -> Result<Vec<usize>, String> {
    v.iter().map(|&d| positive(d, what)).collect()
}

fn rank4<'a>(s: &'a TensorSpec, what: &str) -> Result<&'a [usize], String> {
    if s.shape.len() != 4 {
        return Err(format!("{what} '{}' must be rank 4, got {:?}", s.name, s.shape));
    }
    Ok(&s.shape)
}

pub(crate) fn normalize_axis(axis: i64, rank: usize) -> Result<usize, String> {
    let r = rank as i64;
    if axis < -r || axis >= r {
        return Err(format!("axis {axis} out of range for rank {rank}"));
    }
    Ok(if axis < 0 { (axis + r) as usize } else { axis as usize })
}

pub(crate) fn permutation(perm: &[i64], rank: usize) -> Result<Vec<usize>, String> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(format!("perm {perm:?} does not match rank {rank}"));
    }
    perm.iter()
        .map(|&p| {
            let p = usize::try_from(p)
                .ok()
                .filter(|&p| p < rank && !seen[p])
                .ok_or_else(|| format!("perm {perm:?} is not a permutation of 0..{rank}"))?;
            seen[p] = true;
            Ok(p)
        })
        .collect()
}

/// Shape of an elementwise result. Operands must have equal shapes, or one of
/// them must match the result while the other holds a single element or
/// right-aligns against it with every dimension 1 or equal (e.g. `[C,1,1]`
/// against `[N,C,H,W]`).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    fn fits_into(small: &[usize], big: &[usize]) -> bool {
        numel(small) == 1
            || (small.len() <= big.len()
                && small
                    .iter()
                    .rev()
                    .zip(big.iter().rev())
                    .all(|(&s, &g)| s == 1 || s == g))
    }
    if a == b || fits_into(b, a) {
        Some(a.to_vec())
    } else if fits_into(a, b) {
        Some(b.to_vec())
    } else {
        None
    }
}

fn concat_shape(node: &Node, ins: &[&TensorSpec]) -> Result<Vec<usize>, String> {
    let first = ins[0];
    let axis = normalize_axis(node.attr_int("axis").unwrap_or(0), first.shape.len())?;
    let mut out = first.shape.clone();
    for s in &ins[1..] {
        if s.dtype != first.dtype {
            return Err(format!("cannot concat {} with {}", first.dtype, s.dtype));
        }
        let compatible = s.shape.len() == first.shape.len()
            && s.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(format!(
                "cannot concat {:?} with {:?} along axis {axis}",
                first.shape, s.shape
            ));
        }
        out[axis] += s.shape[axis];
    }
    Ok(out)
}

/// Per-dimension `[start, end)` ranges selected by a Slice node.
pub(crate) fn slice_ranges(node: &Node, shape: &[usize]) -> Result<Vec<(usize, usize)>, String> {
    let starts = node.attr_ints("starts").unwrap_or_default();
    let ends = node.attr_ints("ends").unwrap_or_default();
    let default_axes: Vec<i64> = (0..starts.len() as i64).collect();
    let axes = node.attr_ints("axes").unwrap_or(&default_axes);
    if starts.len() != ends.len() || starts.len() != axes.len() {
        return Err("starts, ends and axes must have equal lengths".into());
    }
    let mut ranges: Vec<(usize, usize)> = shape.iter().map(|&d| (0, d)).collect();
    let mut touched = vec![false; shape.len()];
    for ((&s, &e), &a) in starts.iter().zip(ends).zip(axes) {
        let axis = normalize_axis(a, shape.len())?;
        if std::mem::replace(&mut touched[axis], true) {
            return Err(format!("axis {axis} sliced twice"));
        }
        let dim = shape[axis] as i64;
        let clamp = |v: i64| (if v < 0 { v + dim } else { v }).clamp(0, dim) as usize;
        let (start, end) = (clamp(s), clamp(e));
        if end <= start {
            return Err(format!("empty slice [{s}, {e}) on axis {axis} of size {dim}"));
        }
        ranges[axis] = (start, end);
    }
    Ok(ranges)
}

/// Geometry shared by Conv2D and ConvTranspose2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn common(node: &Node, ins: &[&TensorSpec]) -> Result<(usize, usize), String> {
        require_f32(ins)?;
        let stride = positive(node.attr_int("stride").unwrap_or(1), "stride")?;
        let padding = node.attr_int("padding").unwrap_or(0);
        if padding < 0 {
            return Err(format!("padding must be non-negative, got {padding}"));
        }
        Ok((stride, padding as usize))
    }

    fn check_bias(ins: &[&TensorSpec], out_channels: usize) -> Result<(), String> {
        match ins.get(2) {
            Some(b) if b.shape != [out_channels] => Err(format!("bias shape {:?} must be [{out_channels}]", b.shape)),
            _ => Ok(()),
        }
    }

    /// Weights `[Cout, Cin, kH, kW]`; output `floor((in + 2p - k) / s) + 1`.
    pub fn for_conv(node: &Node, ins: &[&TensorSpec]) -> Result<Self, String> {
        let (stride, padding) = Self::common(node, ins)?;
        let x = rank4(ins[0], "input")?;
        let w = rank4(ins[1], "weight")?;
        if w[1] != x[1] {
            return Err(format!("weight expects {} input channels, input has {}", w[1], x[1]));
        }
        Self::check_bias(ins, w[0])?;
        let out = |size: usize, k: usize| -> Result<usize, String> {
            let padded = size + 2 * padding;
            if padded < k {
                return Err(format!("kernel {k} larger than padded input {padded}"));
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(ConvGeometry {
            batch: x[0],
            in_channels: x[1],
            in_h: x[2],
            in_w: x[3],
            out_channels: w[0],
            kernel_h: w[2],
            kernel_w: w[3],
            stride,
            padding,
            out_h: out(x[2], w[2])?,
            out_w: out(x[3], w[3])?,
        })
    }

    /// Weights `[Cin, Cout, kH, kW]`; output `(in - 1) * s - 2p + k`.
    pub fn for_conv_transpose(node: &Node, ins: &[&TensorSpec]) -> Result<Self, String> {
        let (stride, padding) = Self::common(node, ins)?;
        let x = rank4(ins[0], "input")?;
        let w = rank4(ins[1], "weight")?;
        if w[0] != x[1] {
            return Err(format!("weight expects {} input channels, input has {}", w[0], x[1]));
        }
        Self::check_bias(ins, w[1])?;
        let out = |size: usize, k: usize| -> Result<usize, String> {
            let full = (size - 1) * stride + k;
            if full <= 2 * padding {
                return Err(format!("padding {padding} consumes the whole output"));
            }
            Ok(full - 2 * padding)
        };
        Ok(ConvGeometry {
            batch: x[0],
            in_channels: x[1],
            in_h: x[2],
            in_w: x[3],
            out_channels: w[1],
            kernel_h: w[2],
            kernel_w: w[3],
            stride,
            padding,
            out_h: out(x[2], w[2])?,
            out_w: out(x[3], w[3])?,
        })
    }

    /// Multiply-accumulates for one forward pass.
    pub fn macs(&self, transposed: bool) -> u64 {
        let k = (self.kernel_h * self.kernel_w) as u64;
        let per_batch = if transposed {
            // every input pixel scatters a full kernel into every output channel
            (self.in_channels * self.in_h * self.in_w * self.out_channels) as u64 * k
        } else {
            (self.out_channels * self.out_h * self.out_w * self.in_channels) as u64 * k
        };
        self.batch as u64 * per_batch
    }
}
