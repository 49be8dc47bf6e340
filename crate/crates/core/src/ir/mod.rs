//! Computation-graph data model.
//!
//! A [`Graph`] is immutable once built: [`Graph::new`] validates the structural
//! invariants (single assignment, no dangling inputs, acyclicity, attribute
//! schemas) and caches a deterministic topological order. Transformations go
//! through [`GraphParts`] and back through [`Graph::new`], so every graph in
//! circulation has passed validation.

mod constant;
mod format;
pub mod ops;
mod shape;
mod topo;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{numel, DType, TensorData, TensorValue};

pub use constant::is_constant;
pub use format::{parse_model, serialize_model, FORMAT_VERSION};
pub use ops::{is_custom, is_known_op, AttrKind, OpKind};
pub(crate) use shape::{broadcast_shape, normalize_axis, permutation, slice_ranges};
pub use shape::{infer_shapes, ConvGeometry, ShapeMap};
pub use topo::toposort;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("validation error at {location}: {reason}")]
    Validation { location: String, reason: String },
    #[error("shape error at node '{node}': {reason}")]
    Shape { node: String, reason: String },
}

impl IrError {
    fn at_node(id: &str, reason: impl Into<String>) -> Self {
        IrError::Validation {
            location: format!("node '{id}'"),
            reason: reason.into(),
        }
    }

    fn at(location: impl Into<String>, reason: impl Into<String>) -> Self {
        IrError::Validation {
            location: location.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSpec {
    // alphabetical: the serialized key order is canonical
    pub dtype: DType,
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>) -> Self {
        TensorSpec {
            name: name.into(),
            dtype,
            shape,
        }
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>) -> Self {
        TensorSpec::new(name, DType::Float32, shape)
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }
}

/// A named constant (weights, biases, folded values).
#[derive(Debug, Clone, PartialEq)]
pub struct Initializer {
    pub spec: TensorSpec,
    pub data: TensorData,
}

impl Initializer {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Initializer {
            spec: TensorSpec::f32(name, shape),
            data: TensorData::Float32(data),
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn to_value(&self) -> TensorValue {
        TensorValue::from_data(self.spec.shape.clone(), self.data.clone())
            .expect("initializer length validated at graph construction")
    }

    pub fn from_value(name: impl Into<String>, value: &TensorValue) -> Self {
        Initializer {
            spec: TensorSpec::new(name, value.dtype(), value.shape().to_vec()),
            data: value.to_data(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Str(String),
}

impl AttrValue {
    fn kind_matches(&self, kind: AttrKind) -> bool {
        matches!(
            (self, kind),
            (AttrValue::Int(_), AttrKind::Int)
                | (AttrValue::Int(_), AttrKind::Float)
                | (AttrValue::Float(_), AttrKind::Float)
                | (AttrValue::Ints(_), AttrKind::Ints)
                | (AttrValue::Str(_), AttrKind::Str)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op_type: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attrs: BTreeMap<String, AttrValue>,
}

impl Node {
    pub fn new<S: Into<String>>(
        id: impl Into<String>,
        op_type: impl Into<String>,
        inputs: impl IntoIterator<Item = S>,
        outputs: impl IntoIterator<Item = S>,
    ) -> Self {
        Node {
            id: id.into(),
            op_type: op_type.into(),
            inputs: inputs.into_iter().map(Into::into).collect(),
            outputs: outputs.into_iter().map(Into::into).collect(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: &str, value: AttrValue) -> Self {
        self.attrs.insert(name.to_string(), value);
        self
    }

    pub fn kind(&self) -> Option<OpKind> {
        OpKind::from_name(&self.op_type)
    }

    pub fn is(&self, kind: OpKind) -> bool {
        self.kind() == Some(kind)
    }

    pub fn attr_int(&self, name: &str) -> Option<i64> {
        match self.attrs.get(name) {
            Some(AttrValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_float(&self, name: &str) -> Option<f64> {
        match self.attrs.get(name) {
            Some(AttrValue::Float(v)) => Some(*v),
            Some(AttrValue::Int(v)) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn attr_ints(&self, name: &str) -> Option<&[i64]> {
        match self.attrs.get(name) {
            Some(AttrValue::Ints(v)) => Some(v),
            _ => None,
        }
    }

    pub fn attr_str(&self, name: &str) -> Option<&str> {
        match self.attrs.get(name) {
            Some(AttrValue::Str(v)) => Some(v),
            _ => None,
        }
    }
}

/// Where a value name comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    Input(usize),
    Initializer(usize),
    /// Node index and output slot.
    Node(usize, usize),
}

/// The unvalidated, freely editable form of a [`Graph`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphParts {
    pub name: String,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    pub initializers: Vec<Initializer>,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    parts: GraphParts,
    producers: HashMap<String, Producer>,
    order: Vec<usize>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.parts == other.parts
    }
}

impl Graph {
    /// Validate `parts` and build a graph.
    pub fn new(parts: GraphParts) -> Result<Graph, IrError> {
        let producers = validate(&parts)?;
        let order = topo::order_nodes(&parts.nodes, &producers)?;
        Ok(Graph {
            parts,
            producers,
            order,
        })
    }

    pub fn name(&self) -> &str {
        &self.parts.name
    }

    pub fn inputs(&self) -> &[TensorSpec] {
        &self.parts.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.parts.outputs
    }

    pub fn initializers(&self) -> &[Initializer] {
        &self.parts.initializers
    }

    pub fn nodes(&self) -> &[Node] {
        &self.parts.nodes
    }

    pub fn parts(&self) -> &GraphParts {
        &self.parts
    }

    pub fn to_parts(&self) -> GraphParts {
        self.parts.clone()
    }

    pub fn into_parts(self) -> GraphParts {
        self.parts
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.parts.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.parts.nodes.iter().position(|n| n.id == id)
    }

    pub fn initializer(&self, name: &str) -> Option<&Initializer> {
        match self.producers.get(name)? {
            Producer::Initializer(i) => Some(&self.parts.initializers[*i]),
            _ => None,
        }
    }

    pub fn input(&self, name: &str) -> Option<&TensorSpec> {
        match self.producers.get(name)? {
            Producer::Input(i) => Some(&self.parts.inputs[*i]),
            _ => None,
        }
    }

    pub fn producer(&self, value: &str) -> Option<Producer> {
        self.producers.get(value).copied()
    }

    /// The node producing `value`, if it is not a graph input or initializer.
    pub fn producer_node(&self, value: &str) -> Option<&Node> {
        match self.producers.get(value)? {
            Producer::Node(i, _) => Some(&self.parts.nodes[*i]),
            _ => None,
        }
    }

    pub fn consumers<'a>(&'a self, value: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.parts
            .nodes
            .iter()
            .filter(move |n| n.inputs.iter().any(|i| i == value))
    }

    pub fn is_output(&self, value: &str) -> bool {
        self.parts.outputs.iter().any(|o| o == value)
    }

    /// Node indices in deterministic topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    /// Every name in the value namespace plus every node id.
    pub fn used_names(&self) -> HashSet<String> {
        let mut names: HashSet<String> = self.producers.keys().cloned().collect();
        names.extend(self.parts.nodes.iter().map(|n| n.id.clone()));
        names
    }

    /// Indices of every node reachable downstream from `roots` (inclusive).
    pub fn descendant_closure(&self, roots: &[usize]) -> HashSet<usize> {
        let mut consumers_of: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.parts.nodes.iter().enumerate() {
            for inp in &n.inputs {
                consumers_of.entry(inp.as_str()).or_default().push(i);
            }
        }
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<usize> = roots.to_vec();
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            for out in &self.parts.nodes[i].outputs {
                if let Some(cs) = consumers_of.get(out.as_str()) {
                    stack.extend(cs.iter().copied().filter(|c| !seen.contains(c)));
                }
            }
        }
        seen
    }
}

fn check_spec(spec: &TensorSpec, location: &str) -> Result<(), IrError> {
    if spec.name.is_empty() {
        return Err(IrError::at(location, "empty value name"));
    }
    if spec.shape.contains(&0) {
        return Err(IrError::at(
            location,
            format!("'{}' has a zero dimension in shape {:?}", spec.name, spec.shape),
        ));
    }
    Ok(())
}

fn validate(parts: &GraphParts) -> Result<HashMap<String, Producer>, IrError> {
    let mut producers: HashMap<String, Producer> = HashMap::new();
    let mut claim = |name: &str, p: Producer, location: &str| -> Result<(), IrError> {
        if producers.insert(name.to_string(), p).is_some() {
            return Err(IrError::at(
                location,
                format!("value '{name}' has more than one producer"),
            ));
        }
        Ok(())
    };

    for (i, spec) in parts.inputs.iter().enumerate() {
        let loc = format!("input '{}'", spec.name);
        check_spec(spec, &loc)?;
        claim(&spec.name, Producer::Input(i), &loc)?;
    }
    for (i, init) in parts.initializers.iter().enumerate() {
        let loc = format!("initializer '{}'", init.spec.name);
        check_spec(&init.spec, &loc)?;
        if init.data.dtype() != init.spec.dtype {
            return Err(IrError::at(
                &loc,
                format!("data is {} but spec declares {}", init.data.dtype(), init.spec.dtype),
            ));
        }
        if init.data.len() != init.spec.numel() {
            return Err(IrError::at(
                &loc,
                format!(
                    "data length {} does not match shape {:?}",
                    init.data.len(),
                    init.spec.shape
                ),
            ));
        }
        if let TensorData::Float32(d) = &init.data {
            if d.iter().any(|v| !v.is_finite()) {
                return Err(IrError::at(&loc, "non-finite constant"));
            }
        }
        claim(&init.spec.name, Producer::Initializer(i), &loc)?;
    }

    let mut ids: HashSet<&str> = HashSet::new();
    for (i, node) in parts.nodes.iter().enumerate() {
        if node.id.is_empty() {
            return Err(IrError::at(format!("node #{i}"), "empty node id"));
        }
        if !ids.insert(&node.id) {
            return Err(IrError::at_node(&node.id, "duplicate node id"));
        }
        validate_node_shape(node)?;
        let loc = format!("node '{}'", node.id);
        for (slot, out) in node.outputs.iter().enumerate() {
            if out.is_empty() {
                return Err(IrError::at_node(&node.id, "empty output name"));
            }
            claim(out, Producer::Node(i, slot), &loc)?;
        }
    }

    for node in &parts.nodes {
        for inp in &node.inputs {
            if inp.is_empty() {
                return Err(IrError::at_node(&node.id, "empty input name"));
            }
            if !producers.contains_key(inp) {
                return Err(IrError::at_node(
                    &node.id,
                    format!("dangling input '{inp}' has no producer"),
                ));
            }
        }
    }

    let mut seen_outputs: HashSet<&str> = HashSet::new();
    for out in &parts.outputs {
        if !producers.contains_key(out) {
            return Err(IrError::at(
                "graph outputs",
                format!("output '{out}' is never produced"),
            ));
        }
        if !seen_outputs.insert(out) {
            return Err(IrError::at("graph outputs", format!("output '{out}' is listed twice")));
        }
    }
    Ok(producers)
}

/// Op-type, arity and attribute checks local to one node.
fn validate_node_shape(node: &Node) -> Result<(), IrError> {
    let Some(kind) = node.kind() else {
        if is_custom(&node.op_type) {
            if node.outputs.is_empty() {
                return Err(IrError::at_node(&node.id, "custom op must have an output"));
            }
            return Ok(());
        }
        let hint = ops::suggest_op(&node.op_type)
            .map(|s| format!(" (did you mean '{s}'?)"))
            .unwrap_or_default();
        return Err(IrError::at_node(
            &node.id,
            format!("unknown op '{}'{hint}", node.op_type),
        ));
    };

    let (lo, hi) = kind.input_arity();
    let n = node.inputs.len();
    if n < lo || hi.is_some_and(|h| n > h) {
        return Err(IrError::at_node(
            &node.id,
            format!(
                "{kind} takes {lo}..{} inputs, got {n}",
                hi.map_or("".into(), |h| h.to_string())
            ),
        ));
    }
    if node.outputs.len() != 1 {
        return Err(IrError::at_node(
            &node.id,
            format!("{kind} produces exactly one output, got {}", node.outputs.len()),
        ));
    }

    let schema = kind.attr_schema();
    for (name, value) in &node.attrs {
        let Some(s) = schema.iter().find(|s| s.name == name) else {
            return Err(IrError::at_node(
                &node.id,
                format!("unknown attribute '{name}' for {kind}"),
            ));
        };
        if !value.kind_matches(s.kind) {
            return Err(IrError::at_node(
                &node.id,
                format!("attribute '{name}' must be {:?}", s.kind),
            ));
        }
    }
    for s in schema.iter().filter(|s| s.required) {
        if !node.attrs.contains_key(s.name) {
            return Err(IrError::at_node(
                &node.id,
                format!("missing required attribute '{}' for {kind}", s.name),
            ));
        }
    }
    if kind == OpKind::Cast {
        let to = node.attr_str("to").unwrap_or_default();
        if !matches!(DType::parse(to), Some(DType::Float32 | DType::Int64)) {
            return Err(IrError::at_node(
                &node.id,
                format!("Cast target '{to}' must be float32 or int64"),
            ));
        }
    }
    Ok(())
}
