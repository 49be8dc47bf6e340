use std::collections::HashMap;

use super::convtranspose::{self, ConvTransposeMode};
use super::{NameGen, RewriteError};
use crate::analyzer::Scenario;
use crate::ir::{infer_shapes, is_constant, AttrValue, Graph, GraphParts, Initializer, Node, OpKind, Producer};
use crate::tensor::{DType, TensorData};

/// A local graph rewrite anchored at one node.
///
/// `rewrite` must keep the anchor's output value names so that downstream
/// consumers need no change.
pub trait RewriteRule: Send + Sync {
    fn id(&self) -> &'static str;
    fn scenario(&self) -> Scenario;
    /// True for rules beyond the single substitution shown in the reference
    /// material (same principle, more ops).
    fn is_extension(&self) -> bool;
    fn retraining_required(&self) -> bool;
    /// `Err(reason)` when the rule does not apply.
    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String>;
    /// Op types the rewrite introduces at `node`.
    fn replacement_ops(&self, g: &Graph, node: &Node) -> Vec<&'static str>;
    fn rewrite(&self, g: &Graph, node: &Node, names: &mut NameGen) -> Result<GraphParts, RewriteError>;
}

/// Ordered rule set. Earlier rules win when several match.
pub struct RuleRegistry {
    rules: Vec<Box<dyn RewriteRule>>,
}

impl RuleRegistry {
    pub fn empty() -> Self {
        RuleRegistry { rules: Vec::new() }
    }

    pub fn shipped() -> Self {
        let mut r = Self::empty();
        r.push(SubConstToAdd);
        r.push(SubToAddNeg);
        r.push(DropoutDrop);
        r.push(CastNoopDrop);
        r.push(ConvTransposeExact);
        r.push(ConvTransposeStructural);
        r
    }

    pub fn push(&mut self, rule: impl RewriteRule + 'static) {
        self.rules.push(Box::new(rule));
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn RewriteRule> {
        self.rules.iter().map(|r| r.as_ref())
    }

    pub fn get(&self, id: &str) -> Option<&dyn RewriteRule> {
        self.iter().find(|r| r.id() == id)
    }
}

impl Default for RuleRegistry {
    fn default() -> Self {
        Self::shipped()
    }
}

fn expect_op(node: &Node, kind: OpKind) -> Result<(), String> {
    if node.is(kind) {
        Ok(())
    } else {
        Err(format!("expected {kind}, found {}", node.op_type))
    }
}

fn replace_node(g: &Graph, id: &str, with: Vec<Node>) -> GraphParts {
    let mut parts = g.to_parts();
    let at = parts.nodes.iter().position(|n| n.id == id).expect("anchor node exists");
    parts.nodes.splice(at..=at, with);
    parts
}

fn float_input(g: &Graph, name: &str) -> Result<(), String> {
    let shapes = infer_shapes(g).map_err(|e| e.to_string())?;
    match shapes.get(name) {
        Some(s) if s.dtype == DType::Float32 => Ok(()),
        Some(s) => Err(format!("'{name}' is {}, not float32", s.dtype)),
        None => Err(format!("no shape for '{name}'")),
    }
}

/// `Sub(x, c)` with constant `c` becomes `Add(x, -c)`.
pub struct SubConstToAdd;

impl RewriteRule for SubConstToAdd {
    fn id(&self) -> &'static str {
        "sub_const_to_add"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S1Substitute
    }
    fn is_extension(&self) -> bool {
        false
    }
    fn retraining_required(&self) -> bool {
        false
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        expect_op(node, OpKind::Sub)?;
        let c = is_constant(g, &node.inputs[1])
            .ok_or_else(|| format!("second operand '{}' is not constant", node.inputs[1]))?;
        if c.spec.dtype != DType::Float32 {
            return Err("constant operand is not float32".into());
        }
        Ok(())
    }

    fn replacement_ops(&self, _: &Graph, _: &Node) -> Vec<&'static str> {
        vec!["Add"]
    }

    fn rewrite(&self, g: &Graph, node: &Node, names: &mut NameGen) -> Result<GraphParts, RewriteError> {
        let c = is_constant(g, &node.inputs[1]).expect("checked by matcher");
        let TensorData::Float32(values) = &c.data else {
            unreachable!("checked by matcher")
        };
        let neg_name = names.fresh(c.name())?;
        let neg = Initializer::f32(&neg_name, c.spec.shape.clone(), values.iter().map(|v| -v).collect());
        let add = Node::new(
            names.fresh(&node.id)?,
            "Add",
            [node.inputs[0].clone(), neg_name],
            node.outputs.clone(),
        );
        let mut parts = replace_node(g, &node.id, vec![add]);
        parts.initializers.push(neg);
        Ok(parts)
    }
}

/// `Sub(x, y)` becomes `Add(x, Neg(y))`.
pub struct SubToAddNeg;

impl RewriteRule for SubToAddNeg {
    fn id(&self) -> &'static str {
        "sub_to_add_neg"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S1Substitute
    }
    fn is_extension(&self) -> bool {
        true
    }
    fn retraining_required(&self) -> bool {
        false
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        expect_op(node, OpKind::Sub)?;
        float_input(g, &node.inputs[1])
    }

    fn replacement_ops(&self, _: &Graph, _: &Node) -> Vec<&'static str> {
        vec!["Neg", "Add"]
    }

    fn rewrite(&self, g: &Graph, node: &Node, names: &mut NameGen) -> Result<GraphParts, RewriteError> {
        let negated = names.fresh(&node.inputs[1])?;
        let neg = Node::new(
            names.fresh(&node.id)?,
            "Neg",
            [node.inputs[1].clone()],
            [negated.clone()],
        );
        let add = Node::new(
            names.fresh(&node.id)?,
            "Add",
            [node.inputs[0].clone(), negated],
            node.outputs.clone(),
        );
        Ok(replace_node(g, &node.id, vec![neg, add]))
    }
}

/// How an identity node can be removed, if at all.
enum Bypass {
    /// Consumers read the input instead.
    Rewire,
    /// The producer of the input writes the output name directly.
    Rename,
}

fn bypass(g: &Graph, node: &Node) -> Result<Bypass, String> {
    let (input, output) = (&node.inputs[0], &node.outputs[0]);
    if !g.is_output(output) {
        return Ok(Bypass::Rewire);
    }
    match g.producer(input) {
        Some(Producer::Node(..)) if !g.is_output(input) => Ok(Bypass::Rename),
        _ => Err(format!(
            "'{output}' is a graph output and '{input}' cannot take its name"
        )),
    }
}

fn drop_identity(g: &Graph, node: &Node) -> GraphParts {
    let (input, output) = (node.inputs[0].clone(), node.outputs[0].clone());
    let mut parts = replace_node(g, &node.id, vec![]);
    let renames: HashMap<String, String> = match bypass(g, node).expect("checked by matcher") {
        Bypass::Rewire => HashMap::from([(output, input)]),
        Bypass::Rename => HashMap::from([(input, output)]),
    };
    for n in &mut parts.nodes {
        for v in n.inputs.iter_mut().chain(n.outputs.iter_mut()) {
            if let Some(to) = renames.get(v) {
                *v = to.clone();
            }
        }
    }
    parts
}

/// Dropout is the identity at inference time.
pub struct DropoutDrop;

impl RewriteRule for DropoutDrop {
    fn id(&self) -> &'static str {
        "dropout_drop"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S1Substitute
    }
    fn is_extension(&self) -> bool {
        true
    }
    fn retraining_required(&self) -> bool {
        false
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        expect_op(node, OpKind::Dropout)?;
        bypass(g, node).map(|_| ())
    }

    fn replacement_ops(&self, _: &Graph, _: &Node) -> Vec<&'static str> {
        vec![]
    }

    fn rewrite(&self, g: &Graph, node: &Node, _: &mut NameGen) -> Result<GraphParts, RewriteError> {
        Ok(drop_identity(g, node))
    }
}

/// A float32 to float32 Cast is the identity.
pub struct CastNoopDrop;

impl RewriteRule for CastNoopDrop {
    fn id(&self) -> &'static str {
        "cast_noop_drop"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S1Substitute
    }
    fn is_extension(&self) -> bool {
        true
    }
    fn retraining_required(&self) -> bool {
        false
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        expect_op(node, OpKind::Cast)?;
        if node.attr_str("to") != Some("float32") {
            return Err("target dtype is not float32".into());
        }
        float_input(g, &node.inputs[0])?;
        bypass(g, node).map(|_| ())
    }

    fn replacement_ops(&self, _: &Graph, _: &Node) -> Vec<&'static str> {
        vec![]
    }

    fn rewrite(&self, g: &Graph, node: &Node, _: &mut NameGen) -> Result<GraphParts, RewriteError> {
        Ok(drop_identity(g, node))
    }
}

/// Non-overlapping transposed convolution as a 1x1 convolution plus a
/// pixel shuffle. Numerically exact.
pub struct ConvTransposeExact;

impl RewriteRule for ConvTransposeExact {
    fn id(&self) -> &'static str {
        "convtranspose_exact_nonoverlap"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S2RetrainRewrite
    }
    fn is_extension(&self) -> bool {
        true
    }
    fn retraining_required(&self) -> bool {
        false
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        convtranspose::check(g, node, ConvTransposeMode::ExactNonoverlap).map(|_| ())
    }

    fn replacement_ops(&self, g: &Graph, node: &Node) -> Vec<&'static str> {
        match convtranspose::check(g, node, ConvTransposeMode::ExactNonoverlap) {
            Ok(geo) if geo.stride == 1 => vec!["Conv2D"],
            _ => vec!["Conv2D", "Reshape", "Transpose"],
        }
    }

    fn rewrite(&self, g: &Graph, node: &Node, names: &mut NameGen) -> Result<GraphParts, RewriteError> {
        convtranspose::rewrite(g, node, ConvTransposeMode::ExactNonoverlap, names)
    }
}

/// Any transposed convolution as convolution plus pixel shuffle with fresh
/// (zero) weights. Shapes match; the weights must be retrained.
pub struct ConvTransposeStructural;

impl RewriteRule for ConvTransposeStructural {
    fn id(&self) -> &'static str {
        "convtranspose_structural"
    }
    fn scenario(&self) -> Scenario {
        Scenario::S2RetrainRewrite
    }
    fn is_extension(&self) -> bool {
        false
    }
    fn retraining_required(&self) -> bool {
        true
    }

    fn matches(&self, g: &Graph, node: &Node) -> Result<(), String> {
        convtranspose::check(g, node, ConvTransposeMode::Structural).map(|_| ())
    }

    fn replacement_ops(&self, _: &Graph, _: &Node) -> Vec<&'static str> {
        vec!["Conv2D", "Reshape", "Transpose"]
    }

    fn rewrite(&self, g: &Graph, node: &Node, names: &mut NameGen) -> Result<GraphParts, RewriteError> {
        convtranspose::rewrite(g, node, ConvTransposeMode::Structural, names)
    }
}

pub(crate) fn ints(v: &[usize]) -> AttrValue {
    AttrValue::Ints(v.iter().map(|&x| x as i64).collect())
}
