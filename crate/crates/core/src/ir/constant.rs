use std::collections::{BTreeMap, BTreeSet};

use super::{is_custom, Graph, GraphParts, Initializer, Producer};
use crate::interpreter::run_graph;

/// If `value` is computable from initializers alone, its folded contents.
///
/// Initializers are returned as-is; values produced by nodes are folded by
/// running the producing subgraph through the reference interpreter. Graph
/// inputs and anything downstream of a custom op are not constant.
pub fn is_constant(g: &Graph, value: &str) -> Option<Initializer> {
    match g.producer(value)? {
        Producer::Initializer(i) => return Some(g.initializers()[i].clone()),
        Producer::Input(_) => return None,
        Producer::Node(..) => {}
    }

    let mut nodes: BTreeSet<usize> = BTreeSet::new();
    let mut inits: BTreeSet<usize> = BTreeSet::new();
    let mut stack = vec![value.to_string()];
    while let Some(v) = stack.pop() {
        match g.producer(&v)? {
            Producer::Input(_) => return None,
            Producer::Initializer(i) => {
                inits.insert(i);
            }
            Producer::Node(i, _) => {
                let node = &g.nodes()[i];
                if is_custom(&node.op_type) {
                    return None;
                }
                if nodes.insert(i) {
                    stack.extend(node.inputs.iter().cloned());
                }
            }
        }
    }

    let sub = Graph::new(GraphParts {
        name: format!("fold:{value}"),
        inputs: vec![],
        outputs: vec![value.to_string()],
        initializers: inits.iter().map(|&i| g.initializers()[i].clone()).collect(),
        nodes: nodes.iter().map(|&i| g.nodes()[i].clone()).collect(),
    })
    .ok()?;
    let mut out = run_graph(&sub, &BTreeMap::new()).ok()?;
    let folded = out.remove(value)?;
    Some(Initializer::from_value(value, &folded))
}
