use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::{Graph, IrError, Node, Producer};

/// Nodes of `g` in dependency order; among ready nodes the smallest id goes first.
pub fn toposort(g: &Graph) -> Vec<&Node> {
    g.topo_order().iter().map(|&i| &g.nodes()[i]).collect()
}

/// Kahn's algorithm with an id-ordered ready queue. Fails on cycles.
pub(super) fn order_nodes(nodes: &[Node], producers: &HashMap<String, Producer>) -> Result<Vec<usize>, IrError> {
    let mut indegree = vec![0usize; nodes.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for inp in &node.inputs {
            if let Some(Producer::Node(p, _)) = producers.get(inp) {
                indegree[i] += 1;
                dependents[*p].push(i);
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse((nodes[i].id.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.push(Reverse((nodes[d].id.as_str(), d)));
            }
        }
    }

    if order.len() != nodes.len() {
        let mut stuck: Vec<&str> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(i, _)| nodes[i].id.as_str())
            .collect();
        stuck.sort_unstable();
        return Err(IrError::Validation {
            location: format!("node '{}'", stuck[0]),
            reason: format!("cycle through nodes {}", stuck.join(", ")),
        });
    }
    Ok(order)
}
