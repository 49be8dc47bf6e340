use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{infer_shapes, AttrValue, Graph, GraphParts, Initializer, Node, OpKind, TensorSpec};
use crate::rewriter::prune_initializers;

/// Knobs for [`gen_random_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub nodes: usize,
    /// Ops to draw from.
    pub vocabulary: Vec<OpKind>,
    /// Ops that must appear at least once (may lie outside `vocabulary`).
    pub ensure: Vec<OpKind>,
    /// Every Sub takes a constant second operand.
    pub const_sub: bool,
}

impl GenParams {
    pub fn new(nodes: usize) -> Self {
        GenParams {
            nodes,
            vocabulary: OpKind::ALL.to_vec(),
            ensure: Vec::new(),
            const_sub: false,
        }
    }
}

/// Tensors above this many elements are not produced.
const MAX_NUMEL: usize = 4096;

struct Builder {
    rng: ChaCha8Rng,
    parts: GraphParts,
    /// Float tensors available as operands, in creation order.
    pool: Vec<TensorSpec>,
    counter: usize,
    const_sub: bool,
}

impl Builder {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    fn uniform(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(-1.0f32..=1.0)).collect()
    }

    fn constant(&mut self, shape: Vec<usize>) -> String {
        let name = self.fresh("c");
        let n = shape.iter().product();
        let data = self.uniform(n);
        self.parts.initializers.push(Initializer::f32(&name, shape, data));
        name
    }

    /// A pool value satisfying `pred`, biased towards recent ones so graphs
    /// grow deep rather than wide.
    fn pick(&mut self, pred: impl Fn(&TensorSpec) -> bool) -> Option<TensorSpec> {
        let candidates: Vec<&TensorSpec> = self.pool.iter().filter(|s| pred(s)).collect();
        if candidates.is_empty() {
            return None;
        }
        let recent = candidates.len().saturating_sub(3);
        let i = if self.rng.random_bool(0.7) {
            self.rng.random_range(recent..candidates.len())
        } else {
            self.rng.random_range(0..candidates.len())
        };
        Some(candidates[i].clone())
    }

    /// Add `node` if it yields a valid, reasonably small tensor.
    fn try_push(&mut self, node: Node) -> bool {
        let out = node.outputs[0].clone();
        let mut parts = self.parts.clone();
        parts.nodes.push(node);
        parts.outputs = vec![out.clone()];
        let spec = Graph::new(parts.clone())
            .ok()
            .and_then(|g| infer_shapes(&g).ok())
            .and_then(|s| s.get(&out).cloned());
        match spec {
            Some(s) if s.numel() <= MAX_NUMEL => {
                self.parts.nodes = parts.nodes;
                self.pool.push(s);
                true
            }
            _ => {
                prune_initializers(&mut self.parts);
                false
            }
        }
    }

    fn node(&mut self, op: OpKind, inputs: Vec<String>) -> Node {
        let id = self.fresh(&op.name().to_lowercase());
        let out = self.fresh("v");
        Node::new(id, op.name(), inputs, vec![out])
    }

    fn add(&mut self, op: OpKind) -> bool {
        let Some(node) = self.build(op) else {
            prune_initializers(&mut self.parts);
            return false;
        };
        self.try_push(node)
    }

    fn build(&mut self, op: OpKind) -> Option<Node> {
        use OpKind::*;
        let rank4 = |s: &TensorSpec| s.shape.len() == 4;
        match op {
            Add | Sub | Mul => {
                let a = self.pick(|_| true)?;
                let constant_only = op == Sub && self.const_sub;
                let b = match self.rng.random_range(0..3) {
                    0 if !constant_only => {
                        let shape = a.shape.clone();
                        self.pick(|s| s.shape == shape).map(|s| s.name)?
                    }
                    1 => self.constant(vec![1]),
                    _ => self.constant(a.shape.clone()),
                };
                Some(self.node(op, vec![a.name, b]))
            }
            Relu | Neg | Flatten => {
                let a = self.pick(|_| true)?;
                Some(self.node(op, vec![a.name]))
            }
            Dropout => {
                let a = self.pick(|_| true)?;
                let mut n = self.node(op, vec![a.name]);
                if self.rng.random_bool(0.5) {
                    n = n.with_attr("ratio", AttrValue::Float(self.rng.random_range(0..9) as f64 / 10.0));
                }
                Some(n)
            }
            Cast => {
                let a = self.pick(|_| true)?;
                Some(
                    self.node(op, vec![a.name])
                        .with_attr("to", AttrValue::Str("float32".into())),
                )
            }
            Softmax => {
                let a = self.pick(|_| true)?;
                let r = a.shape.len() as i64;
                let mut n = self.node(op, vec![a.name]);
                if self.rng.random_bool(0.7) {
                    n = n.with_attr("axis", AttrValue::Int(self.rng.random_range(-r..r)));
                }
                Some(n)
            }
            Reshape => {
                let a = self.pick(|_| true)?;
                let total = a.numel();
                let divisors: Vec<usize> = (1..=total).filter(|d| total % d == 0).collect();
                let d = *divisors.choose(&mut self.rng)?;
                let target: Vec<usize> = match self.rng.random_range(0..3) {
                    0 => vec![total],
                    1 => vec![d, total / d],
                    _ => vec![1, 1, d, total / d],
                };
                Some(self.node(op, vec![a.name]).with_attr("shape", ints(&target)))
            }
            Transpose => {
                let a = self.pick(|_| true)?;
                let mut perm: Vec<usize> = (0..a.shape.len()).collect();
                perm.shuffle(&mut self.rng);
                Some(self.node(op, vec![a.name]).with_attr("perm", ints(&perm)))
            }
            Concat => {
                let a = self.pick(|s| s.numel() <= MAX_NUMEL / 2)?;
                let axis = self.rng.random_range(0..a.shape.len()) as i64;
                let b = if self.rng.random_bool(0.5) {
                    a.name.clone()
                } else {
                    self.constant(a.shape.clone())
                };
                Some(self.node(op, vec![a.name, b]).with_attr("axis", AttrValue::Int(axis)))
            }
            Slice => {
                let a = self.pick(|s| s.shape.iter().any(|&d| d >= 2))?;
                let axes: Vec<usize> = (0..a.shape.len()).filter(|&i| a.shape[i] >= 2).collect();
                let axis = *axes.choose(&mut self.rng)?;
                let dim = a.shape[axis] as i64;
                let start = self.rng.random_range(0..dim - 1);
                let end = self.rng.random_range(start + 1..=dim);
                // exercise negative indices now and then
                let end = if end == dim && self.rng.random_bool(0.3) {
                    i64::MAX
                } else {
                    end
                };
                let start = if self.rng.random_bool(0.3) { start - dim } else { start };
                Some(
                    self.node(op, vec![a.name])
                        .with_attr("starts", AttrValue::Ints(vec![start]))
                        .with_attr("ends", AttrValue::Ints(vec![end]))
                        .with_attr("axes", AttrValue::Ints(vec![axis as i64])),
                )
            }
            Conv2D => {
                let a = self.pick(rank4)?;
                let out_ch = self.rng.random_range(1..=4);
                Some(self.conv(&a, out_ch))
            }
            ConvTranspose2D => {
                let a = self.pick(|s| rank4(s) && s.shape[2] <= 8 && s.shape[3] <= 8)?;
                let (cin, cout) = (a.shape[1], self.rng.random_range(1..=3));
                let k = self.rng.random_range(1..=3);
                let stride = self.rng.random_range(1..=2);
                let padding = self.rng.random_range(0..=(k - 1).min(1));
                let w_data = self.uniform(cin * cout * k * k);
                let w = self.fresh("w");
                self.parts
                    .initializers
                    .push(Initializer::f32(&w, vec![cin, cout, k, k], w_data));
                let mut inputs = vec![a.name, w];
                if self.rng.random_bool(0.5) {
                    inputs.push(self.constant(vec![cout]));
                }
                Some(
                    self.node(op, inputs)
                        .with_attr("stride", AttrValue::Int(stride as i64))
                        .with_attr("padding", AttrValue::Int(padding as i64)),
                )
            }
            DepthToSpace => {
                let a = match self.pick(|s| rank4(s) && s.shape[1] % 4 == 0) {
                    Some(a) => a,
                    None => {
                        // make room with a 1x1 conv to 4 channels
                        let src = self.pick(rank4)?;
                        let conv = self.conv_1x1(&src, 4);
                        if !self.try_push(conv) {
                            return None;
                        }
                        self.pool.last().cloned()?
                    }
                };
                Some(self.node(op, vec![a.name]).with_attr("blocksize", AttrValue::Int(2)))
            }
        }
    }

    fn conv_1x1(&mut self, a: &TensorSpec, out_ch: usize) -> Node {
        let data = self.uniform(out_ch * a.shape[1]);
        let w = self.fresh("w");
        self.parts
            .initializers
            .push(Initializer::f32(&w, vec![out_ch, a.shape[1], 1, 1], data));
        self.node(OpKind::Conv2D, vec![a.name.clone(), w])
    }

    fn conv(&mut self, a: &TensorSpec, out_ch: usize) -> Node {
        let (cin, h, w) = (a.shape[1], a.shape[2], a.shape[3]);
        let padding = self.rng.random_range(0..=1);
        let k_max = 3.min(h + 2 * padding).min(w + 2 * padding);
        let k = self.rng.random_range(1..=k_max);
        let stride = self.rng.random_range(1..=2);
        let data = self.uniform(out_ch * cin * k * k);
        let wname = self.fresh("w");
        self.parts
            .initializers
            .push(Initializer::f32(&wname, vec![out_ch, cin, k, k], data));
        let mut inputs = vec![a.name.clone(), wname];
        if self.rng.random_bool(0.5) {
            inputs.push(self.constant(vec![out_ch]));
        }
        self.node(OpKind::Conv2D, inputs)
            .with_attr("stride", AttrValue::Int(stride as i64))
            .with_attr("padding", AttrValue::Int(padding as i64))
    }
}

fn ints(v: &[usize]) -> AttrValue {
    AttrValue::Ints(v.iter().map(|&x| x as i64).collect())
}

/// A random valid graph with a rank-4 float input and about `params.nodes`
/// nodes. Same seed and params give the same graph.
pub fn gen_random_graph(seed: u64, params: &GenParams) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![
        1,
        rng.random_range(1..=3),
        rng.random_range(2..=6),
        rng.random_range(2..=6),
    ];
    let mut inputs = vec![TensorSpec::f32("x", shape.clone())];
    if rng.random_bool(0.3) {
        inputs.push(TensorSpec::f32("x2", shape));
    }
    let mut b = Builder {
        rng,
        parts: GraphParts {
            name: format!("random_{seed}"),
            inputs: inputs.clone(),
            ..Default::default()
        },
        pool: inputs,
        counter: 0,
        const_sub: params.const_sub,
    };

    let mut plan: Vec<Option<OpKind>> = vec![None; params.nodes.max(params.ensure.len())];
    let mut slots: Vec<usize> = (0..plan.len()).collect();
    slots.shuffle(&mut b.rng);
    for (slot, op) in slots.into_iter().zip(&params.ensure) {
        plan[slot] = Some(*op);
    }
    for wanted in plan {
        let op = wanted.unwrap_or_else(|| *params.vocabulary.choose(&mut b.rng).unwrap_or(&OpKind::Relu));
        // an op that needs missing operands gets a few retries before giving way
        let placed = (0..4).any(|_| b.add(op));
        if !placed {
            b.add(OpKind::Relu);
        }
    }

    let consumed: HashSet<&str> = b
        .parts
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .collect();
    let mut outputs: Vec<String> = b
        .parts
        .nodes
        .iter()
        .map(|n| n.outputs[0].clone())
        .filter(|o| !consumed.contains(o.as_str()))
        .collect();
    if outputs.is_empty() {
        outputs.push(b.parts.inputs[0].name.clone());
    }
    b.parts.outputs = outputs;
    Graph::new(b.parts).expect("generator only emits valid graphs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_determinism() {
        let p = GenParams::new(5);
        assert_eq!(gen_random_graph(0, &p), gen_random_graph(0, &p));
        assert_ne!(gen_random_graph(0, &p), gen_random_graph(1, &p));
    }

    #[test]
    fn ensured_ops_appear() {
        let p = GenParams {
            nodes: 3,
            vocabulary: vec![OpKind::Relu],
            ensure: vec![OpKind::Sub, OpKind::DepthToSpace],
            const_sub: true,
        };
        for seed in 0..20 {
            let g = gen_random_graph(seed, &p);
            assert!(g.nodes().iter().any(|n| n.is(OpKind::Sub)), "seed {seed}");
            assert!(g.nodes().iter().any(|n| n.is(OpKind::DepthToSpace)), "seed {seed}");
            for n in g.nodes().iter().filter(|n| n.is(OpKind::Sub)) {
                assert!(g.initializer(&n.inputs[1]).is_some());
            }
        }
    }
}
