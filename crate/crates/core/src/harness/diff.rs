use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::interpreter::{run_graph, TensorMap};
use crate::ir::{Graph, TensorSpec};
use crate::rewriter::{defuse, SplitArtifacts};
use crate::tensor::{DType, TensorValue};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDiff {
    /// Worst case over all trials; infinite on a shape or dtype mismatch.
    pub max_abs_diff: f64,
    pub name: String,
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub outputs: Vec<OutputDiff>,
    pub pass: bool,
    pub seed: u64,
    pub tolerance: f64,
    pub trials: usize,
}

impl DiffReport {
    pub fn max_abs_diff(&self) -> f64 {
        self.outputs.iter().map(|o| o.max_abs_diff).fold(0.0, f64::max)
    }
}

/// Inputs for one trial. Each trial draws from its own ChaCha stream, so
/// trial `t` is the same whether or not other trials ran.
pub fn random_inputs(specs: &[TensorSpec], seed: u64, trial: u64) -> TensorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut sorted: Vec<&TensorSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    sorted
        .into_iter()
        .map(|s| {
            let n = s.numel();
            let v = match s.dtype {
                DType::Float32 => TensorValue::f32(
                    s.shape.clone(),
                    (0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect(),
                ),
                DType::Int64 => {
                    TensorValue::i64(s.shape.clone(), (0..n).map(|_| rng.random_range(-1i64..=1)).collect())
                }
                DType::Bool => TensorValue::from_data(
                    s.shape.clone(),
                    crate::tensor::TensorData::Bool((0..n).map(|_| rng.random_bool(0.5)).collect()),
                ),
            }
            .expect("length matches shape");
            (s.name.clone(), v)
        })
        .collect()
}

fn value_diff(a: &TensorValue, b: &TensorValue) -> f64 {
    if a.dtype() != b.dtype() || a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| {
            if x == &y || (x.is_nan() && y.is_nan()) {
                0.0
            } else {
                let d = (x - y).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            }
        })
        .fold(0.0, f64::max)
}

fn sorted_specs(specs: &[TensorSpec]) -> Vec<TensorSpec> {
    let mut v = specs.to_vec();
    v.sort_by(|a, b| a.name.cmp(&b.name));
    v
}

fn check_signature(
    a_in: &[TensorSpec],
    a_out: &[String],
    b_in: &[TensorSpec],
    b_out: &[String],
) -> Result<(), HarnessError> {
    if sorted_specs(a_in) != sorted_specs(b_in) {
        return Err(HarnessError::Signature(format!(
            "inputs differ: {} vs {}",
            describe(a_in),
            describe(b_in)
        )));
    }
    let (mut ao, mut bo) = (a_out.to_vec(), b_out.to_vec());
    ao.sort();
    bo.sort();
    if ao != bo {
        return Err(HarnessError::Signature(format!("outputs differ: {ao:?} vs {bo:?}")));
    }
    Ok(())
}

fn describe(specs: &[TensorSpec]) -> String {
    let parts: Vec<String> = sorted_specs(specs)
        .iter()
        .map(|s| format!("{}:{}{:?}", s.name, s.dtype, s.shape))
        .collect();
    format!("[{}]", parts.join(", "))
}

fn diff_runs(
    inputs: &[TensorSpec],
    outputs: &[String],
    trials: usize,
    tolerance: f64,
    seed: u64,
    run_a: impl Fn(&TensorMap) -> Result<TensorMap, HarnessError>,
    run_b: impl Fn(&TensorMap) -> Result<TensorMap, HarnessError>,
) -> Result<DiffReport, HarnessError> {
    let mut worst: BTreeMap<&str, OutputDiff> = BTreeMap::new();
    for t in 0..trials {
        let x = random_inputs(inputs, seed, t as u64);
        let (ya, yb) = (run_a(&x)?, run_b(&x)?);
        for name in outputs {
            let (va, vb) = (&ya[name], &yb[name]);
            let d = value_diff(va, vb);
            let entry = worst.entry(name).or_insert_with(|| OutputDiff {
                max_abs_diff: 0.0,
                name: name.clone(),
                shape_a: va.shape().to_vec(),
                shape_b: vb.shape().to_vec(),
            });
            entry.max_abs_diff = entry.max_abs_diff.max(d);
        }
    }
    // sorted by name, so the report does not depend on output order
    let outputs: Vec<OutputDiff> = worst.into_values().collect();
    let pass = outputs
        .iter()
        .all(|o| o.max_abs_diff <= tolerance && o.shape_a == o.shape_b);
    Ok(DiffReport {
        outputs,
        pass,
        seed,
        tolerance,
        trials,
    })
}

/// Run `a` and `b` on the same random inputs and compare every output.
pub fn diff_graphs(a: &Graph, b: &Graph, trials: usize, tolerance: f64, seed: u64) -> Result<DiffReport, HarnessError> {
    check_signature(a.inputs(), a.outputs(), b.inputs(), b.outputs())?;
    let ins = sorted_specs(a.inputs());
    diff_runs(
        &ins,
        a.outputs(),
        trials,
        tolerance,
        seed,
        |x| Ok(run_graph(a, x)?),
        |x| Ok(run_graph(b, x)?),
    )
}

/// Run the split pipeline end to end.
pub fn run_split(s: &SplitArtifacts, inputs: &TensorMap) -> Result<TensorMap, HarnessError> {
    let mut mid = run_graph(&s.prefix, inputs)?;
    if let Some(fused) = &s.fused_output_name {
        let v = mid
            .remove(fused)
            .ok_or_else(|| HarnessError::Signature(format!("prefix did not produce '{fused}'")))?;
        mid = defuse(&s.fusion_manifest, &v)?;
    }
    let post_inputs: TensorMap = s
        .postprocess
        .inputs()
        .iter()
        .map(|spec| {
            mid.remove(&spec.name)
                .map(|v| (spec.name.clone(), v))
                .ok_or_else(|| HarnessError::Signature(format!("cut tensor '{}' missing", spec.name)))
        })
        .collect::<Result<_, _>>()?;
    Ok(run_graph(&s.postprocess, &post_inputs)?)
}

/// Compare `original` against prefix, defuse and postprocess composed.
pub fn diff_split(
    original: &Graph,
    s: &SplitArtifacts,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<DiffReport, HarnessError> {
    check_signature(
        original.inputs(),
        original.outputs(),
        s.prefix.inputs(),
        s.postprocess.outputs(),
    )?;
    let ins = sorted_specs(original.inputs());
    diff_runs(
        &ins,
        original.outputs(),
        trials,
        tolerance,
        seed,
        |x| Ok(run_graph(original, x)?),
        |x| run_split(s, x),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphParts, Initializer, Node};

    fn relu_plus(bias: f32) -> Graph {
        Graph::new(GraphParts {
            name: "g".into(),
            inputs: vec![TensorSpec::f32("x", vec![2, 3])],
            outputs: vec!["y".into()],
            initializers: vec![Initializer::f32("b", vec![1], vec![bias])],
            nodes: vec![
                Node::new("r", "Relu", ["x"], ["h"]),
                Node::new("a", "Add", ["h", "b"], ["y"]),
            ],
        })
        .unwrap()
    }

    #[test]
    fn self_diff_is_zero() {
        let g = relu_plus(0.0);
        let r = diff_graphs(&g, &g, 5, DEFAULT_TOLERANCE, 7).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_diff(), 0.0);
    }

    #[test]
    fn bias_shift_fails() {
        let (a, b) = (relu_plus(0.0), relu_plus(1.0));
        let r = diff_graphs(&a, &b, 5, DEFAULT_TOLERANCE, 7).unwrap();
        assert!(!r.pass);
        assert!((r.max_abs_diff() - 1.0).abs() < 1e-6);
        assert_eq!(r, diff_graphs(&b, &a, 5, DEFAULT_TOLERANCE, 7).unwrap());
    }

    #[test]
    fn signature_mismatch() {
        let a = relu_plus(0.0);
        let mut parts = a.to_parts();
        parts.inputs[0].shape = vec![3, 2];
        let b = Graph::new(parts).unwrap();
        assert!(matches!(
            diff_graphs(&a, &b, 1, 1e-6, 0),
            Err(HarnessError::Signature(_))
        ));
    }

    #[test]
    fn inputs_are_seeded_and_bounded() {
        let specs = [
            TensorSpec::f32("x", vec![64]),
            TensorSpec::new("i", DType::Int64, vec![8]),
        ];
        let a = random_inputs(&specs, 3, 1);
        assert_eq!(a, random_inputs(&specs, 3, 1));
        assert_ne!(a, random_inputs(&specs, 3, 2));
        assert!(a["x"].to_f64_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(a["i"].to_f64_vec().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
    }
}
