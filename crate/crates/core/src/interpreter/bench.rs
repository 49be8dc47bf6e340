use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{execute, RunError, TensorMap};
use crate::ir::{infer_shapes, ConvGeometry, Graph, OpKind, TensorSpec};

/// Latency, throughput and memory figures for repeated runs of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub wall_latency_ms: Vec<f64>,
    pub throughput_inferences_per_s: f64,
    pub multiply_accumulate_count: u64,
    pub peak_live_tensor_bytes: u64,
}

/// Analytic multiply-accumulate count of one forward pass. Only convolutions
/// contribute; elementwise ops are not counted as MACs.
pub fn mac_count(g: &Graph) -> Result<u64, RunError> {
    let shapes = infer_shapes(g)?;
    let mut total = 0u64;
    for node in g.nodes() {
        let transposed = match node.kind() {
            Some(OpKind::Conv2D) => false,
            Some(OpKind::ConvTranspose2D) => true,
            _ => continue,
        };
        let ins: Vec<&TensorSpec> = node.inputs.iter().map(|n| &shapes[n]).collect();
        let geo = if transposed {
            ConvGeometry::for_conv_transpose(node, &ins)
        } else {
            ConvGeometry::for_conv(node, &ins)
        }
        .map_err(|reason| RunError::Internal {
            node: node.id.clone(),
            reason,
        })?;
        total += geo.macs(transposed);
    }
    Ok(total)
}

/// Run `g` `repetitions` times and summarize.
pub fn bench(g: &Graph, inputs: &TensorMap, repetitions: usize) -> Result<BenchReport, RunError> {
    if repetitions == 0 {
        return Err(RunError::Repetitions);
    }
    let macs = mac_count(g)?;
    let mut latencies = Vec::with_capacity(repetitions);
    let mut peak = 0usize;
    for _ in 0..repetitions {
        let start = Instant::now();
        let (_, p) = execute(g, inputs)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e3);
        peak = peak.max(p);
    }
    // sub-nanosecond totals are below the clock's resolution
    let total_s = (latencies.iter().sum::<f64>() / 1e3).max(1e-9);
    Ok(BenchReport {
        wall_latency_ms: latencies,
        throughput_inferences_per_s: repetitions as f64 / total_s,
        multiply_accumulate_count: macs,
        peak_live_tensor_bytes: peak as u64,
    })
}
