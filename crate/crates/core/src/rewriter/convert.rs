use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    apply_rule, emit_custom_manifest, rewrite_convtranspose, split_tail, ConvTransposeMode, CustomOpManifest,
    RewriteError, RuleRegistry, SplitArtifacts, DEFAULT_SOURCE_FRAMEWORK,
};
use crate::analyzer::{analyze, AnalyzeOptions, CompatibilityReport, Scenario};
use crate::ir::Graph;
use crate::profiles::CapabilityProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertOptions {
    pub analyze: AnalyzeOptions,
    /// Forces a ConvTranspose2D rewrite mode; `None` follows the analyzer's rule.
    pub convtranspose_mode: Option<ConvTransposeMode>,
    pub source_framework: String,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            analyze: AnalyzeOptions::default(),
            convtranspose_mode: None,
            source_framework: DEFAULT_SOURCE_FRAMEWORK.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub node_id: String,
    pub retraining_required: bool,
    pub rule_id: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ConvertedModel {
    Graph(Graph),
    Split(SplitArtifacts),
}

impl ConvertedModel {
    /// The part that runs on the target.
    pub fn deployable(&self) -> &Graph {
        match self {
            ConvertedModel::Graph(g) => g,
            ConvertedModel::Split(s) => &s.prefix,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionResult {
    pub model: ConvertedModel,
    pub applied: Vec<AppliedRule>,
    pub custom_ops: Vec<CustomOpManifest>,
    pub report: CompatibilityReport,
    /// Analysis of the deployable graph, without tail splitting.
    pub residual: CompatibilityReport,
}

impl ConversionResult {
    pub fn retraining_required(&self) -> bool {
        self.applied.iter().any(|a| a.retraining_required)
    }
}

/// analyze, then S1 rewrites, S2 rewrites, one tail split and S4 manifests.
pub fn convert(
    g: &Graph,
    p: &CapabilityProfile,
    rules: &RuleRegistry,
    opts: &ConvertOptions,
) -> Result<ConversionResult, RewriteError> {
    let report = analyze(g, p, rules, &opts.analyze)?;
    let mut current = g.clone();
    let mut applied = Vec::new();

    for scenario in [Scenario::S1Substitute, Scenario::S2RetrainRewrite] {
        for a in report.nodes_in(scenario) {
            let rule_id = a.rule_id.as_deref().expect("S1/S2 assignments carry a rule");
            let forced = opts
                .convtranspose_mode
                .filter(|_| scenario == Scenario::S2RetrainRewrite && rule_id.starts_with("convtranspose_"));
            let r = match forced {
                Some(mode) => rewrite_convtranspose(&current, &a.node_id, mode)?,
                None => {
                    let rule = rules.get(rule_id).expect("assigned rules come from the registry");
                    // an earlier rewrite can invalidate a match, e.g. two chained
                    // identities between a graph input and a graph output; the
                    // node then shows up in the residual report
                    let node = current
                        .node(&a.node_id)
                        .ok_or_else(|| RewriteError::NodeNotFound(a.node_id.clone()))?;
                    if rule.matches(&current, node).is_err() {
                        continue;
                    }
                    apply_rule(&current, &a.node_id, rule)?
                }
            };
            applied.push(AppliedRule {
                node_id: a.node_id.clone(),
                retraining_required: r.retraining_required,
                rule_id: r.rule_id,
                scenario,
            });
            current = r.graph;
        }
    }

    let seeds: BTreeSet<String> = report
        .nodes_in(Scenario::S3TailSplit)
        .map(|a| a.node_id.clone())
        .collect();
    let needs_fusion = p.single_output_only && current.outputs().len() > 1;
    let model = if !seeds.is_empty() || needs_fusion {
        ConvertedModel::Split(split_tail(&current, &seeds, p)?)
    } else {
        ConvertedModel::Graph(current)
    };

    let custom_ops = emit_custom_manifest(model.deployable(), &report, &opts.source_framework)?;
    // no further splitting: whatever is left unsupported stays in the prefix
    let residual_opts = AnalyzeOptions {
        tail_fraction: 0.0,
        prefer_all: opts.analyze.prefer_all.filter(|s| *s != Scenario::S3TailSplit),
        prefer: opts
            .analyze
            .prefer
            .iter()
            .filter(|(_, s)| **s != Scenario::S3TailSplit)
            .map(|(k, s)| (k.clone(), *s))
            .collect(),
    };
    let residual = analyze(model.deployable(), p, rules, &residual_opts)?;
    Ok(ConversionResult {
        model,
        applied,
        custom_ops,
        report,
        residual,
    })
}
