//! Compatibility analysis of a graph against a capability profile.
//!
//! Every node the profile does not support is assigned one scenario:
//!
//! * `S1_substitute`: a semantics-preserving rule rewrites it into supported ops.
//! * `S2_retrain_rewrite`: a structural rewrite exists; weights may need retraining.
//! * `S3_tail_split`: the node and everything after it move to post-processing.
//! * `S4_custom_op`: nothing applies; the op must be implemented on both sides.
//!
//! The default priority is S1 > S3 > S2 > S4. Any unsupported node that ends up
//! downstream of an S3 node is moved to S3 as well, since the split takes it
//! along regardless.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ir::{infer_shapes, Graph, IrError, Node, Producer};
use crate::profiles::CapabilityProfile;
use crate::rewriter::{RewriteRule, RuleRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "S1_substitute")]
    S1Substitute,
    #[serde(rename = "S2_retrain_rewrite")]
    S2RetrainRewrite,
    #[serde(rename = "S3_tail_split")]
    S3TailSplit,
    #[serde(rename = "S4_custom_op")]
    S4CustomOp,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1Substitute => "S1_substitute",
            Scenario::S2RetrainRewrite => "S2_retrain_rewrite",
            Scenario::S3TailSplit => "S3_tail_split",
            Scenario::S4CustomOp => "S4_custom_op",
        }
    }

    pub fn short(self) -> &'static str {
        &self.as_str()[..2]
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    /// Accepts `S1`..`S4` or the full names, case-insensitively.
    fn from_str(s: &str) -> Result<Self, String> {
        let all = [
            Scenario::S1Substitute,
            Scenario::S2RetrainRewrite,
            Scenario::S3TailSplit,
            Scenario::S4CustomOp,
        ];
        all.into_iter()
            .find(|sc| s.eq_ignore_ascii_case(sc.short()) || s.eq_ignore_ascii_case(sc.as_str()))
            .ok_or_else(|| format!("unknown scenario '{s}' (expected S1, S2, S3 or S4)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioAssignment {
    pub node_id: String,
    pub op_type: String,
    pub rationale: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule_id: Option<String>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub deployable_as_is: bool,
    pub profile_name: String,
    pub structural_violations: Vec<String>,
    pub unsupported: Vec<ScenarioAssignment>,
}

impl CompatibilityReport {
    pub fn nodes_in(&self, scenario: Scenario) -> impl Iterator<Item = &ScenarioAssignment> {
        self.unsupported.iter().filter(move |a| a.scenario == scenario)
    }

    pub fn assignment(&self, node_id: &str) -> Option<&ScenarioAssignment> {
        self.unsupported.iter().find(|a| a.node_id == node_id)
    }
}

pub const DEFAULT_TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    /// Largest share of the graph's nodes a tail may hold.
    pub tail_fraction: f64,
    /// Preferred scenario for every unsupported node.
    pub prefer_all: Option<Scenario>,
    /// Per-node preference; overrides `prefer_all`.
    pub prefer: BTreeMap<String, Scenario>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            tail_fraction: DEFAULT_TAIL_FRACTION,
            prefer_all: None,
            prefer: BTreeMap::new(),
        }
    }
}

fn first_rule<'r>(
    g: &Graph,
    node: &Node,
    p: &CapabilityProfile,
    rules: &'r RuleRegistry,
    scenario: Scenario,
) -> Option<&'r dyn RewriteRule> {
    rules.iter().find(|r| {
        r.scenario() == scenario
            && r.matches(g, node).is_ok()
            && r.replacement_ops(g, node).iter().all(|op| p.supports_op(op))
    })
}

/// Why `idx` cannot head a tail split, or `None` if it can.
pub fn tail_blocker(g: &Graph, idx: usize, tail_fraction: f64) -> Option<String> {
    let closure = g.descendant_closure(&[idx]);
    let n = g.nodes().len();
    if closure.len() == n {
        return Some("its downstream closure is the whole graph".into());
    }
    if closure.len() as f64 > tail_fraction * n as f64 {
        return Some(format!(
            "its downstream closure holds {} of {n} nodes, above the tail limit of {tail_fraction}",
            closure.len()
        ));
    }
    for &i in &closure {
        if let Some(inp) = g.nodes()[i]
            .inputs
            .iter()
            .find(|v| matches!(g.producer(v), Some(Producer::Input(_))))
        {
            return Some(format!(
                "node '{}' in its closure reads graph input '{inp}'",
                g.nodes()[i].id
            ));
        }
    }
    None
}

pub fn structural_violations(g: &Graph, p: &CapabilityProfile) -> Vec<String> {
    let mut v = Vec::new();
    if p.single_output_only && g.outputs().len() > 1 {
        v.push(format!(
            "graph has {} outputs but profile '{}' accepts a single output",
            g.outputs().len(),
            p.name
        ));
    }
    if let Some(cap) = p.max_input_pixels {
        for spec in g.inputs().iter().filter(|s| s.shape.len() == 4) {
            let pixels = (spec.shape[2] * spec.shape[3]) as u64;
            if pixels > cap {
                v.push(format!(
                    "input '{}' is {}x{} = {pixels} pixels, above the cap of {cap}",
                    spec.name, spec.shape[2], spec.shape[3]
                ));
            }
        }
    }
    v
}

/// Classify every unsupported node of `g` under `p`.
pub fn analyze(
    g: &Graph,
    p: &CapabilityProfile,
    rules: &RuleRegistry,
    opts: &AnalyzeOptions,
) -> Result<CompatibilityReport, IrError> {
    infer_shapes(g)?;
    let mut unsupported = Vec::new();
    for &idx in g.topo_order() {
        let node = &g.nodes()[idx];
        if p.supports(node) {
            continue;
        }
        unsupported.push((idx, classify(g, idx, p, rules, opts)));
    }

    let seeds: Vec<usize> = unsupported
        .iter()
        .filter(|(_, a)| a.scenario == Scenario::S3TailSplit)
        .map(|(i, _)| *i)
        .collect();
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in &seeds {
        for i in g.descendant_closure(&[s]) {
            owner.entry(i).or_insert(s);
        }
    }
    let seed_set: HashSet<usize> = seeds.iter().copied().collect();
    for (idx, a) in &mut unsupported {
        if seed_set.contains(idx) {
            continue;
        }
        if let Some(&s) = owner.get(idx) {
            a.rationale = format!(
                "downstream of tail node '{}', moves to post-processing with it (was {}: {})",
                g.nodes()[s].id,
                a.scenario.short(),
                a.rationale
            );
            a.scenario = Scenario::S3TailSplit;
            a.rule_id = None;
        }
    }

    let unsupported: Vec<ScenarioAssignment> = unsupported.into_iter().map(|(_, a)| a).collect();
    let structural_violations = structural_violations(g, p);
    Ok(CompatibilityReport {
        deployable_as_is: unsupported.is_empty() && structural_violations.is_empty(),
        profile_name: p.name.clone(),
        structural_violations,
        unsupported,
    })
}

fn classify(
    g: &Graph,
    idx: usize,
    p: &CapabilityProfile,
    rules: &RuleRegistry,
    opts: &AnalyzeOptions,
) -> ScenarioAssignment {
    let node = &g.nodes()[idx];
    let s1 = first_rule(g, node, p, rules, Scenario::S1Substitute);
    let s2 = first_rule(g, node, p, rules, Scenario::S2RetrainRewrite);
    let tail = tail_blocker(g, idx, opts.tail_fraction);
    let assign = |scenario: Scenario, rule: Option<&dyn RewriteRule>, rationale: String| ScenarioAssignment {
        node_id: node.id.clone(),
        op_type: node.op_type.clone(),
        rationale,
        rule_id: rule.map(|r| r.id().to_string()),
        scenario,
    };

    let preferred = opts.prefer.get(&node.id).copied().or(opts.prefer_all);
    let mut fallback_note = String::new();
    if let Some(pref) = preferred {
        match pref {
            Scenario::S1Substitute if s1.is_some() => return assign(pref, s1, "preferred S1; rule matches".into()),
            Scenario::S2RetrainRewrite if s2.is_some() => {
                let rule = s2.expect("checked");
                return assign(
                    pref,
                    s2,
                    format!("preferred S2; retraining required: {}", rule.retraining_required()),
                );
            }
            Scenario::S3TailSplit | Scenario::S4CustomOp => {
                return assign(pref, None, format!("preferred {}", pref.short()))
            }
            _ => fallback_note = format!("preferred {} does not apply; ", pref.short()),
        }
    }

    if let Some(rule) = s1 {
        let policy = if tail.is_none() {
            "; also tail-eligible, S1 chosen by the S1 > S3 > S2 > S4 policy"
        } else {
            ""
        };
        return assign(
            Scenario::S1Substitute,
            s1,
            format!(
                "{fallback_note}rule '{}' rewrites it into supported ops{policy}",
                rule.id()
            ),
        );
    }
    let Some(reason) = tail else {
        return assign(
            Scenario::S3TailSplit,
            None,
            format!("{fallback_note}no substitution rule; node heads a removable tail"),
        );
    };
    if let Some(rule) = s2 {
        return assign(
            Scenario::S2RetrainRewrite,
            s2,
            format!(
                "{fallback_note}rule '{}' applies (retraining required: {}); not a tail: {reason}",
                rule.id(),
                rule.retraining_required()
            ),
        );
    }
    assign(
        Scenario::S4CustomOp,
        None,
        format!("{fallback_note}no rule applies and not a tail: {reason}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphParts, Initializer, TensorSpec};
    use crate::profiles::builtin;

    #[test]
    fn scenario_parsing() {
        assert_eq!("s3".parse::<Scenario>().unwrap(), Scenario::S3TailSplit);
        assert_eq!("S1_substitute".parse::<Scenario>().unwrap(), Scenario::S1Substitute);
        assert!("S5".parse::<Scenario>().is_err());
        assert_eq!(
            serde_json::to_string(&Scenario::S4CustomOp).unwrap(),
            "\"S4_custom_op\""
        );
    }

    fn sub_tail() -> Graph {
        // four Relus then a Sub on the last one
        let mut nodes: Vec<Node> = (0..4)
            .map(|i| {
                let src = if i == 0 { "x".to_string() } else { format!("h{}", i - 1) };
                Node::new(format!("r{i}"), "Relu", [src], [format!("h{i}")])
            })
            .collect();
        nodes.push(Node::new("s", "Sub", ["h3", "c"], ["y"]));
        Graph::new(GraphParts {
            name: "t".into(),
            inputs: vec![TensorSpec::f32("x", vec![2])],
            outputs: vec!["y".into()],
            initializers: vec![Initializer::f32("c", vec![1], vec![1.0])],
            nodes,
        })
        .unwrap()
    }

    #[test]
    fn s1_beats_s3_and_says_so() {
        let g = sub_tail();
        let r = analyze(
            &g,
            &builtin("mobile-strict").unwrap(),
            &RuleRegistry::shipped(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.unsupported.len(), 1);
        let a = &r.unsupported[0];
        assert_eq!(a.scenario, Scenario::S1Substitute);
        assert_eq!(a.rule_id.as_deref(), Some("sub_const_to_add"));
        assert!(a.rationale.contains("policy"), "{}", a.rationale);
        assert!(!r.deployable_as_is);
    }

    #[test]
    fn preference_overrides() {
        let g = sub_tail();
        let p = builtin("mobile-strict").unwrap();
        let mut opts = AnalyzeOptions::default();
        opts.prefer.insert("s".into(), Scenario::S3TailSplit);
        let r = analyze(&g, &p, &RuleRegistry::shipped(), &opts).unwrap();
        assert_eq!(r.unsupported[0].scenario, Scenario::S3TailSplit);
        assert_eq!(r.unsupported[0].rule_id, None);
        // S2 does not apply to a Sub: fall back to the policy
        opts.prefer.insert("s".into(), Scenario::S2RetrainRewrite);
        let r = analyze(&g, &p, &RuleRegistry::shipped(), &opts).unwrap();
        assert_eq!(r.unsupported[0].scenario, Scenario::S1Substitute);
        assert!(r.unsupported[0].rationale.starts_with("preferred S2 does not apply"));
    }

    #[test]
    fn without_rules_tail_wins() {
        let g = sub_tail();
        let r = analyze(
            &g,
            &builtin("mobile-strict").unwrap(),
            &RuleRegistry::empty(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.unsupported[0].scenario, Scenario::S3TailSplit);
        let opts = AnalyzeOptions {
            tail_fraction: 0.0,
            ..Default::default()
        };
        let r = analyze(&g, &builtin("mobile-strict").unwrap(), &RuleRegistry::empty(), &opts).unwrap();
        assert_eq!(r.unsupported[0].scenario, Scenario::S4CustomOp);
    }

    #[test]
    fn structural_checks() {
        let g = Graph::new(GraphParts {
            name: "big".into(),
            inputs: vec![
                TensorSpec::f32("img", vec![1, 3, 2048, 1024]),
                TensorSpec::f32("v", vec![5]),
            ],
            outputs: vec!["img".into(), "v".into()],
            ..Default::default()
        })
        .unwrap();
        let strict = structural_violations(&g, &builtin("mobile-strict").unwrap());
        assert_eq!(strict.len(), 1);
        assert!(strict[0].contains("2097152 pixels"));
        let tnn = structural_violations(&g, &builtin("tnn").unwrap());
        assert_eq!(tnn.len(), 1);
        assert!(tnn[0].contains("single output"));
        assert!(structural_violations(&g, &builtin("full").unwrap()).is_empty());
    }
}
