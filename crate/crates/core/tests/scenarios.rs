//! End-to-end behaviour of analysis, rewriting and splitting on the shipped
//! fixture models.

use std::collections::BTreeSet;

use retarget_core::analyzer::{analyze, AnalyzeOptions, Scenario};
use retarget_core::fixtures::{deconv_nonoverlapping, deconv_overlapping, fixture, sub_const, tail_skip};
use retarget_core::harness::{diff_graphs, diff_split, random_inputs, run_split, DEFAULT_TOLERANCE};
use retarget_core::interpreter::run_graph;
use retarget_core::ir::{infer_shapes, OpKind, TensorSpec};
use retarget_core::profiles::builtin;
use retarget_core::rewriter::{
    apply_rule, convert, defuse, emit_custom_manifest, split_tail, ConvertOptions, ConvertedModel, RewriteError,
    RuleRegistry, SubConstToAdd,
};

fn seeds(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn ops(g: &retarget_core::ir::Graph) -> Vec<&str> {
    g.nodes().iter().map(|n| n.op_type.as_str()).collect()
}

#[test]
fn const_sub_sub_is_substituted() {
    let g = sub_const();
    let p = builtin("mobile-strict").unwrap();
    let r = analyze(&g, &p, &RuleRegistry::shipped(), &AnalyzeOptions::default()).unwrap();
    assert_eq!(r.unsupported.len(), 1);
    let a = &r.unsupported[0];
    assert_eq!((a.node_id.as_str(), a.scenario), ("sub_mean", Scenario::S1Substitute));
    assert_eq!(a.rule_id.as_deref(), Some("sub_const_to_add"));

    let rw = apply_rule(&g, "sub_mean", &SubConstToAdd).unwrap();
    assert!(!ops(&rw.graph).contains(&"Sub"));
    assert_eq!(rw.graph.nodes().len(), g.nodes().len());
    let d = diff_graphs(&g, &rw.graph, 20, DEFAULT_TOLERANCE, 0).unwrap();
    assert!(d.pass, "{d:?}");
}

#[test]
fn tail_skip_nodes_are_s3() {
    let g = tail_skip();
    let p = builtin("mobile-strict").unwrap();
    let r = analyze(&g, &p, &RuleRegistry::shipped(), &AnalyzeOptions::default()).unwrap();
    let got: Vec<(&str, Scenario)> = r.unsupported.iter().map(|a| (a.node_id.as_str(), a.scenario)).collect();
    assert_eq!(
        got,
        [("softmax", Scenario::S3TailSplit), ("sub_prior", Scenario::S3TailSplit)]
    );
    assert!(r.unsupported.iter().all(|a| a.rule_id.is_none()));
}

#[test]
fn tail_split_cuts_at_skip() {
    let g = tail_skip();
    let tnn = builtin("tnn").unwrap();
    let s = split_tail(&g, &seeds(&["softmax", "sub_prior"]), &tnn).unwrap();
    let cut: Vec<&str> = s.cut_tensors.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(cut, ["logits", "skip"]);
    let post: BTreeSet<&str> = s.postprocess.nodes().iter().map(|n| n.id.as_str()).collect();
    assert_eq!(post, BTreeSet::from(["softmax", "sub_prior", "gate"]));
    assert_eq!(s.prefix.outputs().len(), 1);
    assert_eq!(s.fused_output_name.as_deref(), Some(s.prefix.outputs()[0].as_str()));

    // partition: original nodes split exactly once; the prefix only adds fusion nodes
    let original: BTreeSet<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    let prefix: BTreeSet<&str> = s.prefix.nodes().iter().map(|n| n.id.as_str()).collect();
    assert!(prefix.is_disjoint(&post));
    let covered: BTreeSet<&str> = prefix.intersection(&original).chain(&post).copied().collect();
    assert_eq!(covered, original);
    let extra: Vec<&str> = s
        .prefix
        .nodes()
        .iter()
        .filter(|n| !original.contains(n.id.as_str()))
        .map(|n| n.op_type.as_str())
        .collect();
    assert_eq!(extra, ["Flatten", "Flatten", "Concat"]);

    let d = diff_split(&g, &s, 20, DEFAULT_TOLERANCE, 4).unwrap();
    assert!(d.pass, "{d:?}");

    // the fused vector splits back into the exact cut tensors
    let x = random_inputs(g.inputs(), 9, 0);
    let unfused = split_tail(&g, &seeds(&["softmax", "sub_prior"]), &builtin("full").unwrap()).unwrap();
    assert!(unfused.fused_output_name.is_none());
    let direct = run_graph(&unfused.prefix, &x).unwrap();
    let fused = run_graph(&s.prefix, &x).unwrap();
    let back = defuse(&s.fusion_manifest, &fused[s.fused_output_name.as_ref().unwrap()]).unwrap();
    assert_eq!(back, direct);
    assert_eq!(run_split(&s, &x).unwrap(), run_graph(&g, &x).unwrap());
}

#[test]
fn corrupted_manifest_is_caught() {
    let g = tail_skip();
    let mut s = split_tail(&g, &seeds(&["softmax"]), &builtin("tnn").unwrap()).unwrap();
    s.fusion_manifest[1].flat_offset -= 1;
    match diff_split(&g, &s, 2, DEFAULT_TOLERANCE, 0) {
        Ok(d) => assert!(!d.pass),
        Err(e) => assert!(e.to_string().contains("fusion"), "{e}"),
    }
    let mut s = split_tail(&g, &seeds(&["softmax"]), &builtin("tnn").unwrap()).unwrap();
    s.fusion_manifest[0].flat_length += 1;
    assert!(diff_split(&g, &s, 2, DEFAULT_TOLERANCE, 0).is_err());
}

#[test]
fn deconv_structural_rewrite() {
    let g = deconv_overlapping();
    let p = builtin("mobile-strict").unwrap();
    let r = analyze(&g, &p, &RuleRegistry::shipped(), &AnalyzeOptions::default()).unwrap();
    assert_eq!(r.unsupported.len(), 1);
    assert_eq!(r.unsupported[0].scenario, Scenario::S2RetrainRewrite);
    assert_eq!(r.unsupported[0].rule_id.as_deref(), Some("convtranspose_structural"));

    let c = convert(&g, &p, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    assert!(c.retraining_required());
    let ConvertedModel::Graph(out) = &c.model else {
        panic!("no split expected")
    };
    assert_eq!(infer_shapes(&g).unwrap()["out"], infer_shapes(out).unwrap()["out"]);
    assert!(c.residual.deployable_as_is);
}

#[test]
fn deconv_exact_rewrite_is_equivalent() {
    let g = deconv_nonoverlapping();
    let p = builtin("mobile-strict").unwrap();
    let c = convert(&g, &p, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    assert_eq!(c.applied.len(), 1);
    assert_eq!(c.applied[0].rule_id, "convtranspose_exact_nonoverlap");
    assert!(!c.retraining_required());
    let d = diff_graphs(&g, c.model.deployable(), 20, DEFAULT_TOLERANCE, 1).unwrap();
    assert!(d.pass, "{d:?}");
}

#[test]
fn composite_converts_to_supported_prefix() {
    let g = fixture("composite");
    let p = builtin("mobile-strict").unwrap();
    let c = convert(&g, &p, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    let ConvertedModel::Split(s) = &c.model else {
        panic!("expected a split")
    };
    assert!(s.prefix.nodes().iter().all(|n| p.supports(n)), "{:?}", ops(&s.prefix));
    assert!(c.residual.deployable_as_is, "{:?}", c.residual);
    let applied: Vec<&str> = c.applied.iter().map(|a| a.rule_id.as_str()).collect();
    assert_eq!(applied, ["sub_const_to_add", "convtranspose_exact_nonoverlap"]);
    let d = diff_split(&g, s, 20, DEFAULT_TOLERANCE, 2).unwrap();
    assert!(d.pass, "{d:?}");
}

#[test]
fn deployable_graph_is_untouched() {
    let g = sub_const();
    let c = convert(
        &g,
        &builtin("full").unwrap(),
        &RuleRegistry::shipped(),
        &ConvertOptions::default(),
    )
    .unwrap();
    assert!(c.report.deployable_as_is);
    assert!(c.applied.is_empty());
    assert_eq!(c.model, ConvertedModel::Graph(g));
}

#[test]
fn custom_ops_need_manifest() {
    let g = fixture("custom_warp");
    for name in ["tnn", "mobile-strict", "full"] {
        let p = builtin(name).unwrap();
        let r = analyze(&g, &p, &RuleRegistry::shipped(), &AnalyzeOptions::default()).unwrap();
        assert_eq!(r.unsupported.len(), 2);
        assert!(r.unsupported.iter().all(|a| a.scenario == Scenario::S4CustomOp));
        let m = emit_custom_manifest(&g, &r, "baseline").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].op_type, "Custom:warp");
        assert_eq!(m[0].occurrences.len(), 2);
        assert_eq!(m[0].required_in, ["baseline", name]);
    }
    let r = analyze(
        &sub_const(),
        &builtin("full").unwrap(),
        &RuleRegistry::shipped(),
        &AnalyzeOptions::default(),
    )
    .unwrap();
    assert!(emit_custom_manifest(&sub_const(), &r, "baseline").unwrap().is_empty());
}

#[test]
fn forced_split_of_whole_graph_suggests_custom_op() {
    let g = retarget_core::ir::Graph::new(retarget_core::ir::GraphParts {
        name: "lonely".into(),
        inputs: vec![TensorSpec::f32("x", vec![4])],
        outputs: vec!["y".into()],
        initializers: vec![],
        nodes: vec![retarget_core::ir::Node::new("sm", "Softmax", ["x"], ["y"])],
    })
    .unwrap();
    let p = builtin("mobile-strict").unwrap();
    let mut opts = ConvertOptions::default();
    opts.analyze.prefer.insert("sm".into(), Scenario::S3TailSplit);
    let err = convert(&g, &p, &RuleRegistry::shipped(), &opts).unwrap_err();
    assert!(matches!(err, RewriteError::Split(_)));
    assert!(err.to_string().contains("closure covers all nodes"));
    assert!(err.to_string().contains("S4"));
    // without the override it is simply a custom op
    let c = convert(&g, &p, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    assert_eq!(c.custom_ops.len(), 1);
    assert_eq!(c.residual.unsupported[0].scenario, Scenario::S4CustomOp);
}

#[test]
fn tnn_flags_cast_and_dropout_only() {
    let g = fixture("cast_dropout");
    let tnn = builtin("tnn").unwrap();
    let r = analyze(&g, &tnn, &RuleRegistry::shipped(), &AnalyzeOptions::default()).unwrap();
    let got: Vec<(&str, Option<&str>)> = r
        .unsupported
        .iter()
        .map(|a| (a.op_type.as_str(), a.rule_id.as_deref()))
        .collect();
    assert_eq!(
        got,
        [("Dropout", Some("dropout_drop")), ("Cast", Some("cast_noop_drop"))]
    );
    let c = convert(&g, &tnn, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    let out = c.model.deployable();
    assert!(out
        .nodes()
        .iter()
        .all(|n| !n.is(OpKind::Cast) && !n.is(OpKind::Dropout)));
    let d = diff_graphs(&g, out, 20, 0.0, 3).unwrap();
    assert!(d.pass);
    assert_eq!(d.max_abs_diff(), 0.0);
}

#[test]
fn chained_identities_between_input_and_output_leave_one_behind() {
    use retarget_core::ir::{AttrValue, Graph, GraphParts, Node};
    let g = Graph::new(GraphParts {
        name: "chain".into(),
        inputs: vec![TensorSpec::f32("x", vec![3])],
        outputs: vec!["y".into()],
        initializers: vec![],
        nodes: vec![
            Node::new("dropout", "Dropout", ["x"], ["h"]),
            Node::new("cast", "Cast", ["h"], ["y"]).with_attr("to", AttrValue::Str("float32".into())),
        ],
    })
    .unwrap();
    let tnn = builtin("tnn").unwrap();
    let c = convert(&g, &tnn, &RuleRegistry::shipped(), &ConvertOptions::default()).unwrap();
    // each node matches on its own, but once one is gone the other joins x to y
    assert_eq!(c.report.unsupported.len(), 2);
    assert_eq!(c.applied.len(), 1);
    assert!(!c.residual.deployable_as_is);
    assert_eq!(c.residual.unsupported.len(), 1);
    assert_eq!(c.model.deployable().nodes().len(), 1);
    let d = diff_graphs(&g, c.model.deployable(), 5, 0.0, 0).unwrap();
    assert!(d.pass);
}
